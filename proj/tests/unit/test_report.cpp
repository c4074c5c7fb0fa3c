// Copyright 2026 The ldmrb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "ldmrb/error.hpp"
#include "ldmrb/image.hpp"
#include "ldmrb/report.hpp"
#include "synthetic.hpp"

namespace ldmrb {
namespace {

const std::filesystem::path kFixtures = LDMRB_FIXTURE_DIR;

ReportBundle table1() {
  auto b = parse_report(testing::read_file(kFixtures / "table1.csv"), ReportFormat::Csv);
  b.plan_hash = "fixture";
  return b;
}

std::set<std::pair<std::size_t, int>> printed_bold() {
  std::ifstream in(kFixtures / "table1_bold.txt");
  std::set<std::pair<std::size_t, int>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t row;
    std::string col;
    ss >> row >> col;
    for (int c = 0; c < 6; ++c)
      if (col == kMetricColumns[c]) out.emplace(row, c);
  }
  return out;
}

// Bitwise equality that treats NaN cells as equal.
bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void expect_same_rows(const ReportBundle& a, const ReportBundle& b) {
  ASSERT_EQ(a.results.size(), b.results.size());
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    const auto& x = a.results[i];
    const auto& y = b.results[i];
    EXPECT_EQ(x.transfer, y.transfer);
    EXPECT_EQ(x.source, y.source);
    EXPECT_EQ(x.model, y.model);
    EXPECT_EQ(x.condition, y.condition);
    for (int c = 0; c < 6; ++c)
      EXPECT_TRUE(same_number(metric_value(x.report, c), metric_value(y.report, c)))
          << x.condition << " " << kMetricColumns[c] << ": " << metric_value(x.report, c) << " vs "
          << metric_value(y.report, c);
  }
}

TEST(Report, FixtureParsesAsPrinted) {
  const auto b = table1();
  ASSERT_EQ(b.results.size(), 10u);
  EXPECT_EQ(b.results[2].condition, "Resnet");
  EXPECT_EQ(b.results[2].report.clip, 29.89);
  EXPECT_TRUE(std::isinf(b.results[9].report.psnr));
  EXPECT_EQ(b.results[9].report.ssim, 1.0);
  EXPECT_EQ(b.results[6].report.is_score, 17.0);
}

TEST(Report, RoundTripsThroughEveryFormat) {
  const auto original = table1();
  for (auto f : {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown}) {
    const auto text = render_report(original, f);
    const auto back = parse_report(text, f);
    expect_same_rows(original, back);
    EXPECT_EQ(render_report(back, f), text);
  }
}

TEST(Report, BoldingMatchesPrintedTable) {
  const auto b = table1();
  EXPECT_EQ(bold_cells(b.results), printed_bold());
  const auto md = render_report(b, ReportFormat::Markdown);
  EXPECT_EQ(parse_markdown_bold(md), printed_bold());
  EXPECT_NE(md.find("| Resnet | **29.89** |"), std::string::npos);
  EXPECT_NE(md.find("| Benign | 34.74 | ∞ |"), std::string::npos);
}

TEST(Report, ColumnOrder) {
  const auto csv = render_report(table1(), ReportFormat::Csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "transfer,source,model,condition,dataset,CLIP,PSNR,SSIM,MSSSIM,FID,IS");
  const auto md = render_report(table1(), ReportFormat::Markdown);
  EXPECT_NE(md.find("| Module | CLIP | PSNR | SSIM | MSSSIM | FID | IS |"), std::string::npos);
}

TEST(Report, TiesAreAllBold) {
  auto b = table1();
  b.results[0].report.clip = 29.89;
  const auto bold = bold_cells(b.results);
  EXPECT_TRUE(bold.contains({0, 0}));
  EXPECT_TRUE(bold.contains({2, 0}));
}

TEST(Report, GroupsCompeteSeparately) {
  auto b = table1();
  auto other = b.results;
  for (auto& r : other) {
    r.model = "SD-v2-1";
    r.report.clip += 1.0;
  }
  b.results.insert(b.results.end(), other.begin(), other.end());
  const auto bold = bold_cells(b.results);
  EXPECT_TRUE(bold.contains({2, 0}));
  EXPECT_TRUE(bold.contains({12, 0}));
  const auto md = render_report(b, ReportFormat::Markdown);
  EXPECT_EQ(parse_markdown_bold(md), bold);
}

TEST(Report, DefenseTablesAreGroupedPerDefense) {
  ReportBundle b;
  b.plan_hash = "x";
  const char* defenses[] = {"R&P", "JPEG"};
  const char* modules[] = {"Encoding", "Unet", "Benign"};
  double v = 30.0;
  for (const char* d : defenses)
    for (const char* m : modules) {
      ConditionResult r;
      r.transfer = "defense";
      r.source = r.model = "SD-v1-5";
      r.condition = std::string(d) + "/" + m;
      r.report.clip = v;
      v -= 1.0;
      b.results.push_back(r);
    }
  const auto bold = bold_cells(b.results);
  EXPECT_TRUE(bold.contains({1, 0}));  // R&P/Unet
  EXPECT_TRUE(bold.contains({4, 0}));  // JPEG/Unet
  EXPECT_FALSE(bold.contains({5, 0}));  // benign rows never compete
  const auto md = render_report(b, ReportFormat::Markdown);
  EXPECT_NE(md.find("## defense R&P: source `SD-v1-5`, model `SD-v1-5`"), std::string::npos);
  expect_same_rows(b, parse_report(md, ReportFormat::Markdown));
}

TEST(Report, TransferMatrixFixture) {
  TransferMatrix m;
  m.sources = {"SD-v1-5"};
  m.targets = {"SD-v1-5", "SD-v2-1"};
  m.modules = {"Unet"};
  m.cells.assign(1, std::vector<std::vector<TransferCell>>(2, std::vector<TransferCell>(1)));
  m.cells[0][0][0].available = true;
  m.cells[0][0][0].result.report.clip = 24.51;
  m.cells[0][1][0].available = true;
  m.cells[0][1][0].result.report.clip = 28.48;
  ReportBundle b{"x", table1().results, {m}};
  const auto json = render_report(b, ReportFormat::Json);
  const auto back = parse_report(json, ReportFormat::Json);
  ASSERT_EQ(back.matrices.size(), 1u);
  EXPECT_EQ(back.matrices[0].cells[0][1][0].result.report.clip, 28.48);
  EXPECT_EQ(back.matrices[0].targets, m.targets);
  EXPECT_NE(render_report(b, ReportFormat::Markdown).find("| SD-v1-5 | Unet | **24.51** | **28.48** |"),
            std::string::npos);
}

TEST(Report, EmptyResultsAreAnError) {
  ReportBundle empty;
  EXPECT_THROW(render_report(empty, ReportFormat::Csv), Error);
  EXPECT_THROW(write_report(testing::scratch_dir("report_empty"), empty), Error);
}

TEST(Report, Numbers) {
  EXPECT_EQ(format_number(0.1, ReportFormat::Csv), "0.1");
  EXPECT_EQ(format_number(kInf, ReportFormat::Csv), "inf");
  EXPECT_EQ(format_number(kInf, ReportFormat::Markdown), "∞");
  EXPECT_EQ(format_number(std::nan(""), ReportFormat::Csv), "");
  EXPECT_EQ(parse_number("∞"), kInf);
  EXPECT_TRUE(std::isnan(parse_number("")));
  EXPECT_EQ(parse_number("206.3"), 206.3);
  EXPECT_THROW(parse_number("12x"), Error);
  const double awkward = 0.1 + 0.2;
  EXPECT_EQ(parse_number(format_number(awkward, ReportFormat::Csv)), awkward);
}

TEST(Report, CsvQuoting) {
  auto b = table1();
  b.results[0].condition = "R&P, \"strong\"";
  const auto back = parse_report(render_report(b, ReportFormat::Csv), ReportFormat::Csv);
  EXPECT_EQ(back.results[0].condition, b.results[0].condition);
}

TEST(Report, LossPlot) {
  const auto path = testing::scratch_dir("plot") / "p" / "loss.png";
  write_loss_plot(path, {{1.0, 2.0, 3.0}, {0.5, 2.5, 2.0}});
  const auto img = read_png(path);
  EXPECT_EQ(img.width(), 320);
  EXPECT_EQ(img.height(), 200);
  int red = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(y, x, 0) > 0.8 && img.at(y, x, 1) < 0.2) ++red;
  EXPECT_GT(red, 50);
}

}  // namespace
}  // namespace ldmrb
