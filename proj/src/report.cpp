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

#include "ldmrb/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldmrb/error.hpp"

namespace ldmrb {

namespace {

constexpr const char* kInfMarkdown = "∞";
constexpr bool kLowerIsStronger[6] = {true, true, true, true, false, true};

std::vector<std::vector<std::size_t>> grouped_rows(const std::vector<ConditionResult>& results) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto g = results[i].group();
    if (!rows.contains(g)) order.push_back(g);
    rows[g].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (const auto& g : order) out.push_back(rows[g]);
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_md_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string t = trim(line);
  if (t.size() < 2 || t.front() != '|' || t.back() != '|') return cells;
  t = t.substr(1, t.size() - 2);
  std::size_t start = 0;
  while (true) {
    const auto bar = t.find('|', start);
    cells.push_back(trim(std::string_view(t).substr(start, bar == std::string::npos ? std::string::npos : bar - start)));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return cells;
}

std::string heading(const ConditionResult& r) {
  std::string kind = r.transfer;
  if (r.transfer == "defense") kind += " " + r.condition.substr(0, r.condition.find('/'));
  return "## " + kind + ": source `" + r.source + "`, model `" + r.model + "`";
}

nlohmann::json number_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return parse_number(j.get<std::string>());
  return j.get<double>();
}

}  // namespace

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::Csv;
  if (text == "json") return ReportFormat::Json;
  if (text == "md" || text == "markdown") return ReportFormat::Markdown;
  fail(ErrorCode::InvalidArgument, "unknown report format '" + std::string(text) + "'");
}

std::string format_number(double value, ReportFormat format) {
  if (std::isnan(value)) return format == ReportFormat::Markdown ? "-" : "";
  if (std::isinf(value)) {
    if (format == ReportFormat::Markdown) return value > 0 ? kInfMarkdown : std::string("-") + kInfMarkdown;
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty() || t == "-" || t == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf" || t == kInfMarkdown || t == "$\\infty$") return std::numeric_limits<double>::infinity();
  if (t == "-inf" || t == std::string("-") + kInfMarkdown) return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    fail(ErrorCode::InvalidArgument, "not a number: '" + t + "'");
  return v;
}

std::set<std::pair<std::size_t, int>> bold_cells(const std::vector<ConditionResult>& results) {
  std::set<std::pair<std::size_t, int>> out;
  for (const auto& rows : grouped_rows(results)) {
    for (int col = 0; col < 6; ++col) {
      std::optional<double> best;
      for (std::size_t r : rows) {
        if (!results[r].is_attack_row()) continue;
        const double v = metric_value(results[r].report, col);
        if (std::isnan(v)) continue;
        if (!best || (kLowerIsStronger[col] ? v < *best : v > *best)) best = v;
      }
      if (!best) continue;
      for (std::size_t r : rows)
        if (results[r].is_attack_row() && metric_value(results[r].report, col) == *best) out.emplace(r, col);
    }
  }
  return out;
}

std::string render_report(const ReportBundle& bundle, ReportFormat format) {
  require(!bundle.results.empty(), ErrorCode::EmptyInput, "render_report: no results");
  std::ostringstream out;
  switch (format) {
    case ReportFormat::Csv: {
      out << "transfer,source,model,condition,dataset";
      for (const char* c : kMetricColumns) out << ',' << c;
      out << '\n';
      for (const auto& r : bundle.results) {
        out << csv_field(r.transfer) << ',' << csv_field(r.source) << ',' << csv_field(r.model) << ','
            << csv_field(r.condition) << ',' << csv_field(r.report.dataset);
        for (int c = 0; c < 6; ++c) out << ',' << format_number(metric_value(r.report, c), format);
        out << '\n';
      }
      break;
    }
    case ReportFormat::Json: {
      nlohmann::ordered_json j;
      j["plan_hash"] = bundle.plan_hash;
      j["results"] = nlohmann::ordered_json::array();
      for (const auto& r : bundle.results) {
        nlohmann::ordered_json row;
        row["transfer"] = r.transfer;
        row["source"] = r.source;
        row["model"] = r.model;
        row["condition"] = r.condition;
        row["dataset"] = r.report.dataset;
        for (int c = 0; c < 6; ++c) row[kMetricColumns[c]] = number_json(metric_value(r.report, c));
        row["items"] = r.items.size();
        row["skipped"] = r.skipped.size();
        nlohmann::ordered_json fl = nlohmann::ordered_json::object();
        for (const auto& [m, v] : r.feature_loss) fl[m] = number_json(v);
        row["feature_loss"] = fl;
        j["results"].push_back(row);
      }
      j["transfer_matrices"] = nlohmann::ordered_json::array();
      for (const auto& m : bundle.matrices) {
        nlohmann::ordered_json mj;
        mj["sources"] = m.sources;
        mj["targets"] = m.targets;
        mj["modules"] = m.modules;
        mj["cells"] = nlohmann::ordered_json::array();
        for (std::size_t s = 0; s < m.sources.size(); ++s)
          for (std::size_t t = 0; t < m.targets.size(); ++t)
            for (std::size_t k = 0; k < m.modules.size(); ++k) {
              const auto& cell = m.cells[s][t][k];
              nlohmann::ordered_json cj;
              cj["source"] = m.sources[s];
              cj["target"] = m.targets[t];
              cj["module"] = m.modules[k];
              cj["available"] = cell.available;
              if (cell.available) {
                cj["CLIP"] = number_json(cell.result.report.clip);
              } else {
                cj["reason"] = cell.reason;
              }
              mj["cells"].push_back(cj);
            }
        j["transfer_matrices"].push_back(mj);
      }
      out << j.dump(2) << '\n';
      break;
    }
    case ReportFormat::Markdown: {
      out << "# Robustness report\n\nplan `" << bundle.plan_hash << "`\n";
      const auto bold = bold_cells(bundle.results);
      for (const auto& rows : grouped_rows(bundle.results)) {
        out << '\n' << heading(bundle.results[rows.front()]) << "\n\n| Module |";
        for (const char* c : kMetricColumns) out << ' ' << c << " |";
        out << "\n|---|---|---|---|---|---|---|\n";
        for (std::size_t r : rows) {
          const auto& res = bundle.results[r];
          out << "| " << res.condition << " |";
          for (int c = 0; c < 6; ++c) {
            const auto v = format_number(metric_value(res.report, c), format);
            out << ' ' << (bold.contains({r, c}) ? "**" + v + "**" : v) << " |";
          }
          out << '\n';
        }
      }
      for (const auto& m : bundle.matrices) {
        out << "\n## model transfer CLIP\n\n| Source | Module |";
        for (const auto& t : m.targets) out << ' ' << t << " |";
        out << "\n|---|---|";
        for (std::size_t t = 0; t < m.targets.size(); ++t) out << "---|";
        out << '\n';
        for (std::size_t s = 0; s < m.sources.size(); ++s) {
          // strongest (lowest) CLIP per target within each source block
          std::vector<double> best(m.targets.size(), std::numeric_limits<double>::infinity());
          for (std::size_t t = 0; t < m.targets.size(); ++t)
            for (std::size_t k = 0; k < m.modules.size(); ++k)
              if (m.cells[s][t][k].available) best[t] = std::min(best[t], m.cells[s][t][k].result.report.clip);
          for (std::size_t k = 0; k < m.modules.size(); ++k) {
            out << "| " << m.sources[s] << " | " << m.modules[k] << " |";
            for (std::size_t t = 0; t < m.targets.size(); ++t) {
              const auto& cell = m.cells[s][t][k];
              if (!cell.available) {
                out << " n/a |";
                continue;
              }
              const auto v = format_number(cell.result.report.clip, format);
              out << ' ' << (cell.result.report.clip == best[t] ? "**" + v + "**" : v) << " |";
            }
            out << '\n';
          }
        }
      }
      break;
    }
  }
  return out.str();
}

ReportBundle parse_report(const std::string& text, ReportFormat format) {
  ReportBundle bundle;
  switch (format) {
    case ReportFormat::Csv: {
      std::istringstream in(text);
      std::string line;
      std::getline(in, line);
      const auto header = split_csv_line(line);
      require(header.size() == 11 && header[5] == "CLIP" && header[10] == "IS", ErrorCode::InvalidArgument,
              "report CSV header does not match");
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        require(f.size() == 11, ErrorCode::InvalidArgument, "report CSV row has " + std::to_string(f.size()) + " fields");
        ConditionResult r;
        r.transfer = f[0];
        r.source = f[1];
        r.model = f[2];
        r.condition = f[3];
        r.report.dataset = f[4];
        for (int c = 0; c < 6; ++c) metric_value(r.report, c) = parse_number(f[static_cast<std::size_t>(5 + c)]);
        r.report.model = r.model;
        r.report.condition = r.condition;
        r.report.transfer = r.transfer;
        bundle.results.push_back(std::move(r));
      }
      break;
    }
    case ReportFormat::Json: {
      const auto j = nlohmann::json::parse(text);
      bundle.plan_hash = j.value("plan_hash", "");
      for (const auto& row : j.at("results")) {
        ConditionResult r;
        r.transfer = row.at("transfer").get<std::string>();
        r.source = row.at("source").get<std::string>();
        r.model = row.at("model").get<std::string>();
        r.condition = row.at("condition").get<std::string>();
        r.report.dataset = row.value("dataset", "");
        for (int c = 0; c < 6; ++c) metric_value(r.report, c) = number_from_json(row.at(kMetricColumns[c]));
        const auto losses = row.value("feature_loss", nlohmann::json::object());
        for (const auto& [m, v] : losses.items()) r.feature_loss[m] = number_from_json(v);
        r.report.model = r.model;
        r.report.condition = r.condition;
        r.report.transfer = r.transfer;
        bundle.results.push_back(std::move(r));
      }
      for (const auto& mj : j.value("transfer_matrices", nlohmann::json::array())) {
        TransferMatrix m;
        m.sources = mj.at("sources").get<std::vector<std::string>>();
        m.targets = mj.at("targets").get<std::vector<std::string>>();
        m.modules = mj.at("modules").get<std::vector<std::string>>();
        m.cells.assign(m.sources.size(), std::vector<std::vector<TransferCell>>(
                                             m.targets.size(), std::vector<TransferCell>(m.modules.size())));
        std::size_t i = 0;
        for (const auto& cj : mj.at("cells")) {
          const std::size_t per_source = m.targets.size() * m.modules.size();
          auto& cell = m.cells[i / per_source][(i / m.modules.size()) % m.targets.size()][i % m.modules.size()];
          cell.available = cj.at("available").get<bool>();
          if (cell.available) cell.result.report.clip = number_from_json(cj.at("CLIP"));
          else cell.reason = cj.value("reason", "");
          ++i;
        }
        bundle.matrices.push_back(std::move(m));
      }
      break;
    }
    case ReportFormat::Markdown: {
      static const std::regex head(R"(^## (\S+)(?: (.+))?: source `(.*)`, model `(.*)`$)");
      static const std::regex plan(R"(^plan `(.*)`$)");
      std::istringstream in(text);
      std::string line;
      std::string transfer, source, model;
      bool in_table = false;
      while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_match(line, m, plan)) {
          bundle.plan_hash = m[1].str();
        } else if (std::regex_match(line, m, head)) {
          transfer = m[1].str();
          source = m[3].str();
          model = m[4].str();
          in_table = true;
        } else if (line.rfind("## ", 0) == 0) {
          in_table = false;  // transfer matrices are only parsed from JSON
        } else if (in_table && line.rfind("| ", 0) == 0 && line.rfind("| Module", 0) != 0) {
          const auto cells = split_md_row(line);
          require(cells.size() == 7, ErrorCode::InvalidArgument, "markdown row has " + std::to_string(cells.size()) + " cells");
          ConditionResult r;
          r.transfer = transfer;
          r.source = source;
          r.model = model;
          r.condition = cells[0];
          for (int c = 0; c < 6; ++c) {
            std::string v = cells[static_cast<std::size_t>(c + 1)];
            if (v.size() > 4 && v.rfind("**", 0) == 0) v = v.substr(2, v.size() - 4);
            metric_value(r.report, c) = parse_number(v);
          }
          r.report.model = model;
          r.report.condition = r.condition;
          r.report.transfer = transfer;
          bundle.results.push_back(std::move(r));
        }
      }
      break;
    }
  }
  return bundle;
}

std::set<std::pair<std::size_t, int>> parse_markdown_bold(const std::string& text) {
  std::set<std::pair<std::size_t, int>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  bool in_table = false;
  while (std::getline(in, line)) {
    if (line.rfind("## model transfer", 0) == 0) {
      in_table = false;
    } else if (line.rfind("## ", 0) == 0) {
      in_table = true;
    } else if (in_table && line.rfind("| ", 0) == 0 && line.rfind("| Module", 0) != 0) {
      const auto cells = split_md_row(line);
      for (int c = 0; c < 6 && static_cast<std::size_t>(c + 1) < cells.size(); ++c)
        if (cells[static_cast<std::size_t>(c + 1)].rfind("**", 0) == 0) out.emplace(row, c);
      ++row;
    }
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const ReportBundle& bundle) {
  require(!bundle.results.empty(), ErrorCode::EmptyInput, "write_report: no results");
  std::filesystem::create_directories(dir);
  const std::pair<const char*, ReportFormat> files[] = {
      {"report.csv", ReportFormat::Csv}, {"report.json", ReportFormat::Json}, {"report.md", ReportFormat::Markdown}};
  for (const auto& [name, format] : files) {
    std::ofstream out(dir / name, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (dir / name).string());
    out << render_report(bundle, format);
  }
}

void write_loss_plot(const std::filesystem::path& path, const std::vector<std::vector<double>>& traces) {
  constexpr int kW = 320, kH = 200, kM = 24;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  RgbImage img(kH, kW, 1.0);
  auto put = [&](int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= kW || y >= kH) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  };
  for (int x = kM; x < kW - kM / 2; ++x) put(x, kH - kM, 0, 0, 0);
  for (int y = kM / 2; y <= kH - kM; ++y) put(kM, y, 0, 0, 0);

  std::size_t len = 0;
  double hi = 0.0;
  for (const auto& t : traces) {
    len = std::max(len, t.size());
    for (double v : t)
      if (std::isfinite(v)) hi = std::max(hi, v);
  }
  if (len == 0 || hi <= 0.0) {
    write_png(path, img);
    return;
  }
  auto to_px = [&](double i, double v) {
    const double fx = len > 1 ? i / static_cast<double>(len - 1) : 0.0;
    return std::pair<double, double>{kM + fx * (kW - 1.5 * kM), (kH - kM) - v / hi * (kH - 1.5 * kM)};
  };
  auto line = [&](const std::vector<double>& t, double r, double g, double b) {
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const auto [x0, y0] = to_px(static_cast<double>(i), t[i]);
      const auto [x1, y1] = to_px(static_cast<double>(i + 1), t[i + 1]);
      const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
      for (int s = 0; s <= steps; ++s) {
        const double a = static_cast<double>(s) / steps;
        put(static_cast<int>(std::lround(x0 + a * (x1 - x0))), static_cast<int>(std::lround(y0 + a * (y1 - y0))), r, g, b);
      }
    }
  };
  std::vector<double> mean(len, 0.0);
  std::vector<int> count(len, 0);
  for (const auto& t : traces) {
    line(t, 0.7, 0.7, 0.7);
    for (std::size_t i = 0; i < t.size(); ++i) {
      mean[i] += t[i];
      ++count[i];
    }
  }
  for (std::size_t i = 0; i < len; ++i) mean[i] /= std::max(count[i], 1);
  line(mean, 0.85, 0.1, 0.1);
  write_png(path, img);
}

}  // namespace ldmrb
