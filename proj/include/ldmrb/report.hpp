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

#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ldmrb/harness.hpp"

namespace ldmrb {

enum class ReportFormat { Csv, Json, Markdown };
ReportFormat parse_report_format(std::string_view text);

struct ReportBundle {
  std::string plan_hash;
  std::vector<ConditionResult> results;
  std::vector<TransferMatrix> matrices;
};

/// Shortest round-trip decimal; infinity renders as "inf" (CSV, JSON) or
/// "∞" (markdown) and NaN as an empty cell / "-".
std::string format_number(double value, ReportFormat format);
double parse_number(std::string_view text);

/// (row index, metric column) pairs bolded in markdown. Within each table the
/// attack rows compete: lowest CLIP, PSNR, SSIM, MSSSIM and IS, highest FID.
std::set<std::pair<std::size_t, int>> bold_cells(const std::vector<ConditionResult>& results);

std::string render_report(const ReportBundle& bundle, ReportFormat format);

/// Parsers return labels and the six metrics of each row (per-item records
/// are not part of the report files).
ReportBundle parse_report(const std::string& text, ReportFormat format);
/// Markdown only: the bolded cells found in the text, as with bold_cells.
std::set<std::pair<std::size_t, int>> parse_markdown_bold(const std::string& text);

/// Writes report.csv, report.json and report.md into dir. Throws EmptyInput
/// when there is nothing to report.
void write_report(const std::filesystem::path& dir, const ReportBundle& bundle);

/// Line chart of loss traces (one gray line each, mean in red).
void write_loss_plot(const std::filesystem::path& path, const std::vector<std::vector<double>>& traces);

}  // namespace ldmrb
