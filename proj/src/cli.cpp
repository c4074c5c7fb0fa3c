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

#include "ldmrb/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldmrb/dataset.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/harness.hpp"
#include "ldmrb/report.hpp"

namespace ldmrb {

namespace {

struct Options {
  std::string plan_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string model;
  bool json = false;
  int verbosity = 0;

  // transfer
  std::string kind = "all";
  // report
  std::string format;
  std::string results_dir;
  // build-dataset
  std::string corpus, mode = "variation", llm, out_dir, config_path, scorer = "mock";
  std::string generator = "toy:seed=0,channels=4,steps=3";
};

ExperimentPlan prepare_plan(const Options& o) {
  require(!o.plan_path.empty(), ErrorCode::InvalidArgument, "--plan is required");
  ExperimentPlan plan = load_plan(o.plan_path);
  for (const auto& kv : o.overrides) apply_override(plan, kv);
  if (o.seed) plan.seed = *o.seed;
  if (o.workers) plan.workers = *o.workers;
  if (!o.model.empty()) {
    if (o.model == "toy") {
      ModelDescriptor d;
      d.model_id = "toy";
      d.kind = plan.models.empty() ? "variation" : plan.models.front().kind;
      d.weights = "toy:seed=" + std::to_string(plan.seed) + ",channels=4,steps=3";
      plan.models = {d};
      plan.sources.clear();
    } else {
      plan.sources = {o.model};
    }
  }
  if (plan.output_dir.is_relative())
    if (const char* root = std::getenv("LDMRB_OUTPUT_DIR"); root && *root) plan.output_dir = root / plan.output_dir;
  plan.validate();
  return plan;
}

nlohmann::json summarize(const std::vector<ConditionResult>& results) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json row = r.report;
    row["source"] = r.source;
    row["items"] = r.items.size();
    row["skipped"] = r.skipped.size();
    rows.push_back(row);
  }
  return rows;
}

void print_table(std::ostream& out, const std::vector<ConditionResult>& results) {
  for (const auto& r : results) {
    out << r.transfer << '\t' << r.model << '\t' << r.condition;
    for (int c = 0; c < 6; ++c)
      out << '\t' << kMetricColumns[c] << '=' << format_number(metric_value(r.report, c), ReportFormat::Csv);
    out << '\n';
  }
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return kExitInvalid;
    default: return kExitRuntime;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robustness experiments for latent diffusion editors", "ldmrb"};
  app.require_subcommand(1);
  Options o;

  app.add_flag("--json", o.json, "Machine-readable output; errors as JSON on stderr");
  app.add_flag("-v,--verbose", o.verbosity, "Increase log verbosity (repeatable)");

  auto add_plan_options = [&](CLI::App* sub) {
    sub->add_option("--plan", o.plan_path, "Experiment plan (JSON)")->required();
    sub->add_option("--set", o.overrides, "Plan override key=value (repeatable)");
    sub->add_option("--seed", o.seed, "Seed for every seeded operation");
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--model", o.model, "'toy' or a model_id of the plan to attack");
  };

  auto* attack = app.add_subcommand("attack", "Craft and cache adversarial examples");
  auto* sweep = app.add_subcommand("sweep", "White-box module sweep");
  auto* transfer = app.add_subcommand("transfer", "Prompt- and model-transfer evaluation");
  auto* defend = app.add_subcommand("defend", "Defended evaluation");
  auto* validate = app.add_subcommand("validate", "Check a plan and print its hash");
  for (auto* s : {attack, sweep, transfer, defend, validate}) add_plan_options(s);
  transfer->add_option("--kind", o.kind, "prompt, model or all")
      ->check(CLI::IsMember({"prompt", "model", "all"}));

  auto* report = app.add_subcommand("report", "Re-render reports from stored results");
  report->add_option("--plan", o.plan_path, "Experiment plan (JSON)");
  report->add_option("--set", o.overrides, "Plan override key=value (repeatable)");
  report->add_option("--dir", o.results_dir, "Run directory (instead of --plan)");
  report->add_option("--format", o.format, "Also print the report: csv, json or md");

  auto* build = app.add_subcommand("build-dataset", "Build a variation or inpainting dataset");
  build->add_option("--corpus", o.corpus, "COCO-style corpus directory")->required();
  build->add_option("--mode", o.mode, "variation or inpainting")
      ->check(CLI::IsMember({"variation", "inpainting"}));
  build->add_option("--llm", o.llm, "replay:<file>, cache:<file>=<url>#<model> or <url>#<model>")->required();
  build->add_option("--out", o.out_dir, "Output directory")->required();
  build->add_option("--config", o.config_path, "DatasetConfig JSON");
  build->add_option("--scorer", o.scorer, "Image-text scorer id");
  build->add_option("--generator", o.generator, "Weights of the model used to rank prompts");
  build->add_option("--seed", o.seed, "Generation seed");

  std::vector<std::string> args(argv + 1, argv + argc);
  std::reverse(args.begin(), args.end());

  auto report_error = [&](int code, std::string_view kind, const std::string& message) {
    if (o.json) {
      err << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
    } else {
      err << "error: " << message << '\n';
    }
    return code;
  };

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(kExitInvalid, "InvalidArgument", e.what());
  }

  spdlog::set_level(o.verbosity >= 2 ? spdlog::level::debug
                                     : o.verbosity == 1 ? spdlog::level::info : spdlog::level::warn);

  auto finish = [&](const std::filesystem::path& dir, const std::string& hash, nlohmann::json extra) {
    if (o.json) {
      extra["output_dir"] = dir.string();
      extra["plan_hash"] = hash;
      out << extra.dump() << '\n';
    } else {
      out << "output: " << dir.string() << '\n' << "plan: " << hash << '\n';
    }
    return kExitOk;
  };

  try {
    if (validate->parsed()) {
      const auto plan = prepare_plan(o);
      return finish(plan.output_dir, plan.hash(), {{"command", "validate"}, {"valid", true}});
    }
    if (attack->parsed() || sweep->parsed() || transfer->parsed() || defend->parsed()) {
      const auto plan = prepare_plan(o);
      Harness h(plan);
      nlohmann::json extra{{"command", app.get_subcommands().front()->get_name()}};
      if (attack->parsed()) {
        extra["crafted"] = h.craft_all();
        if (!o.json) out << "crafted: " << extra["crafted"].get<std::size_t>() << '\n';
      } else if (sweep->parsed()) {
        const auto r = h.whitebox_sweep();
        extra["results"] = summarize(r);
        if (!o.json) print_table(out, r);
      } else if (transfer->parsed()) {
        if (o.kind != "model") {
          const auto r = h.prompt_transfer_eval();
          extra["prompt"] = summarize(r);
          if (!o.json) print_table(out, r);
        }
        if (o.kind != "prompt") {
          const auto m = h.model_transfer_eval();
          std::vector<ConditionResult> rows;
          for (const auto& per_source : m.cells)
            for (const auto& per_target : per_source)
              for (const auto& cell : per_target)
                if (cell.available) rows.push_back(cell.result);
          extra["model"] = summarize(rows);
          if (!o.json) print_table(out, rows);
        }
      } else {
        const auto r = h.defense_eval();
        extra["results"] = summarize(r);
        if (!o.json) print_table(out, r);
      }
      return finish(plan.output_dir, plan.hash(), extra);
    }
    if (report->parsed()) {
      std::filesystem::path dir = o.results_dir;
      std::string hash;
      if (dir.empty()) {
        const auto plan = prepare_plan(o);
        dir = plan.output_dir;
        hash = plan.hash();
      }
      ReportBundle all;
      for (const char* protocol : {"whitebox", "prompt", "model", "defense"}) {
        const auto path = dir / "results" / (std::string(protocol) + ".json");
        if (!std::filesystem::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        auto b = parse_report(ss.str(), ReportFormat::Json);
        if (!hash.empty() && b.plan_hash != hash) continue;
        if (all.plan_hash.empty()) all.plan_hash = b.plan_hash;
        for (auto& r : b.results) all.results.push_back(std::move(r));
        for (auto& m : b.matrices) all.matrices.push_back(std::move(m));
      }
      write_report(dir, all);
      if (!o.format.empty()) out << render_report(all, parse_report_format(o.format));
      return finish(dir, all.plan_hash, {{"command", "report"}});
    }
    if (build->parsed()) {
      DatasetConfig config;
      if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + o.config_path);
        try {
          config = nlohmann::json::parse(in).get<DatasetConfig>();
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorCode::InvalidArgument, "dataset config: " + std::string(e.what()));
        }
      }
      if (o.seed) config.generation.seed = *o.seed;
      const auto mode = o.mode == "inpainting" ? DatasetMode::Inpainting : DatasetMode::Variation;
      const auto corpus = load_coco_dir(o.corpus);
      const auto scorer = make_scorer(o.scorer);
      const auto llm = make_llm_client(o.llm);
      const auto gen = load_external_model({"generator", o.mode, o.generator, "main"});
      const DatasetClients clients{scorer.get(), llm.get(), &gen};
      const auto items = build_dataset(mode, corpus, clients, config, o.out_dir);
      return finish(o.out_dir, dataset_config_hash(mode, config, clients),
                    {{"command", "build-dataset"}, {"items", items.size()},
                     {"manifest", (std::filesystem::path(o.out_dir) / "manifest.jsonl").string()}});
    }
  } catch (const Error& e) {
    return report_error(exit_code_for(e.code()), to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(kExitRuntime, "RuntimeError", e.what());
  }
  return report_error(kExitInvalid, "InvalidArgument", "no command given");
}

}  // namespace ldmrb
