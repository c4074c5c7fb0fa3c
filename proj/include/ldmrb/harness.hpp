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

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ldmrb/attack.hpp"
#include "ldmrb/defenses.hpp"
#include "ldmrb/metrics.hpp"
#include "ldmrb/model.hpp"

namespace ldmrb {

enum class FidReference { BenignGenerations, SourceImages };

struct MetricClientIds {
  std::string scorer = "mock";
  std::string extractor = "mock";
  std::string classifier = "mock";
  int is_splits = 1;

  friend bool operator==(const MetricClientIds&, const MetricClientIds&) = default;
};

struct ExperimentPlan {
  std::string name = "experiment";
  std::filesystem::path dataset;  // manifest.jsonl
  int max_images = 0;             // 0 keeps every manifest item
  int image_size = 512;           // images are resized to image_size x image_size
  std::vector<ModelDescriptor> models;
  /// model_ids to attack; empty means the first model.
  std::vector<std::string> sources;
  std::vector<ModuleTarget> modules;
  AttackConfig attack;
  int inference_steps = 100;
  std::uint64_t eval_seed = 1;
  std::vector<DefenseSpec> defenses;
  MetricClientIds metrics;
  FidReference fid_reference = FidReference::BenignGenerations;
  /// Evaluate the quantized PNG artifacts (true) or the exact doubles.
  bool evaluate_quantized = true;
  /// Prompt transfer crafts its own final-iterate examples instead of
  /// reusing the white-box (best-loss) ones.
  bool prompt_transfer_recraft = false;
  std::filesystem::path output_dir = "runs/experiment";
  std::uint64_t seed = 0;
  int workers = 1;
  double skip_threshold = 0.10;

  /// Throws InvalidArgument describing the first violated constraint.
  void validate() const;
  /// Hash of everything that affects results (not output_dir or workers).
  std::string hash() const;
  std::vector<std::string> source_ids() const;
};

void to_json(nlohmann::json& j, const ExperimentPlan& p);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentPlan& p);
ExperimentPlan load_plan(const std::filesystem::path& path);

/// Applies "key=value" overrides such as "attack.epsilon=0.05" or "workers=2".
/// Values parse as JSON when possible and as strings otherwise.
void apply_override(ExperimentPlan& plan, const std::string& assignment);

/// Prompt index evaluated for an adversarial image crafted with prompt i.
constexpr int circulation_target(int i, int n) noexcept { return (i + 1) % n; }

struct ItemRecord {
  std::string item;  // "<image_id>-p<prompt index>"
  std::int64_t image_id = 0;
  int prompt_index = 0;
  std::string prompt;       // prompt the input was crafted with
  std::string eval_prompt;  // prompt the edit was generated with
  std::string artifact;     // adversarial artifact stem, relative to the output dir
  double linf = 0.0;
  double feature_loss = 0.0;  // NaN when not applicable
  double psnr = 0.0, ssim = 0.0, msssim = 0.0, clip = 0.0;
  std::string error;  // nonempty for skipped items

  friend bool operator==(const ItemRecord&, const ItemRecord&) = default;
};
void to_json(nlohmann::json& j, const ItemRecord& r);
void from_json(const nlohmann::json& j, ItemRecord& r);

struct ConditionResult {
  std::string transfer;  // whitebox, prompt, model, defense
  std::string source;    // model the inputs were crafted on
  std::string model;     // model that produced the edits
  std::string condition; // module display name, Gaussian, Benign, or "<defense>/<module>"
  MetricsReport report;
  std::vector<ItemRecord> items;
  std::vector<ItemRecord> skipped;
  /// Mean feature-distortion loss per attacked module, at attack settings.
  std::map<std::string, double> feature_loss;

  std::string group() const;  // table this row belongs to
  bool is_attack_row() const;
};

struct TransferCell {
  bool available = false;
  std::string reason;
  ConditionResult result;
};

struct TransferMatrix {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  std::vector<std::string> modules;
  /// cells[s][t][m]
  std::vector<std::vector<std::vector<TransferCell>>> cells;
};

class Harness {
 public:
  explicit Harness(ExperimentPlan plan);
  ~Harness();
  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  const ExperimentPlan& plan() const noexcept;

  /// Crafts (or loads) every adversarial example of the sources. Returns the
  /// number of newly crafted examples.
  std::size_t craft_all();
  std::vector<ConditionResult> whitebox_sweep();
  std::vector<ConditionResult> prompt_transfer_eval();
  TransferMatrix model_transfer_eval();
  std::vector<ConditionResult> defense_eval();

  /// Loads the cached adversarial examples of a source/module, in item order.
  std::vector<AdversarialExample> adversarial_examples(const std::string& source, ModuleTarget module);

  /// Throws SkipThresholdExceeded if any condition skipped too many items.
  void check_skip_threshold(const std::vector<ConditionResult>& results) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<ConditionResult> whitebox_sweep(const ExperimentPlan& plan);
std::vector<ConditionResult> prompt_transfer_eval(const ExperimentPlan& plan);
TransferMatrix model_transfer_eval(const ExperimentPlan& plan);
std::vector<ConditionResult> defense_eval(const ExperimentPlan& plan);

}  // namespace ldmrb
