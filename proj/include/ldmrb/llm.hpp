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
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace ldmrb {

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Throws LlmUnavailable when no reply can be produced.
  virtual std::string complete(const std::string& query) = 0;
  virtual std::string model_id() const = 0;
};

/// Serves recorded replies. Each query owns a list consumed in order; once
/// exhausted the last reply repeats.
class ReplayLlmClient final : public LlmClient {
 public:
  ReplayLlmClient(std::string model_id, std::map<std::string, std::vector<std::string>> transcripts);
  /// {"model_id": str, "transcripts": {query: reply | [reply, ...]}}
  static std::shared_ptr<ReplayLlmClient> from_file(const std::filesystem::path& path);

  std::string complete(const std::string& query) override;
  std::string model_id() const override { return model_id_; }

 private:
  std::string model_id_;
  std::map<std::string, std::vector<std::string>> transcripts_;
  std::map<std::string, std::size_t> cursor_;
  std::mutex mutex_;
};

/// Answers from a transcript file when possible, otherwise asks `inner` and
/// appends the exchange to the file so the run can be replayed offline.
class CachingLlmClient final : public LlmClient {
 public:
  CachingLlmClient(std::shared_ptr<LlmClient> inner, std::filesystem::path cache_path);
  std::string complete(const std::string& query) override;
  std::string model_id() const override;

 private:
  void save() const;

  std::shared_ptr<LlmClient> inner_;
  std::filesystem::path path_;
  std::map<std::string, std::vector<std::string>> transcripts_;
  std::map<std::string, std::size_t> cursor_;
  std::mutex mutex_;
};

/// OpenAI-compatible chat completions endpoint, e.g.
/// "https://api.openai.com/v1" with model "gpt-3.5-turbo". The API key is
/// read from $LDMRB_LLM_API_KEY.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(std::string base_url, std::string model, double temperature = 0.0);
  std::string complete(const std::string& query) override;
  std::string model_id() const override { return model_; }

 private:
  std::string base_url_;
  std::string model_;
  double temperature_;
};

/// "replay:<file>", "cache:<file>=<url>#<model>" or "<http(s) url>#<model>".
std::shared_ptr<LlmClient> make_llm_client(const std::string& spec);

/// The prompt-variation query sent for one caption.
std::string prompt_query(const std::string& caption);

/// Splits a reply into items: numbered lines ("1. x", "2) y") when present,
/// otherwise nonempty lines with bullets and wrapping quotes removed.
std::vector<std::string> parse_prompt_list(const std::string& reply);

}  // namespace ldmrb
