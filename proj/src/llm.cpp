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

#include "ldmrb/llm.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldmrb/error.hpp"

namespace ldmrb {

namespace {

using Transcripts = std::map<std::string, std::vector<std::string>>;

Transcripts read_transcripts(const nlohmann::json& j) {
  Transcripts out;
  for (const auto& [query, replies] : j.items()) {
    if (replies.is_string()) {
      out[query] = {replies.get<std::string>()};
    } else {
      out[query] = replies.get<std::vector<std::string>>();
    }
  }
  return out;
}

std::string next_reply(Transcripts& t, std::map<std::string, std::size_t>& cursor, const std::string& query) {
  const auto it = t.find(query);
  if (it == t.end() || it->second.empty()) return {};
  auto& pos = cursor[query];
  const std::string reply = it->second[std::min(pos, it->second.size() - 1)];
  ++pos;
  return reply;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string strip_quotes(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    s = s.substr(1, s.size() - 2);
  return trim(s);
}

}  // namespace

ReplayLlmClient::ReplayLlmClient(std::string model_id, Transcripts transcripts)
    : model_id_(std::move(model_id)), transcripts_(std::move(transcripts)) {}

std::shared_ptr<ReplayLlmClient> ReplayLlmClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::LlmUnavailable, "cannot open transcript file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::LlmUnavailable, "malformed transcript file " + path.string() + ": " + e.what());
  }
  return std::make_shared<ReplayLlmClient>(j.value("model_id", "replay"),
                                           read_transcripts(j.value("transcripts", nlohmann::json::object())));
}

std::string ReplayLlmClient::complete(const std::string& query) {
  std::lock_guard lock(mutex_);
  if (!transcripts_.contains(query))
    fail(ErrorCode::LlmUnavailable, "no recorded reply for query: " + query);
  return next_reply(transcripts_, cursor_, query);
}

CachingLlmClient::CachingLlmClient(std::shared_ptr<LlmClient> inner, std::filesystem::path cache_path)
    : inner_(std::move(inner)), path_(std::move(cache_path)) {
  std::ifstream in(path_);
  if (in) {
    nlohmann::json j;
    in >> j;
    transcripts_ = read_transcripts(j.value("transcripts", nlohmann::json::object()));
  }
}

std::string CachingLlmClient::model_id() const { return inner_ ? inner_->model_id() : "cache"; }

std::string CachingLlmClient::complete(const std::string& query) {
  std::lock_guard lock(mutex_);
  auto& pos = cursor_[query];
  const auto it = transcripts_.find(query);
  if (it != transcripts_.end() && pos < it->second.size()) return it->second[pos++];
  if (!inner_) fail(ErrorCode::LlmUnavailable, "no cached reply and no live client for query: " + query);
  std::string reply = inner_->complete(query);
  transcripts_[query].push_back(reply);
  ++pos;
  save();
  return reply;
}

void CachingLlmClient::save() const {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [q, replies] : transcripts_) t[q] = replies;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write transcript cache " + path_.string());
  out << nlohmann::json{{"model_id", model_id()}, {"transcripts", t}}.dump(2) << '\n';
}

std::shared_ptr<LlmClient> make_llm_client(const std::string& spec) {
  auto split_model = [](const std::string& s) {
    const auto hash = s.rfind('#');
    if (hash == std::string::npos) return std::pair<std::string, std::string>{s, "gpt-3.5-turbo"};
    return std::pair<std::string, std::string>{s.substr(0, hash), s.substr(hash + 1)};
  };
  if (spec.rfind("replay:", 0) == 0) return ReplayLlmClient::from_file(spec.substr(7));
  if (spec.rfind("cache:", 0) == 0) {
    const auto rest = spec.substr(6);
    const auto eq = rest.find('=');
    if (eq == std::string::npos) return std::make_shared<CachingLlmClient>(nullptr, rest);
    const auto [url, model] = split_model(rest.substr(eq + 1));
    return std::make_shared<CachingLlmClient>(std::make_shared<HttpLlmClient>(url, model), rest.substr(0, eq));
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    const auto [url, model] = split_model(spec);
    return std::make_shared<HttpLlmClient>(url, model);
  }
  fail(ErrorCode::LlmUnavailable, "unknown LLM client '" + spec + "'");
}

std::string prompt_query(const std::string& caption) {
  return "Please modify the following sentence " + caption +
         " to generate 5 similar scenes without changing the entities.";
}

std::vector<std::string> parse_prompt_list(const std::string& reply) {
  static const std::regex numbered(R"(^\s*\(?(\d+)[.):]\s*(.*)$)");
  std::vector<std::string> numbered_items, plain_items;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::smatch m;
    if (std::regex_match(t, m, numbered)) {
      const auto item = strip_quotes(m[2].str());
      if (!item.empty()) numbered_items.push_back(item);
      continue;
    }
    std::string item = t;
    if (item.front() == '-' || item.front() == '*') item = trim(item.substr(1));
    item = strip_quotes(item);
    if (!item.empty()) plain_items.push_back(item);
  }
  return numbered_items.empty() ? plain_items : numbered_items;
}

}  // namespace ldmrb
