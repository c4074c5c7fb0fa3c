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

#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ldmrb/error.hpp"
#include "ldmrb/llm.hpp"

namespace ldmrb {

HttpLlmClient::HttpLlmClient(std::string base_url, std::string model, double temperature)
    : base_url_(std::move(base_url)), model_(std::move(model)), temperature_(temperature) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpLlmClient::complete(const std::string& query) {
  // split "scheme://host[:port]/path" into client root and request path
  const auto scheme_end = base_url_.find("://");
  const auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string root = path_start == std::string::npos ? base_url_ : base_url_.substr(0, path_start);
  const std::string prefix = path_start == std::string::npos ? "" : base_url_.substr(path_start);

  httplib::Client client(root);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  httplib::Headers headers;
  if (const char* key = std::getenv("LDMRB_LLM_API_KEY")) headers.emplace("Authorization", std::string("Bearer ") + key);

  const nlohmann::json body = {{"model", model_},
                               {"temperature", temperature_},
                               {"messages", {{{"role", "user"}, {"content", query}}}}};
  auto res = client.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) fail(ErrorCode::LlmUnavailable, "LLM request to " + base_url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    fail(ErrorCode::LlmUnavailable, "LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::LlmUnavailable, std::string("unexpected LLM response: ") + e.what());
  }
}

}  // namespace ldmrb
