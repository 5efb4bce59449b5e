#include "mmcbm/llm.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"

#include "mmcbm/error.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

using nlohmann::json;

void MockProvider::set_response(std::string prompt, std::string response) {
  std::lock_guard lock(mu_);
  exact_[std::move(prompt)] = std::move(response);
}

void MockProvider::add_rule(std::string needle, std::string response) {
  std::lock_guard lock(mu_);
  rules_.emplace_back(std::move(needle), std::move(response));
}

void MockProvider::set_default(std::string response) {
  std::lock_guard lock(mu_);
  default_ = std::move(response);
}

std::string MockProvider::complete(const std::string& prompt, double,
                                   std::optional<std::uint64_t>) {
  ++calls_;
  std::lock_guard lock(mu_);
  prompts_.push_back(prompt);
  if (const auto it = exact_.find(prompt); it != exact_.end()) return it->second;
  for (const auto& [needle, response] : rules_) {
    if (prompt.find(needle) != std::string::npos) return response;
  }
  if (default_) return *default_;
  throw ProviderError("mock provider has no response for this prompt", "");
}

std::vector<std::string> MockProvider::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

std::unique_ptr<MockProvider> MockProvider::from_json(const json& j) {
  auto p = std::make_unique<MockProvider>();
  if (j.contains("responses")) {
    for (const auto& [k, v] : j.at("responses").items()) p->set_response(k, v.get<std::string>());
  }
  if (j.contains("rules")) {
    for (const auto& r : j.at("rules")) {
      p->add_rule(r.at("contains").get<std::string>(), r.at("response").get<std::string>());
    }
  }
  if (j.contains("default") && !j.at("default").is_null()) {
    p->set_default(j.at("default").get<std::string>());
  }
  return p;
}

std::unique_ptr<MockProvider> MockProvider::from_file(const std::string& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw FormatError("mock provider fixture " + path + ": " + e.what());
  }
}

std::string UnavailableProvider::complete(const std::string&, double,
                                          std::optional<std::uint64_t>) {
  throw ProviderError("language model provider is unavailable", "");
}

RemoteProviderConfig remote_config_from_env() {
  RemoteProviderConfig c;
  const char* endpoint = std::getenv("MMCBM_LLM_ENDPOINT");
  if (!endpoint || !*endpoint) throw InvalidArgument("MMCBM_LLM_ENDPOINT is not set");
  c.endpoint = endpoint;
  if (const char* t = std::getenv("MMCBM_LLM_TOKEN")) c.token = t;
  if (const char* t = std::getenv("MMCBM_LLM_TIMEOUT")) {
    try {
      c.timeout_seconds = std::stod(t);
    } catch (const std::exception&) {
      throw InvalidArgument("MMCBM_LLM_TIMEOUT must be a number of seconds");
    }
  }
  if (const char* m = std::getenv("MMCBM_LLM_MODEL")) c.model = m;
  return c;
}

RemoteProvider::RemoteProvider(RemoteProviderConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  const auto scheme = config_.endpoint.substr(0, scheme_end);
  if (scheme_end == std::string::npos || (scheme != "http" && scheme != "https")) {
    throw InvalidArgument("provider endpoint must start with http:// or https://");
  }
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  origin_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (config_.endpoint.rfind("https://", 0) == 0) {
    throw InvalidArgument("built without TLS support; use an http:// endpoint");
  }
#endif
  if (!(config_.timeout_seconds > 0.0)) throw InvalidArgument("provider timeout must be positive");
}

std::string parse_completion_body(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw ProviderError("provider response is not JSON", body);
  }
  if (j.is_object() && j.contains("text") && j["text"].is_string()) return j["text"];
  if (j.is_object() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content") &&
        c["message"]["content"].is_string()) {
      return c["message"]["content"];
    }
    if (c.contains("text") && c["text"].is_string()) return c["text"];
  }
  throw ProviderError("provider response has no completion text", body);
}

std::string RemoteProvider::complete(const std::string& prompt, double temperature,
                                     std::optional<std::uint64_t> seed) {
  json req{{"prompt", prompt}, {"temperature", temperature}};
  if (seed) req["seed"] = *seed;
  if (!config_.model.empty()) req["model"] = config_.model;
  const auto payload = req.dump();

  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);

  std::string last_error;
  std::string last_body;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(250 * attempt));
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    last_body = res->body;
    if (res->status >= 500) {
      last_error = "provider returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ProviderError("provider returned HTTP " + std::to_string(res->status), res->body);
    }
    return parse_completion_body(res->body);
  }
  throw ProviderError(last_error, last_body);
}

}  // namespace mmcbm
