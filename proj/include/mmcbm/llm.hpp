#pragma once
// Language-model providers behind one interface: a canned-response mock for
// offline use, an echo provider, an always-failing provider and an HTTP
// client for a remote completion endpoint.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mmcbm {

class LLMProvider {
 public:
  virtual ~LLMProvider() = default;
  // Throws ProviderError on failure, carrying the raw response if any.
  virtual std::string complete(const std::string& prompt, double temperature,
                               std::optional<std::uint64_t> seed) = 0;
  virtual std::string name() const = 0;
};

// Looks the prompt up in an exact map, then in substring rules (first match
// wins), then falls back to the default response. Without a match and no
// default it throws ProviderError. Safe to call concurrently.
class MockProvider final : public LLMProvider {
 public:
  MockProvider() = default;

  void set_response(std::string prompt, std::string response);
  void add_rule(std::string needle, std::string response);
  void set_default(std::string response);

  std::string complete(const std::string& prompt, double temperature,
                       std::optional<std::uint64_t> seed) override;
  std::string name() const override { return "mock"; }

  std::size_t calls() const { return calls_.load(); }
  std::vector<std::string> prompts() const;

  // {"responses": {prompt: text}, "rules": [{"contains": s, "response": t}],
  //  "default": text}; every key optional.
  static std::unique_ptr<MockProvider> from_json(const nlohmann::json& j);
  static std::unique_ptr<MockProvider> from_file(const std::string& path);

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> exact_;
  std::vector<std::pair<std::string, std::string>> rules_;
  std::optional<std::string> default_;
  std::vector<std::string> prompts_;
  std::atomic<std::size_t> calls_{0};
};

// Returns the prompt unchanged.
class EchoProvider final : public LLMProvider {
 public:
  std::string complete(const std::string& prompt, double, std::optional<std::uint64_t>) override {
    return prompt;
  }
  std::string name() const override { return "echo"; }
};

// Always throws ProviderError; stands in for an unreachable service.
class UnavailableProvider final : public LLMProvider {
 public:
  std::string complete(const std::string&, double, std::optional<std::uint64_t>) override;
  std::string name() const override { return "unavailable"; }
};

struct RemoteProviderConfig {
  std::string endpoint;  // http(s)://host[:port]/path
  std::string token;
  double timeout_seconds = 30.0;
  int max_retries = 2;
  std::string model;
};

// Reads MMCBM_LLM_ENDPOINT, MMCBM_LLM_TOKEN, MMCBM_LLM_TIMEOUT and
// MMCBM_LLM_MODEL. Throws InvalidArgument when the endpoint is unset.
RemoteProviderConfig remote_config_from_env();

// POSTs {"prompt", "temperature", "seed", "model"} as JSON with a bearer
// token and accepts either {"text": ...} or a chat-completions style
// {"choices": [{"message": {"content": ...}}]} body. Connection failures and
// 5xx responses are retried with linear backoff.
class RemoteProvider final : public LLMProvider {
 public:
  explicit RemoteProvider(RemoteProviderConfig config);
  std::string complete(const std::string& prompt, double temperature,
                       std::optional<std::uint64_t> seed) override;
  std::string name() const override { return "remote"; }

 private:
  RemoteProviderConfig config_;
  std::string origin_;
  std::string path_;
};

// Extracts the completion text from a remote response body.
std::string parse_completion_body(const std::string& body);

}  // namespace mmcbm
