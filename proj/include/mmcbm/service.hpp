#pragma once
// JSON-over-HTTP API for prediction, intervention sessions, the concept
// catalogue and report generation. Service::handle is transport-free; serve()
// binds it to an HTTP listener.
//
//   GET  /healthz
//   POST /predict                   {"patient_id"} | {"tokens": [...]}, optional "k"
//   GET  /sessions/{id}
//   POST /sessions/{id}/intervene   {"concept_id", "value"}
//   POST /sessions/{id}/reset
//   GET  /concepts
//   POST /concepts/edits            one edit or {"edits": [...]}; bearer token
//   GET  /patients/{id}
//   POST /report                    {"session_id"} | {"patient_id"}, optional "context"

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>

#include "json.hpp"
#include "mmcbm/bundle.hpp"
#include "mmcbm/concepts.hpp"
#include "mmcbm/intervention.hpp"
#include "mmcbm/llm.hpp"

namespace mmcbm {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceConfig {
  std::chrono::seconds session_ttl{30 * 60};
  // Required as "Authorization: Bearer <token>" on edit endpoints when set.
  std::string edit_token;
  std::size_t default_k = kDefaultTopK;
  // Expired ids remembered so late calls get "session expired".
  std::size_t expired_memory = 10000;
};

class Service {
 public:
  Service(ServiceConfig config, std::shared_ptr<LLMProvider> provider, Clock clock = system_clock());

  // Swaps the model snapshot; live sessions keep the snapshot they began with.
  void set_model(std::shared_ptr<const MmcbmModel> model);
  void load_bundle(const ModelBundle& bundle);
  // Patient store for {"patient_id"} requests and GET /patients/{id}.
  void set_patients(std::shared_ptr<const DatasetManifest> manifest);

  // Safe to call from any number of threads.
  ApiResponse handle(const std::string& method, const std::string& target, const std::string& body,
                     const std::map<std::string, std::string>& headers = {});

  std::size_t live_sessions();
  // Hash of sessions, catalogue and edit log.
  std::uint64_t state_hash();
  std::vector<ConceptEdit> edit_log();

 private:
  struct SessionEntry {
    std::mutex mu;
    std::unique_ptr<InterventionSession> session;
    std::string patient_ref;
    std::chrono::system_clock::time_point created;
    std::chrono::system_clock::time_point last_used;
  };

  ApiResponse predict(const nlohmann::json& body);
  ApiResponse session_get(const std::string& id);
  ApiResponse intervene(const std::string& id, const nlohmann::json& body);
  ApiResponse reset(const std::string& id);
  ApiResponse concepts();
  ApiResponse post_edits(const nlohmann::json& body, const std::map<std::string, std::string>& headers);
  ApiResponse patient(const std::string& id);
  ApiResponse report(const nlohmann::json& body);

  std::shared_ptr<const MmcbmModel> model();
  // Looks up a live session, refreshing its last-used time. Returns null and
  // fills `error` when missing or expired.
  std::shared_ptr<SessionEntry> find_session(const std::string& id, ApiResponse& error);
  std::string new_session_id();
  void purge_expired_locked(std::chrono::system_clock::time_point now);

  ServiceConfig config_;
  std::shared_ptr<LLMProvider> provider_;
  Clock clock_;

  std::mutex model_mu_;
  std::shared_ptr<const MmcbmModel> model_;
  std::shared_ptr<const DatasetManifest> patients_;

  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
  std::set<std::string> expired_;
  std::deque<std::string> expired_order_;

  std::mutex catalogue_mu_;
  std::vector<Concept> catalogue_;
  std::vector<ConceptEdit> edit_log_;
};

// JSON form of a prediction as returned by /predict and the session routes.
nlohmann::json explanation_to_json(const Explanation& e, const ConceptBank& bank);

using RequestLogger = std::function<void(const nlohmann::json&)>;

// Blocks serving `service` on host:port until the process is stopped.
// Returns false when the socket cannot be bound.
bool serve(Service& service, const std::string& host, int port, RequestLogger logger = {});

}  // namespace mmcbm
