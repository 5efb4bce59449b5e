#include "mmcbm/service.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "httplib.h"

#include "mmcbm/error.hpp"
#include "mmcbm/io.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

using nlohmann::json;

namespace {

ApiResponse error_response(int status, const std::string& message) {
  return {status, {{"error", message}, {"status", status}}};
}

std::vector<std::string> split_path(const std::string& target) {
  std::string path = target.substr(0, target.find('?'));
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto next = path.find('/', pos);
    const auto part = path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!part.empty()) parts.push_back(part);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return parts;
}

std::optional<json> parse_body(const std::string& body, ApiResponse& error) {
  if (trim(body).empty()) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) {
      error = error_response(400, "request body must be a JSON object");
      return std::nullopt;
    }
    return j;
  } catch (const json::exception& e) {
    error = error_response(400, std::string("malformed JSON: ") + e.what());
    return std::nullopt;
  }
}

json logits_json(const std::array<double, kNumClasses>& v) {
  json j = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) j[std::string(to_string(kLabels[c]))] = v[c];
  return j;
}

std::string header_value(const std::map<std::string, std::string>& headers, const std::string& name) {
  for (const auto& [k, v] : headers) {
    if (k.size() != name.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < k.size() && same; ++i) {
      same = std::tolower(static_cast<unsigned char>(k[i])) ==
             std::tolower(static_cast<unsigned char>(name[i]));
    }
    if (same) return v;
  }
  return {};
}

std::optional<std::size_t> read_k(const json& body, std::size_t fallback, std::size_t n,
                                  ApiResponse& error) {
  if (!body.contains("k")) return std::min(fallback, n);
  if (!body["k"].is_number_integer() || body["k"].get<long long>() < 1 ||
      static_cast<std::size_t>(body["k"].get<long long>()) > n) {
    error = error_response(400, "k must be an integer in [1, " + std::to_string(n) + "]");
    return std::nullopt;
  }
  return static_cast<std::size_t>(body["k"].get<long long>());
}

}  // namespace

json explanation_to_json(const Explanation& e, const ConceptBank& bank) {
  json top = json::array();
  for (const auto& r : e.top_k) {
    const auto& c = bank.concept_at(r.index);
    top.push_back({{"concept_id", to_string(c.key())},
                   {"id", c.id},
                   {"modality", std::string(to_string(c.modality))},
                   {"text", c.text},
                   {"attention", r.attention},
                   {"score", r.score},
                   {"rank", r.rank}});
  }
  json masked_out = json::array();
  for (std::size_t i = 0; i < e.scores.size(); ++i) {
    if (!e.scores.mask[i]) masked_out.push_back(to_string(bank.concept_at(i).key()));
  }
  return {{"label", std::string(to_string(e.label))},
          {"probabilities", logits_json(e.probabilities)},
          {"logits", logits_json(e.logits)},
          {"top_k", std::move(top)},
          {"masked_out", std::move(masked_out)}};
}

Service::Service(ServiceConfig config, std::shared_ptr<LLMProvider> provider, Clock clock)
    : config_(std::move(config)), provider_(std::move(provider)), clock_(std::move(clock)) {
  if (!provider_) throw InvalidArgument("service needs a language model provider");
}

void Service::set_model(std::shared_ptr<const MmcbmModel> model) {
  {
    std::lock_guard lock(model_mu_);
    model_ = model;
  }
  std::lock_guard lock(catalogue_mu_);
  catalogue_ = model ? model->bank.concepts() : std::vector<Concept>{};
  edit_log_.clear();
}

void Service::load_bundle(const ModelBundle& bundle) {
  set_model(std::make_shared<const MmcbmModel>(to_model(bundle)));
}

void Service::set_patients(std::shared_ptr<const DatasetManifest> manifest) {
  std::lock_guard lock(model_mu_);
  patients_ = std::move(manifest);
}

std::shared_ptr<const MmcbmModel> Service::model() {
  std::lock_guard lock(model_mu_);
  return model_;
}

std::size_t Service::live_sessions() {
  std::lock_guard lock(sessions_mu_);
  purge_expired_locked(clock_());
  return sessions_.size();
}

std::vector<ConceptEdit> Service::edit_log() {
  std::lock_guard lock(catalogue_mu_);
  return edit_log_;
}

std::uint64_t Service::state_hash() {
  std::ostringstream os;
  {
    std::lock_guard lock(sessions_mu_);
    for (const auto& [id, entry] : sessions_) {
      std::lock_guard slock(entry->mu);
      os << id << '|' << entry->last_used.time_since_epoch().count() << '|';
      for (const auto& [i, v] : entry->session->edits()) os << i << '=' << v << ',';
      os << entry->session->audit_log().size() << ';';
    }
    for (const auto& id : expired_) os << "x" << id << ';';
  }
  std::lock_guard lock(catalogue_mu_);
  os << hex64(catalogue_hash(catalogue_)) << '|' << edit_log_to_json(edit_log_);
  return fnv1a64(os.str());
}

std::string Service::new_session_id() {
  static thread_local std::random_device rd;
  std::uniform_int_distribution<std::uint64_t> dist;
  return hex64(dist(rd)) + hex64(dist(rd));
}

void Service::purge_expired_locked(std::chrono::system_clock::time_point now) {
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_used > config_.session_ttl) {
      expired_.insert(it->first);
      expired_order_.push_back(it->first);
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
  while (expired_order_.size() > config_.expired_memory) {
    expired_.erase(expired_order_.front());
    expired_order_.pop_front();
  }
}

std::shared_ptr<Service::SessionEntry> Service::find_session(const std::string& id,
                                                             ApiResponse& error) {
  const auto now = clock_();
  std::lock_guard lock(sessions_mu_);
  purge_expired_locked(now);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    error = expired_.count(id) ? error_response(404, "session expired")
                               : error_response(404, "unknown session");
    return nullptr;
  }
  return it->second;
}

ApiResponse Service::handle(const std::string& method, const std::string& target,
                            const std::string& body,
                            const std::map<std::string, std::string>& headers) {
  const auto parts = split_path(target);
  ApiResponse err;
  try {
    if (method == "GET") {
      if (parts.size() == 1 && parts[0] == "healthz") {
        return {200, {{"status", "ok"}, {"model_loaded", model() != nullptr}}};
      }
      if (parts.size() == 1 && parts[0] == "concepts") return concepts();
      if (parts.size() == 2 && parts[0] == "patients") return patient(parts[1]);
      if (parts.size() == 2 && parts[0] == "sessions") return session_get(parts[1]);
    } else if (method == "POST") {
      const auto j = parse_body(body, err);
      const bool known = (parts.size() == 1 && (parts[0] == "predict" || parts[0] == "report")) ||
                         (parts.size() == 2 && parts[0] == "concepts" && parts[1] == "edits") ||
                         (parts.size() == 3 && parts[0] == "sessions" &&
                          (parts[2] == "intervene" || parts[2] == "reset"));
      if (!known) return error_response(404, "no route for " + method + " " + target);
      if (!j) return err;
      if (parts[0] == "predict") return predict(*j);
      if (parts[0] == "report") return report(*j);
      if (parts[0] == "concepts") return post_edits(*j, headers);
      if (parts[2] == "intervene") return intervene(parts[1], *j);
      return reset(parts[1]);
    }
    return error_response(404, "no route for " + method + " " + target);
  } catch (const Conflict& e) {
    return error_response(409, e.what());
  } catch (const NotFound& e) {
    return error_response(404, e.what());
  } catch (const DimensionError& e) {
    return error_response(422, e.what());
  } catch (const InvalidArgument& e) {
    return error_response(400, e.what());
  } catch (const FormatError& e) {
    return error_response(400, e.what());
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse Service::predict(const json& body) {
  const auto m = model();
  if (!m) return error_response(503, "no model loaded");
  ApiResponse err;
  const auto k = read_k(body, config_.default_k, m->bank.size(), err);
  if (!k) return err;

  std::vector<EmbeddingToken> tokens;
  std::string ref;
  if (body.contains("tokens")) {
    tokens = io::tokens_from_json(body["tokens"]);
    if (tokens.empty()) return error_response(400, "payload has no tokens");
    for (const auto& t : tokens) {
      if (t.modality == Modality::US && t.period) {
        return error_response(400, "ultrasound tokens carry no period");
      }
      if (!t.vector.allFinite()) return error_response(400, "token vector has non-finite entries");
      if (static_cast<std::size_t>(t.vector.size()) != m->bank.dim()) {
        return error_response(422, "token width " + std::to_string(t.vector.size()) +
                                       " differs from model dimension " +
                                       std::to_string(m->bank.dim()));
      }
    }
    ref = "payload";
  } else if (body.contains("patient_id") && body["patient_id"].is_string()) {
    std::shared_ptr<const DatasetManifest> patients;
    {
      std::lock_guard lock(model_mu_);
      patients = patients_;
    }
    const auto id = body["patient_id"].get<std::string>();
    const auto* rec = patients ? patients->find(id) : nullptr;
    if (!rec) return error_response(404, "unknown patient " + id);
    tokens = rec->tokens;
    ref = id;
  } else {
    return error_response(400, "request needs \"tokens\" or \"patient_id\"");
  }

  auto entry = std::make_shared<SessionEntry>();
  entry->session = std::make_unique<InterventionSession>(m, concept_scores(tokens, m->bank), *k, clock_);
  entry->patient_ref = ref;
  entry->created = entry->last_used = clock_();
  const auto id = new_session_id();
  auto out = explanation_to_json(entry->session->current(), m->bank);
  {
    std::lock_guard lock(sessions_mu_);
    sessions_[id] = entry;
  }
  out["session_id"] = id;
  out["patient_ref"] = ref;
  return {200, out};
}

ApiResponse Service::session_get(const std::string& id) {
  ApiResponse err;
  std::shared_ptr<SessionEntry> entry;
  {
    std::lock_guard lock(sessions_mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end() || clock_() - it->second->last_used > config_.session_ttl) {
      return expired_.count(id) || it != sessions_.end() ? error_response(404, "session expired")
                                                         : error_response(404, "unknown session");
    }
    entry = it->second;
  }
  std::lock_guard slock(entry->mu);
  const auto& s = *entry->session;
  auto out = explanation_to_json(s.current(), s.model().bank);
  out["session_id"] = id;
  out["patient_ref"] = entry->patient_ref;
  json log = json::array();
  for (const auto& a : s.audit_log()) {
    log.push_back({{"timestamp_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                                        a.timestamp.time_since_epoch())
                                        .count()},
                   {"concept_id", to_string(a.key)},
                   {"old", a.old_value},
                   {"new", a.new_value}});
  }
  out["audit_log"] = std::move(log);
  return {200, out};
}

ApiResponse Service::intervene(const std::string& id, const json& body) {
  ApiResponse err;
  auto entry = find_session(id, err);
  if (!entry) return err;
  if (!body.contains("concept_id") || !body["concept_id"].is_string()) {
    return error_response(400, "request needs a string \"concept_id\"");
  }
  if (!body.contains("value") || !body["value"].is_number()) {
    return error_response(400, "request needs a numeric \"value\"");
  }
  std::lock_guard slock(entry->mu);
  entry->last_used = clock_();
  auto& s = *entry->session;
  const auto before = s.current();
  const auto& after = s.intervene(body["concept_id"].get<std::string>(), body["value"].get<double>());
  auto out = explanation_to_json(after, s.model().bank);
  out["session_id"] = id;
  out["logit_deltas"] = logits_json(logit_deltas(before, after));
  json edits = json::object();
  for (const auto& [i, v] : s.edits()) edits[to_string(s.model().bank.concept_at(i).key())] = v;
  out["edits"] = std::move(edits);
  return {200, out};
}

ApiResponse Service::reset(const std::string& id) {
  ApiResponse err;
  auto entry = find_session(id, err);
  if (!entry) return err;
  std::lock_guard slock(entry->mu);
  entry->last_used = clock_();
  auto& s = *entry->session;
  auto out = explanation_to_json(s.reset(), s.model().bank);
  out["session_id"] = id;
  out["audit_log_length"] = s.audit_log().size();
  return {200, out};
}

ApiResponse Service::concepts() {
  const auto m = model();
  if (!m) return error_response(503, "no model loaded");
  std::lock_guard lock(catalogue_mu_);
  json list = json::array();
  for (const auto& c : catalogue_) {
    const auto index = m->bank.index_of(c.key());
    json j{{"concept_id", to_string(c.key())},
           {"id", c.id},
           {"modality", std::string(to_string(c.modality))},
           {"text", c.text},
           {"provenance", std::string(to_string(c.provenance))},
           {"status", std::string(to_string(c.status))},
           {"in_bank", index.has_value()},
           {"train_accuracy", nullptr},
           {"test_accuracy", nullptr}};
    if (index) {
      const auto& st = m->bank.stats()[*index];
      j["train_accuracy"] = st.train_accuracy;
      if (st.test_accuracy) j["test_accuracy"] = *st.test_accuracy;
    }
    list.push_back(std::move(j));
  }
  std::map<std::string, std::size_t> per_modality;
  for (const auto& c : catalogue_) {
    if (c.active()) ++per_modality[std::string(to_string(c.modality))];
  }
  return {200,
          {{"concepts", std::move(list)},
           {"n_concepts", catalogue_.size()},
           {"active_per_modality", per_modality},
           {"edit_log_length", edit_log_.size()},
           {"catalogue_hash", hex64(catalogue_hash(catalogue_))}}};
}

ApiResponse Service::post_edits(const json& body, const std::map<std::string, std::string>& headers) {
  if (!config_.edit_token.empty() &&
      header_value(headers, "Authorization") != "Bearer " + config_.edit_token) {
    return error_response(401, "edit endpoints need a valid bearer token");
  }
  if (!model()) return error_response(503, "no model loaded");
  std::vector<ConceptEdit> edits;
  if (body.contains("edits")) {
    if (!body["edits"].is_array()) return error_response(400, "\"edits\" must be an array");
    for (const auto& e : body["edits"]) edits.push_back(edit_from_json(e));
  } else {
    edits.push_back(edit_from_json(body));
  }
  if (edits.empty()) return error_response(400, "no edits submitted");
  std::lock_guard lock(catalogue_mu_);
  // all-or-nothing: apply to a copy first
  auto updated = apply_edits(catalogue_, edits);
  catalogue_ = std::move(updated);
  edit_log_.insert(edit_log_.end(), edits.begin(), edits.end());
  return {200,
          {{"applied", edits.size()},
           {"edit_log_length", edit_log_.size()},
           {"catalogue_hash", hex64(catalogue_hash(catalogue_))}}};
}

ApiResponse Service::patient(const std::string& id) {
  std::shared_ptr<const DatasetManifest> patients;
  {
    std::lock_guard lock(model_mu_);
    patients = patients_;
  }
  const auto* rec = patients ? patients->find(id) : nullptr;
  if (!rec) return error_response(404, "unknown patient " + id);
  auto out = io::record_to_json(*rec);
  json mods = json::array();
  for (auto m : kModalities) {
    if (rec->has_modality(m)) mods.push_back(std::string(to_string(m)));
  }
  out["modalities"] = std::move(mods);
  out["n_tokens"] = rec->tokens.size();
  const auto it = patients->splits.find(id);
  out["split"] = it == patients->splits.end() ? json(nullptr) : json(to_string(it->second));
  return {200, out};
}

namespace {

ApiResponse report_response(const Explanation& expl, const ConceptBank& bank,
                            const ReportContext& ctx, LLMProvider& provider) {
  auto gen = generate_report(expl, bank, ctx, provider);
  auto pred = explanation_to_json(expl, bank);
  if (!gen.available) {
    return {503,
            {{"error", "report provider unavailable: " + gen.error},
             {"status", 503},
             {"report", "unavailable"},
             {"available", false},
             {"prediction", std::move(pred)}}};
  }
  return {200,
          {{"report", gen.text},
           {"available", true},
           {"inputs", gen.inputs},
           {"prediction", std::move(pred)}}};
}

}  // namespace

ApiResponse Service::report(const json& body) {
  ReportContext ctx;
  if (body.contains("context")) {
    if (!body["context"].is_object()) return error_response(400, "\"context\" must be an object");
    for (const auto& [k, v] : body["context"].items()) {
      ctx.fields[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  if (body.contains("session_id")) {
    if (!body["session_id"].is_string()) return error_response(400, "\"session_id\" must be a string");
    ApiResponse err;
    auto entry = find_session(body["session_id"].get<std::string>(), err);
    if (!entry) return err;
    std::lock_guard slock(entry->mu);
    entry->last_used = clock_();
    if (entry->patient_ref != "payload") ctx.patient_id = entry->patient_ref;
    const auto& s = *entry->session;
    return report_response(s.current(), s.model().bank, ctx, *provider_);
  }
  if (body.contains("patient_id") && body["patient_id"].is_string()) {
    const auto m = model();
    if (!m) return error_response(503, "no model loaded");
    std::shared_ptr<const DatasetManifest> patients;
    {
      std::lock_guard lock(model_mu_);
      patients = patients_;
    }
    const auto id = body["patient_id"].get<std::string>();
    const auto* rec = patients ? patients->find(id) : nullptr;
    if (!rec) return error_response(404, "unknown patient " + id);
    ApiResponse err;
    const auto k = read_k(body, config_.default_k, m->bank.size(), err);
    if (!k) return err;
    ctx.patient_id = id;
    return report_response(m->explain(*rec, *k), m->bank, ctx, *provider_);
  }
  return error_response(400, "request needs \"session_id\" or \"patient_id\"");
}

bool serve(Service& service, const std::string& host, int port, RequestLogger logger) {
  httplib::Server server;
  const auto handler = [&](const httplib::Request& req, httplib::Response& res) {
    const auto start = std::chrono::steady_clock::now();
    std::map<std::string, std::string> headers(req.headers.begin(), req.headers.end());
    const auto out = service.handle(req.method, req.target, req.body, headers);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
    if (logger) {
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
      logger({{"method", req.method}, {"path", req.path}, {"status", out.status}, {"ms", ms.count()}});
    }
  };
  server.Get(".*", handler);
  server.Post(".*", handler);
  return server.listen(host, port);
}

}  // namespace mmcbm
