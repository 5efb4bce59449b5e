#include "mmcbm/io.hpp"

#include <map>

#include "mmcbm/binary.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm::io {

using nlohmann::json;

namespace {

constexpr std::uint8_t kNoPeriod = 0xFF;

}  // namespace

std::string encode_embeddings(std::size_t embedding_dim, std::span<const EmbeddingRow> rows) {
  binary::Writer w;
  w.put_bytes(std::string_view(kEmbeddingMagic, sizeof(kEmbeddingMagic)));
  w.put(kEmbeddingFormatVersion);
  w.put(static_cast<std::uint32_t>(embedding_dim));
  w.put(static_cast<std::uint64_t>(rows.size()));
  for (const auto& r : rows) w.put_string(r.patient_id);
  for (const auto& r : rows) w.put(static_cast<std::uint8_t>(r.token.modality));
  for (const auto& r : rows) {
    w.put(r.token.period ? static_cast<std::uint8_t>(*r.token.period) : kNoPeriod);
  }
  for (const auto& r : rows) {
    if (static_cast<std::size_t>(r.token.vector.size()) != embedding_dim) {
      throw DimensionError("token of patient " + r.patient_id + " has dimension " +
                           std::to_string(r.token.vector.size()) + ", expected " +
                           std::to_string(embedding_dim));
    }
    w.put_array(r.token.vector.data(), embedding_dim);
  }
  return w.take();
}

std::vector<EmbeddingRow> decode_embeddings(std::string_view bytes, EmbeddingHeader* header) {
  binary::Reader r(bytes);
  if (r.get_bytes(sizeof(kEmbeddingMagic)) != std::string_view(kEmbeddingMagic, 8)) {
    throw FormatError("not an embedding file (bad magic)");
  }
  EmbeddingHeader h;
  h.format_version = r.get<std::uint32_t>();
  if (h.format_version != kEmbeddingFormatVersion) {
    throw VersionError("unsupported embedding file version " + std::to_string(h.format_version));
  }
  h.embedding_dim = r.get<std::uint32_t>();
  h.count = r.get<std::uint64_t>();
  // Guard against absurd counts before allocating.
  if (h.count > r.remaining()) throw FormatError("embedding row count exceeds file size");
  const auto n = static_cast<std::size_t>(h.count);

  std::vector<EmbeddingRow> rows(n);
  for (auto& row : rows) row.patient_id = r.get_string();
  for (auto& row : rows) {
    const auto m = r.get<std::uint8_t>();
    if (m >= kNumModalities) throw FormatError("bad modality code " + std::to_string(m));
    row.token.modality = static_cast<Modality>(m);
  }
  for (auto& row : rows) {
    const auto p = r.get<std::uint8_t>();
    if (p == kNoPeriod) continue;
    if (p > static_cast<std::uint8_t>(Period::late)) {
      throw FormatError("bad period code " + std::to_string(p));
    }
    row.token.period = static_cast<Period>(p);
  }
  for (auto& row : rows) {
    row.token.vector.resize(h.embedding_dim);
    r.get_array(row.token.vector.data(), h.embedding_dim);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after embedding payload");
  if (header) *header = h;
  return rows;
}

void write_embeddings(const std::filesystem::path& path, std::size_t embedding_dim,
                      std::span<const EmbeddingRow> rows) {
  write_file(path, encode_embeddings(embedding_dim, rows));
}

std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path,
                                          EmbeddingHeader* header) {
  return decode_embeddings(read_file(path), header);
}

std::vector<EmbeddingRow> flatten_tokens(const DatasetManifest& manifest) {
  std::vector<EmbeddingRow> rows;
  for (const auto& r : manifest.records) {
    for (const auto& t : r.tokens) rows.push_back({r.patient_id, t});
  }
  return rows;
}

json concept_to_json(const Concept& c) {
  return json{{"id", c.id},
              {"modality", to_string(c.modality)},
              {"text", c.text},
              {"provenance", to_string(c.provenance)},
              {"status", to_string(c.status)}};
}

Concept concept_from_json(const json& j) {
  Concept c;
  c.id = j.at("id").get<std::string>();
  c.modality = parse_modality(j.at("modality").get<std::string>());
  c.text = j.at("text").get<std::string>();
  c.provenance = parse_provenance(j.value("provenance", std::string("report_extracted")));
  c.status = parse_status(j.value("status", std::string("active")));
  return c;
}

json record_to_json(const PatientRecord& r) {
  json j{{"patient_id", r.patient_id}, {"label", to_string(r.label)}};
  if (r.concept_annotations) {
    json ann = json::array();
    for (const auto& k : *r.concept_annotations) ann.push_back(to_string(k));
    j["concept_annotations"] = std::move(ann);
  } else {
    j["concept_annotations"] = nullptr;
  }
  json reports = json::object();
  for (const auto& [m, text] : r.report_text) reports[std::string(to_string(m))] = text;
  j["report_text"] = std::move(reports);
  return j;
}

PatientRecord record_from_json(const json& j) {
  PatientRecord r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  if (j.contains("concept_annotations") && !j["concept_annotations"].is_null()) {
    std::set<ConceptKey> ann;
    for (const auto& k : j["concept_annotations"]) ann.insert(parse_concept_key(k.get<std::string>()));
    r.concept_annotations = std::move(ann);
  }
  if (j.contains("report_text")) {
    for (const auto& [m, text] : j["report_text"].items()) {
      r.report_text[parse_modality(m)] = text.get<std::string>();
    }
  }
  return r;
}

json tokens_to_json(const std::vector<EmbeddingToken>& tokens) {
  json arr = json::array();
  for (const auto& t : tokens) {
    json tj{{"modality", to_string(t.modality)}};
    if (t.period) tj["period"] = to_string(*t.period);
    tj["vector"] = std::vector<float>(t.vector.data(), t.vector.data() + t.vector.size());
    arr.push_back(std::move(tj));
  }
  return arr;
}

std::vector<EmbeddingToken> tokens_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("tokens must be an array");
  std::vector<EmbeddingToken> out;
  for (const auto& tj : j) {
    EmbeddingToken t;
    t.modality = parse_modality(tj.at("modality").get<std::string>());
    if (tj.contains("period") && !tj["period"].is_null()) {
      t.period = parse_period(tj["period"].get<std::string>());
    }
    const auto& v = tj.at("vector");
    if (!v.is_array()) throw FormatError("token vector must be an array");
    t.vector.resize(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw FormatError("token vector entries must be numbers");
      t.vector[static_cast<Eigen::Index>(i)] = v[i].get<float>();
    }
    out.push_back(std::move(t));
  }
  return out;
}

json manifest_to_json(const DatasetManifest& manifest, const std::string& embeddings_ref) {
  json j;
  j["format"] = "mmcbm-manifest";
  j["format_version"] = kManifestFormatVersion;
  j["embedding_dim"] = manifest.embedding_dim;
  j["embeddings"] = embeddings_ref;
  json concepts = json::array();
  for (const auto& c : manifest.concepts) concepts.push_back(concept_to_json(c));
  j["concepts"] = std::move(concepts);
  json records = json::array();
  for (const auto& r : manifest.records) records.push_back(record_to_json(r));
  j["records"] = std::move(records);
  json splits = json::object();
  for (const auto& [id, s] : manifest.splits) splits[id] = to_string(s);
  j["splits"] = std::move(splits);
  return j;
}

DatasetManifest manifest_from_json(const json& j, std::span<const EmbeddingRow> rows,
                                   const EmbeddingHeader& header) {
  if (j.value("format", std::string()) != "mmcbm-manifest") {
    throw FormatError("not a manifest document");
  }
  const auto version = j.value("format_version", 0u);
  if (version != kManifestFormatVersion) {
    throw VersionError("unsupported manifest version " + std::to_string(version));
  }
  DatasetManifest m;
  m.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  if (header.embedding_dim != m.embedding_dim) {
    throw DimensionError("embedding file dimension " + std::to_string(header.embedding_dim) +
                         " differs from manifest dimension " + std::to_string(m.embedding_dim));
  }
  for (const auto& c : j.at("concepts")) m.concepts.push_back(concept_from_json(c));
  std::map<std::string, std::size_t> index;
  for (const auto& rj : j.at("records")) {
    auto rec = record_from_json(rj);
    if (!index.emplace(rec.patient_id, m.records.size()).second) {
      throw FormatError("duplicate patient id " + rec.patient_id);
    }
    m.records.push_back(std::move(rec));
  }
  for (const auto& row : rows) {
    const auto it = index.find(row.patient_id);
    if (it == index.end()) {
      throw FormatError("embedding row for unknown patient " + row.patient_id);
    }
    m.records[it->second].tokens.push_back(row.token);
  }
  if (j.contains("splits")) {
    for (const auto& [id, s] : j["splits"].items()) m.splits[id] = parse_split(s.get<std::string>());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  auto emb = path;
  emb.replace_extension(".emb");
  const auto rows = flatten_tokens(manifest);
  write_embeddings(emb, manifest.embedding_dim, rows);
  write_file(path, manifest_to_json(manifest, emb.filename().string()).dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const auto ref = j.at("embeddings").get<std::string>();
  const auto emb = path.parent_path() / ref;
  EmbeddingHeader header;
  const auto rows = read_embeddings(emb, &header);
  return manifest_from_json(j, rows, header);
}

std::uint64_t manifest_hash(const DatasetManifest& manifest) {
  const auto rows = flatten_tokens(manifest);
  const auto h = fnv1a64(manifest_to_json(manifest, "").dump());
  return fnv1a64(encode_embeddings(manifest.embedding_dim, rows), h);
}

}  // namespace mmcbm::io
