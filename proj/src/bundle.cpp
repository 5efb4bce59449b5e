#include "mmcbm/bundle.hpp"

#include <zlib.h>

#include "mmcbm/binary.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/io.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "MMCBMBDL";

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void put_matrix(binary::Writer& w, const Matrix& m) {
  const RowMajor rm = m;
  w.put_array(rm.data(), static_cast<std::size_t>(rm.size()));
}

Matrix get_matrix(binary::Reader& r, std::size_t rows, std::size_t cols) {
  RowMajor rm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.get_array(rm.data(), rows * cols);
  return rm;
}

json stats_json(const ConceptStats& s) {
  return {{"train_accuracy", s.train_accuracy},
          {"test_accuracy", s.test_accuracy ? json(*s.test_accuracy) : json(nullptr)},
          {"converged", s.converged}};
}

ConceptStats stats_from_json(const json& j) {
  ConceptStats s;
  s.train_accuracy = j.at("train_accuracy").get<double>();
  if (!j.at("test_accuracy").is_null()) s.test_accuracy = j.at("test_accuracy").get<double>();
  s.converged = j.at("converged").get<bool>();
  return s;
}

}  // namespace

std::uint32_t crc32(std::string_view bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + pos), n);
    pos += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::string encode_bundle(const ModelBundle& b) {
  const auto& bank = b.bank;
  if (b.predictor && b.predictor->n_concepts() != bank.size()) {
    throw DimensionError("predictor rows differ from bank size");
  }
  if (b.baseline && b.baseline->dim != bank.dim()) {
    throw DimensionError("baseline width differs from bank dimension");
  }
  json header;
  header["n_concepts"] = bank.size();
  header["embedding_dim"] = bank.dim();
  header["has_predictor"] = b.predictor.has_value();
  header["has_baseline"] = b.baseline.has_value();
  header["metadata"] = b.metadata;
  header["concepts"] = json::array();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    auto c = io::concept_to_json(bank.concept_at(i));
    c["stats"] = stats_json(bank.stats()[i]);
    header["concepts"].push_back(std::move(c));
  }
  const auto text = header.dump();

  binary::Writer w;
  w.put_bytes(kMagic);
  w.put(kBundleVersion);
  w.put_string(text);
  put_matrix(w, bank.directions());
  if (b.predictor) put_matrix(w, b.predictor->weights);
  if (b.baseline) {
    w.put_array(b.baseline->params.data(), static_cast<std::size_t>(b.baseline->params.size()));
  }
  const auto crc = crc32(w.bytes());
  w.put(crc);
  return w.take();
}

ModelBundle decode_bundle(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not a model bundle");
  }
  binary::Reader r(bytes);
  r.get_bytes(kMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kBundleVersion) {
    throw VersionError("unsupported bundle version " + std::to_string(version));
  }
  const auto body = bytes.substr(0, bytes.size() - 4);
  binary::Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.get<std::uint32_t>() != crc32(body)) throw ChecksumError("bundle checksum mismatch");

  binary::Reader br(body);
  br.get_bytes(kMagic.size() + 4);
  json header;
  try {
    header = json::parse(br.get_string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("bundle header: ") + e.what());
  }

  ModelBundle b;
  try {
    const auto n = header.at("n_concepts").get<std::size_t>();
    const auto d = header.at("embedding_dim").get<std::size_t>();
    const auto& cj = header.at("concepts");
    if (cj.size() != n) throw DimensionError("bundle lists " + std::to_string(cj.size()) +
                                             " concepts, header says " + std::to_string(n));
    std::vector<Concept> concepts;
    std::vector<ConceptStats> stats;
    for (const auto& c : cj) {
      concepts.push_back(io::concept_from_json(c));
      stats.push_back(stats_from_json(c.at("stats")));
    }
    auto directions = get_matrix(br, n, d);
    b.bank = ConceptBank(std::move(concepts), std::move(directions), std::move(stats));
    if (header.at("has_predictor").get<bool>()) {
      b.predictor = InterpretablePredictor{get_matrix(br, n, kNumClasses)};
    }
    if (header.at("has_baseline").get<bool>()) {
      BaselineModel m;
      m.dim = d;
      m.params.resize(static_cast<Eigen::Index>(BaselineModel::param_count(d)));
      br.get_array(m.params.data(), static_cast<std::size_t>(m.params.size()));
      b.baseline = std::move(m);
    }
    b.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bundle header: ") + e.what());
  }
  if (br.remaining() != 0) throw FormatError("trailing bytes after bundle payload");
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  write_file(path, encode_bundle(bundle));
}

ModelBundle load_bundle(const std::string& path) { return decode_bundle(read_file(path)); }

ModelBundle load_bundle(const std::string& path, std::size_t expected_dim) {
  auto b = load_bundle(path);
  if (b.bank.dim() != expected_dim) {
    throw DimensionError("bundle embedding width " + std::to_string(b.bank.dim()) +
                         " differs from expected " + std::to_string(expected_dim));
  }
  return b;
}

MmcbmModel to_model(const ModelBundle& bundle) {
  if (!bundle.predictor) throw InvalidArgument("bundle holds no interpretable predictor");
  return {bundle.bank, *bundle.predictor};
}

json bank_to_json(const ConceptBank& bank) {
  json out = json::array();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& c = bank.concept_at(i);
    const auto& s = bank.stats()[i];
    out.push_back({{"key", to_string(c.key())},
                   {"id", c.id},
                   {"modality", std::string(to_string(c.modality))},
                   {"text", c.text},
                   {"provenance", std::string(to_string(c.provenance))},
                   {"status", std::string(to_string(c.status))},
                   {"train_accuracy", s.train_accuracy},
                   {"test_accuracy", s.test_accuracy ? json(*s.test_accuracy) : json(nullptr)},
                   {"converged", s.converged}});
  }
  return out;
}

}  // namespace mmcbm
