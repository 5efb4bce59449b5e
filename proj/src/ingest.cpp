#include "mmcbm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mmcbm/error.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

using nlohmann::json;

namespace {

unsigned modality_mask(const PatientRecord& r) {
  unsigned mask = 0;
  const auto set = r.modalities();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (set[m]) mask |= 1u << m;
  }
  return mask;
}

}  // namespace

DatasetManifest generate_splits(DatasetManifest manifest, const SplitConfig& config) {
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  if (config.n_folds < 2) throw InvalidArgument("n_folds must be at least 2");

  manifest.splits.clear();
  // Record indices bucketed by class, then by modality mask.
  std::array<std::map<unsigned, std::vector<std::size_t>>, kNumClasses> strata;
  std::array<std::vector<std::size_t>, kNumClasses> multimodal;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.is_multimodal()) multimodal[index_of(r.label)].push_back(i);
  }

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (multimodal[c].empty()) {
      throw InvalidArgument(std::string("class ") + std::string(to_string(kLabels[c])) +
                            " has no patients with all three modalities");
    }
    std::mt19937_64 rng(derive_seed(config.seed, c));
    auto pool = multimodal[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::floor(config.test_fraction * static_cast<double>(pool.size())));
    for (std::size_t k = 0; k < n_test; ++k) {
      manifest.splits[manifest.records[pool[k]].patient_id] = Split::test();
    }
  }

  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (manifest.splits.count(r.patient_id)) continue;
    strata[index_of(r.label)][modality_mask(r)].push_back(i);
  }

  // One running counter across all strata keeps each stratum, each class and
  // the folds overall balanced to within one patient.
  std::size_t next = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (auto& [mask, members] : strata[c]) {
      std::mt19937_64 rng(derive_seed(config.seed, 1000 + c * 16 + mask));
      std::shuffle(members.begin(), members.end(), rng);
      for (const auto idx : members) {
        const int fold = static_cast<int>(next % static_cast<std::size_t>(config.n_folds)) + 1;
        manifest.splits[manifest.records[idx].patient_id] = Split::cv_fold(fold);
        ++next;
      }
    }
  }
  return manifest;
}

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.patients_per_class = {50, 50, 50};
  spec.concepts_per_modality = {10, 10, 10};
  spec.embedding_dim = 128;
  spec.concept_signal_strength = 1.0;
  spec.noise_sigma = 0.08;
  spec.modality_noise_sigma = {{Modality::US, 0.16}};
  spec.missing_modality_rate = 0.3;
  spec.concept_presence = 0.8;
  spec.rng_seed = 7;
  return spec;
}

std::string synthetic_concept_id(Modality m, std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-finding-%02zu", std::string(to_string(m)).c_str(), j + 1);
  return slugify(buf);
}

double noise_for(const SyntheticSpec& spec, Modality m) {
  const auto it = spec.modality_noise_sigma.find(m);
  return it == spec.modality_noise_sigma.end() ? spec.noise_sigma : it->second;
}

json to_json(const SyntheticSpec& spec) {
  json j;
  j["format"] = "mmcbm-synthetic-spec";
  j["format_version"] = 1;
  j["patients_per_class"] = spec.patients_per_class;
  j["concepts_per_modality"] = spec.concepts_per_modality;
  j["embedding_dim"] = spec.embedding_dim;
  j["concept_signal_strength"] = spec.concept_signal_strength;
  j["noise_sigma"] = spec.noise_sigma;
  json noise = json::object();
  for (const auto& [m, s] : spec.modality_noise_sigma) noise[std::string(to_string(m))] = s;
  j["modality_noise_sigma"] = std::move(noise);
  json map = json::object();
  for (const auto& [label, keys] : spec.class_concept_map) {
    json arr = json::array();
    for (const auto& k : keys) arr.push_back(to_string(k));
    map[std::string(to_string(label))] = std::move(arr);
  }
  j["class_concept_map"] = std::move(map);
  j["missing_modality_rate"] = spec.missing_modality_rate;
  j["concept_presence"] = spec.concept_presence;
  j["tokens_per_period"] = spec.tokens_per_period;
  j["us_tokens"] = spec.us_tokens;
  j["rng_seed"] = spec.rng_seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  if (j.contains("format") && j["format"] != "mmcbm-synthetic-spec") {
    throw FormatError("not a synthetic spec document");
  }
  if (j.value("format_version", 1) != 1) throw VersionError("unsupported synthetic spec version");
  SyntheticSpec spec = default_synthetic_spec();
  if (j.contains("patients_per_class")) {
    spec.patients_per_class = j["patients_per_class"].get<std::array<std::size_t, kNumClasses>>();
  }
  if (j.contains("concepts_per_modality")) {
    spec.concepts_per_modality =
        j["concepts_per_modality"].get<std::array<std::size_t, kNumModalities>>();
  }
  spec.embedding_dim = j.value("embedding_dim", spec.embedding_dim);
  spec.concept_signal_strength = j.value("concept_signal_strength", spec.concept_signal_strength);
  spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
  if (j.contains("modality_noise_sigma")) {
    spec.modality_noise_sigma.clear();
    for (const auto& [m, s] : j["modality_noise_sigma"].items()) {
      spec.modality_noise_sigma[parse_modality(m)] = s.get<double>();
    }
  }
  if (j.contains("class_concept_map")) {
    spec.class_concept_map.clear();
    for (const auto& [label, arr] : j["class_concept_map"].items()) {
      auto& keys = spec.class_concept_map[parse_label(label)];
      for (const auto& k : arr) keys.insert(parse_concept_key(k.get<std::string>()));
    }
  }
  spec.missing_modality_rate = j.value("missing_modality_rate", spec.missing_modality_rate);
  spec.concept_presence = j.value("concept_presence", spec.concept_presence);
  spec.tokens_per_period = j.value("tokens_per_period", spec.tokens_per_period);
  spec.us_tokens = j.value("us_tokens", spec.us_tokens);
  spec.rng_seed = j.value("rng_seed", spec.rng_seed);
  return spec;
}

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  if (!(spec.concept_signal_strength > 0.0)) {
    throw InvalidArgument("concept_signal_strength must be positive");
  }
  if (!(spec.noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be non-negative");
  for (const auto& [m, s] : spec.modality_noise_sigma) {
    if (!(s >= 0.0)) throw InvalidArgument("modality noise must be non-negative");
  }
  if (!(spec.missing_modality_rate >= 0.0 && spec.missing_modality_rate <= 1.0)) {
    throw InvalidArgument("missing_modality_rate must lie in [0, 1]");
  }
  if (!(spec.concept_presence > 0.0 && spec.concept_presence <= 1.0)) {
    throw InvalidArgument("concept_presence must lie in (0, 1]");
  }
  if (spec.embedding_dim == 0) throw InvalidArgument("embedding_dim must be positive");
  if (spec.tokens_per_period == 0 || spec.us_tokens == 0) {
    throw InvalidArgument("token counts must be positive");
  }

  SyntheticCohort out;
  auto& manifest = out.manifest;
  manifest.embedding_dim = spec.embedding_dim;
  const auto d = static_cast<Eigen::Index>(spec.embedding_dim);

  std::mt19937_64 rng(spec.rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (const auto m : kModalities) {
    for (std::size_t j = 0; j < spec.concepts_per_modality[index_of(m)]; ++j) {
      Concept c;
      c.id = synthetic_concept_id(m, j);
      c.modality = m;
      c.text = std::string(to_string(m)) + " finding " + std::to_string(j + 1);
      manifest.concepts.push_back(c);
      Vector u(d);
      for (Eigen::Index k = 0; k < d; ++k) u[k] = gauss(rng);
      u.normalize();
      out.directions.emplace(c.key(), std::move(u));
    }
  }

  auto class_map = spec.class_concept_map;
  if (class_map.empty()) {
    for (const auto m : kModalities) {
      for (std::size_t j = 0; j < spec.concepts_per_modality[index_of(m)]; ++j) {
        class_map[kLabels[j % kNumClasses]].insert({m, synthetic_concept_id(m, j)});
      }
    }
  }
  for (const auto label : kLabels) {
    if (!class_map.count(label)) {
      throw InvalidArgument("class_concept_map has no entry for " + std::string(to_string(label)));
    }
    for (const auto& key : class_map[label]) {
      if (!out.directions.count(key)) {
        throw InvalidArgument("class_concept_map references unknown concept " + to_string(key));
      }
    }
  }

  std::size_t serial = 0;
  for (const auto label : kLabels) {
    for (std::size_t p = 0; p < spec.patients_per_class[index_of(label)]; ++p) {
      PatientRecord r;
      char id[32];
      std::snprintf(id, sizeof(id), "P%04zu", ++serial);
      r.patient_id = id;
      r.label = label;

      ModalitySet present{true, true, true};
      if (unif(rng) < spec.missing_modality_rate) {
        // Keep a random non-empty proper subset.
        const unsigned mask = 1 + static_cast<unsigned>(unif(rng) * 6.0) % 6;
        for (std::size_t m = 0; m < kNumModalities; ++m) present[m] = (mask >> m) & 1u;
      }

      std::set<ConceptKey> annotations;
      for (const auto m : kModalities) {
        if (!present[index_of(m)]) continue;
        std::vector<ConceptKey> active;
        for (const auto& key : class_map[label]) {
          if (key.modality != m) continue;
          if (spec.concept_presence >= 1.0 || unif(rng) < spec.concept_presence) {
            active.push_back(key);
          }
        }
        Vector signal = Vector::Zero(d);
        for (const auto& key : active) {
          signal += spec.concept_signal_strength * out.directions.at(key);
          annotations.insert(key);
        }
        const double sigma = noise_for(spec, m);
        auto emit = [&](std::optional<Period> period) {
          Vector x = signal;
          if (sigma > 0.0) {
            for (Eigen::Index k = 0; k < d; ++k) x[k] += sigma * gauss(rng);
          }
          r.tokens.push_back({m, period, x.cast<float>()});
        };
        if (m == Modality::US) {
          for (std::size_t t = 0; t < spec.us_tokens; ++t) emit(std::nullopt);
        } else {
          for (const auto period : {Period::early, Period::middle, Period::late}) {
            for (std::size_t t = 0; t < spec.tokens_per_period; ++t) emit(period);
          }
        }
        std::string text = "Findings:";
        for (std::size_t i = 0; i < active.size(); ++i) {
          text += (i ? "; " : " ");
          text += manifest.find_concept(active[i])->text;
        }
        r.report_text[m] = active.empty() ? "No notable findings." : text + ".";
      }
      r.concept_annotations = std::move(annotations);
      manifest.records.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace mmcbm
