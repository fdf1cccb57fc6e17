#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "fedpcl/datahub.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/federation.hpp"

namespace fedpcl {

// JSON experiment description shared by every CLI subcommand:
//
//   {
//     "seed": 7,
//     "output_dir": "runs/demo",
//     "dataset":   { "path": "...", "synthetic": { ... } },
//     "partition": { "scheme": "label_shift", "clients": 5, "alpha": 0.5 },
//     "federation": { "method": "fedpcl", "rounds": 50, ... }
//   }
//
// Unknown keys anywhere are rejected. A run manifest (which embeds the
// effective configuration under "config") is accepted in place of a config.

enum class PartitionScheme { kFeatureShift, kLabelShift, kFeatureLabelShift };

inline const char* to_string(PartitionScheme s) {
  switch (s) {
    case PartitionScheme::kFeatureShift: return "feature_shift";
    case PartitionScheme::kLabelShift: return "label_shift";
    case PartitionScheme::kFeatureLabelShift: return "feature_label_shift";
  }
  return "?";
}

inline PartitionScheme parse_partition_scheme(const std::string& s) {
  if (s == "feature_shift") return PartitionScheme::kFeatureShift;
  if (s == "label_shift") return PartitionScheme::kLabelShift;
  if (s == "feature_label_shift") return PartitionScheme::kFeatureLabelShift;
  fail(ErrorKind::kConfig, "unknown partition scheme '" + s + "'");
}

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kLabelShift;
  std::size_t clients = 5;
  double alpha = 0.5;
  std::optional<std::string> path;  // precomputed assignment (JSON)
};

struct ExperimentSpec {
  std::uint64_t seed = 0;
  std::optional<std::string> output_dir;
  std::optional<std::string> dataset_path;
  std::optional<SyntheticSpec> synthetic;
  std::optional<PartitionSpec> partition;
  FederationConfig federation;
};

namespace detail {

/// Reads an object while recording which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::kConfig, "'" + label() + "' must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T required(const std::string& key) {
    if (!has(key)) fail(ErrorKind::kConfig, "missing required key '" + qualified(key) + "'");
    return get<T>(key);
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    return has(key) ? get<T>(key) : fallback;
  }

  ObjectReader child(const std::string& key) {
    if (!has(key)) fail(ErrorKind::kConfig, "missing required key '" + qualified(key) + "'");
    seen_.insert(key);
    return ObjectReader(j_.at(key), qualified(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) fail(ErrorKind::kConfig, "unknown key '" + qualified(key) + "'");
  }

 private:
  template <typename T>
  T get(const std::string& key) {
    seen_.insert(key);
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
          fail(ErrorKind::kConfig, "key '" + qualified(key) + "' must be a non-negative integer");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kConfig, "key '" + qualified(key) + "' has the wrong type");
    }
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline SyntheticSpec parse_synthetic(detail::ObjectReader r) {
  SyntheticSpec s;
  s.n_classes = r.required<std::size_t>("n_classes");
  s.backbones = r.required<std::size_t>("K");
  s.embed_dim = r.required<std::size_t>("d_e");
  s.samples_per_cell = r.required<std::size_t>("samples_per_cell");
  s.class_sep = r.required<double>("class_sep");
  s.n_domains = r.optional<std::size_t>("n_domains", 1);
  s.domain_shift = r.optional<double>("domain_shift", 0.0);
  r.finish();
  return s;
}

inline FederationConfig parse_federation(detail::ObjectReader r) {
  FederationConfig c;
  c.method = parse_method(r.optional<std::string>("method", "fedpcl"));
  c.rounds = r.optional<std::size_t>("rounds", c.rounds);
  c.local_epochs = r.optional<std::size_t>("local_epochs", c.local_epochs);
  c.batch_size = r.optional<std::size_t>("batch_size", c.batch_size);
  c.tau = r.optional<double>("tau", c.tau);
  c.adam.lr = r.optional<double>("lr", c.adam.lr);
  c.adam.beta1 = r.optional<double>("beta1", c.adam.beta1);
  c.adam.beta2 = r.optional<double>("beta2", c.adam.beta2);
  c.adam.eps = r.optional<double>("eps", c.adam.eps);
  c.adam.weight_decay = r.optional<double>("weight_decay", c.adam.weight_decay);
  c.denom_mode = parse_denom_mode(r.optional<std::string>("denom_mode", to_string(c.denom_mode)));
  c.similarity = parse_similarity(r.optional<std::string>("similarity", to_string(c.similarity)));
  c.aggregation = parse_aggregation(r.optional<std::string>("aggregation", to_string(c.aggregation)));
  if (r.has("prototype_sources"))
    c.prototype_sources = parse_prototype_sources(r.required<std::string>("prototype_sources"));
  c.proto_dist_lambda = r.optional<double>("proto_dist_lambda", c.proto_dist_lambda);
  c.proj_dim = r.optional<std::size_t>("d_h", c.proj_dim);
  c.projector.normalization =
      parse_normalization(r.optional<std::string>("normalization", to_string(c.projector.normalization)));
  c.projector.bn_eps = r.optional<double>("bn_eps", c.projector.bn_eps);
  c.projector.bn_momentum = r.optional<double>("bn_momentum", c.projector.bn_momentum);
  if (r.has("prototype_noise")) {
    auto n = r.child("prototype_noise");
    PrototypeNoise noise;
    noise.dist = parse_noise_dist(n.required<std::string>("dist"));
    noise.scale = n.required<double>("s");
    noise.p = n.required<double>("p");
    n.finish();
    c.prototype_noise = noise;
  }
  r.finish();
  return c;
}

inline ExperimentSpec parse_experiment(const nlohmann::json& root_in) {
  const nlohmann::json& root = root_in.contains("manifest_version") ? root_in.at("config") : root_in;
  detail::ObjectReader r(root, "");
  ExperimentSpec spec;
  spec.seed = r.optional<std::uint64_t>("seed", 0);
  if (r.has("output_dir")) spec.output_dir = r.required<std::string>("output_dir");
  if (r.has("dataset")) {
    auto d = r.child("dataset");
    if (d.has("path")) spec.dataset_path = d.required<std::string>("path");
    if (d.has("synthetic")) spec.synthetic = parse_synthetic(d.child("synthetic"));
    d.finish();
  }
  if (r.has("partition")) {
    auto p = r.child("partition");
    PartitionSpec ps;
    ps.clients = p.required<std::size_t>("clients");
    if (p.has("path")) {
      ps.path = p.required<std::string>("path");
      ps.scheme = parse_partition_scheme(p.optional<std::string>("scheme", "label_shift"));
    } else {
      ps.scheme = parse_partition_scheme(p.required<std::string>("scheme"));
    }
    if (ps.scheme != PartitionScheme::kFeatureShift && !ps.path) ps.alpha = p.required<double>("alpha");
    else ps.alpha = p.optional<double>("alpha", ps.alpha);
    p.finish();
    spec.partition = ps;
  }
  if (r.has("federation")) spec.federation = parse_federation(r.child("federation"));
  r.finish();
  spec.federation.seed = spec.seed;
  if (spec.partition) spec.federation.clients = spec.partition->clients;
  if (spec.synthetic) {
    spec.federation.backbones = spec.synthetic->backbones;
    spec.federation.embed_dim = spec.synthetic->embed_dim;
  }
  return spec;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_classes", s.n_classes},
          {"K", s.backbones},
          {"d_e", s.embed_dim},
          {"samples_per_cell", s.samples_per_cell},
          {"class_sep", s.class_sep},
          {"n_domains", s.n_domains},
          {"domain_shift", s.domain_shift}};
}

inline nlohmann::json to_json(const FederationConfig& c) {
  nlohmann::json j = {{"method", to_string(c.method)},
                      {"rounds", c.rounds},
                      {"local_epochs", c.local_epochs},
                      {"batch_size", c.batch_size},
                      {"tau", c.tau},
                      {"lr", c.adam.lr},
                      {"beta1", c.adam.beta1},
                      {"beta2", c.adam.beta2},
                      {"eps", c.adam.eps},
                      {"weight_decay", c.adam.weight_decay},
                      {"denom_mode", to_string(c.denom_mode)},
                      {"similarity", to_string(c.similarity)},
                      {"aggregation", to_string(c.aggregation)},
                      {"proto_dist_lambda", c.proto_dist_lambda},
                      {"d_h", c.proj_dim},
                      {"normalization", to_string(c.projector.normalization)},
                      {"bn_eps", c.projector.bn_eps},
                      {"bn_momentum", c.projector.bn_momentum}};
  if (c.prototype_sources) j["prototype_sources"] = to_string(*c.prototype_sources);
  if (c.prototype_noise)
    j["prototype_noise"] = {{"dist", to_string(c.prototype_noise->dist)},
                            {"s", c.prototype_noise->scale},
                            {"p", c.prototype_noise->p}};
  return j;
}

/// Effective configuration; parse_experiment(to_json(spec)) reproduces spec.
inline nlohmann::json to_json(const ExperimentSpec& s) {
  nlohmann::json j = {{"seed", s.seed}};
  if (s.output_dir) j["output_dir"] = *s.output_dir;
  if (s.dataset_path || s.synthetic) {
    nlohmann::json d = nlohmann::json::object();
    if (s.dataset_path) d["path"] = *s.dataset_path;
    if (s.synthetic) d["synthetic"] = to_json(*s.synthetic);
    j["dataset"] = d;
  }
  if (s.partition) {
    nlohmann::json p = {{"scheme", to_string(s.partition->scheme)},
                        {"clients", s.partition->clients},
                        {"alpha", s.partition->alpha}};
    if (s.partition->path) p["path"] = *s.partition->path;
    j["partition"] = p;
  }
  j["federation"] = to_json(s.federation);
  return j;
}

namespace detail {
enum ExperimentSeedTag : std::uint64_t { kDatasetTag = 101, kPartitionTag = 102 };
}

/// Synthetic generation when configured, otherwise the dataset file.
inline EmbeddingDataset build_dataset(const ExperimentSpec& spec) {
  if (spec.synthetic) {
    Rng rng(derive_seed(spec.seed, {0, 0, detail::kDatasetTag}));
    return generate_synthetic(rng, *spec.synthetic);
  }
  if (!spec.dataset_path) fail(ErrorKind::kConfig, "missing required key 'dataset.path' or 'dataset.synthetic'");
  return load_dataset(*spec.dataset_path);
}

inline PartitionAssignment build_partition(const ExperimentSpec& spec, const EmbeddingDataset& ds) {
  if (!spec.partition) fail(ErrorKind::kConfig, "missing required key 'partition'");
  const auto& p = *spec.partition;
  if (p.path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(fedpcl::detail::read_file(*p.path));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, "partition file " + *p.path + ": " + e.what());
    }
    auto assignment = partition_from_json(j, ds);
    require(assignment.size() == p.clients, ErrorKind::kConfig, "partition file client count differs from config");
    return assignment;
  }
  Rng rng(derive_seed(spec.seed, {0, 0, detail::kPartitionTag}));
  switch (p.scheme) {
    case PartitionScheme::kFeatureShift: return partition_feature_shift(ds, p.clients);
    case PartitionScheme::kLabelShift: return partition_label_shift(ds, p.clients, p.alpha, rng);
    case PartitionScheme::kFeatureLabelShift: return partition_feature_label_shift(ds, p.clients, p.alpha, rng);
  }
  fail(ErrorKind::kConfig, "unknown partition scheme");
}

}  // namespace fedpcl
