#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedpcl/datahub.hpp"
#include "fedpcl/detail/binary_io.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/evaluate.hpp"
#include "fedpcl/linalg.hpp"
#include "fedpcl/losses.hpp"
#include "fedpcl/projector.hpp"
#include "fedpcl/prototypes.hpp"

namespace fedpcl {

enum class Method { kFedPCL, kFedAvg, kFedRep, kFedProto, kSolo };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kFedPCL: return "fedpcl";
    case Method::kFedAvg: return "fedavg";
    case Method::kFedRep: return "fedrep";
    case Method::kFedProto: return "fedproto";
    case Method::kSolo: return "solo";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "fedpcl") return Method::kFedPCL;
  if (s == "fedavg") return Method::kFedAvg;
  if (s == "fedrep") return Method::kFedRep;
  if (s == "fedproto" || s == "fedproto-style") return Method::kFedProto;
  if (s == "solo") return Method::kSolo;
  fail(ErrorKind::kConfig, "unknown method '" + s + "'");
}

/// Name written to output artifacts; the FedProto baseline is our own
/// realization of that method, labeled accordingly.
inline std::string method_label(Method m) { return m == Method::kFedProto ? "fedproto-style" : to_string(m); }

enum class PrototypeSources { kGlobalOnly, kLocalOnly, kBoth };

inline const char* to_string(PrototypeSources s) {
  switch (s) {
    case PrototypeSources::kGlobalOnly: return "global_only";
    case PrototypeSources::kLocalOnly: return "local_only";
    case PrototypeSources::kBoth: return "both";
  }
  return "?";
}

inline PrototypeSources parse_prototype_sources(const std::string& s) {
  if (s == "global_only") return PrototypeSources::kGlobalOnly;
  if (s == "local_only") return PrototypeSources::kLocalOnly;
  if (s == "both") return PrototypeSources::kBoth;
  fail(ErrorKind::kConfig, "unknown prototype sources '" + s + "'");
}

struct PrototypeNoise {
  NoiseDist dist = NoiseDist::kGaussian;
  double scale = 0.0;
  double p = 0.0;
};

struct FederationConfig {
  Method method = Method::kFedPCL;
  std::size_t clients = 5;
  std::size_t rounds = 50;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  double tau = 0.07;
  AdamConfig adam{};
  DenomMode denom_mode = DenomMode::kExcludePositive;
  Similarity similarity = Similarity::kDot;
  AggregationMode aggregation = AggregationMode::kAsWritten;
  std::optional<PrototypeSources> prototype_sources;  // fedpcl only; defaults to both
  double proto_dist_lambda = 1.0;                     // fedproto-style regularizer weight
  std::optional<PrototypeNoise> prototype_noise;      // applied to uploaded prototypes
  std::uint64_t seed = 0;
  std::size_t backbones = 3;
  std::size_t embed_dim = 512;
  std::size_t proj_dim = 256;
  ProjectorConfig projector{};

  PrototypeSources sources() const { return prototype_sources.value_or(PrototypeSources::kBoth); }
  bool uses_prototypes() const { return method == Method::kFedPCL || method == Method::kFedProto; }
  bool uses_classifier() const { return method != Method::kFedPCL; }
};

inline void validate(const FederationConfig& c) {
  require(c.clients >= 1, ErrorKind::kConfig, "clients must be >= 1");
  require(c.rounds >= 1, ErrorKind::kConfig, "rounds must be >= 1");
  require(c.local_epochs >= 1, ErrorKind::kConfig, "local_epochs must be >= 1");
  require(c.batch_size >= 2, ErrorKind::kConfig, "batch_size must be >= 2");
  require(c.tau > 0.0, ErrorKind::kConfig, "tau must be > 0");
  require(c.backbones >= 1 && c.embed_dim >= 1 && c.proj_dim >= 1, ErrorKind::kConfig, "dimensions must be >= 1");
  require(c.proto_dist_lambda >= 0.0, ErrorKind::kConfig, "proto_dist_lambda must be >= 0");
  try {
    validate(c.adam);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what());
  }
  if (c.prototype_sources)
    require(c.method == Method::kFedPCL, ErrorKind::kConfig,
            std::string("prototype_sources only applies to fedpcl, not ") + to_string(c.method));
  if (c.prototype_noise) {
    require(c.uses_prototypes(), ErrorKind::kConfig,
            std::string("prototype_noise needs a prototype-sharing method, not ") + to_string(c.method));
    require(c.prototype_noise->p >= 0.0 && c.prototype_noise->p < 1.0 && c.prototype_noise->scale >= 0.0,
            ErrorKind::kConfig, "prototype_noise needs 0 <= p < 1 and scale >= 0");
  }
}

// ---------------------------------------------------------------------------
// Communication accounting (parameters uploaded per client per round).
// Only weight-matrix entries are counted for parameter-sharing methods.
// ---------------------------------------------------------------------------

inline std::uint64_t comm_cost(Method method, std::uint64_t backbones, std::uint64_t embed_dim,
                               std::uint64_t proj_dim, std::uint64_t n_classes) {
  require(backbones > 0 && embed_dim > 0 && proj_dim > 0 && n_classes > 0, ErrorKind::kConfig,
          "comm_cost dimensions must be positive");
  switch (method) {
    case Method::kFedAvg: return backbones * embed_dim * proj_dim + proj_dim * n_classes;
    case Method::kFedRep: return backbones * embed_dim * proj_dim;
    case Method::kFedPCL:
    case Method::kFedProto: return n_classes * proj_dim;
    case Method::kSolo: return 0;
  }
  fail(ErrorKind::kConfig, "unknown method");
}

/// What a client sends to the server after a round.
struct UploadPayload {
  std::optional<PrototypeSet> prototypes;
  std::optional<ProjectorParams> projector;
  std::optional<ClassifierHead> head;
  std::size_t sample_count = 0;

  /// Counted with the same convention as comm_cost.
  std::uint64_t param_count() const {
    std::uint64_t n = 0;
    if (prototypes) n += prototypes->size() * prototypes->dim;
    if (projector) n += projector->weight.size();
    if (head) n += head->weight.size();
    return n;
  }
};

struct ClientState {
  int id = 0;
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;
  ProjectorParams projector;
  AdamState projector_adam;
  std::optional<ClassifierHead> head;
  AdamState head_adam;
  PrototypeSet local;  // latest unpadded local prototypes
};

struct RoundRecord {
  std::size_t round = 0;
  int client_id = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  std::uint64_t params_up = 0;
  std::uint64_t params_down = 0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct LocalUpdateResult {
  std::vector<double> epoch_losses;  // mean batch loss per local epoch
  PrototypeSet local;                // recomputed after training (prototype methods)

  double mean_loss() const {
    if (epoch_losses.empty()) return 0.0;
    double s = 0.0;
    for (double l : epoch_losses) s += l;
    return s / static_cast<double>(epoch_losses.size());
  }
};

/// Shuffled mini-batches; a trailing batch of one sample joins the previous
/// batch so every train-mode batch has at least two rows.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  if (!batches.empty() && batches.back().size() < 2) batches.pop_back();
  return batches;
}

namespace detail {

inline Matrix rows_of(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<int> labels_of(const std::vector<int>& y, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

enum class RepPhase { kAll, kHeadOnly, kBodyOnly };

/// One optimizer step on one batch; returns the batch loss.
inline double train_batch(ClientState& s, const Matrix& x, std::span<const int> y, const PrototypeSet& global_protos,
                          std::span<const PrototypeSet> local_sets, const FederationConfig& cfg, RepPhase phase) {
  ForwardResult fwd = forward(s.projector, x, Mode::kTrain, cfg.projector);
  const Temperature tau(cfg.tau);
  LossOutput loss;
  if (cfg.method == Method::kFedPCL) {
    switch (cfg.sources()) {
      case PrototypeSources::kGlobalOnly:
        loss = global_proto_loss(fwd.z, y, global_protos, tau, cfg.denom_mode, cfg.similarity);
        break;
      case PrototypeSources::kLocalOnly:
        loss = local_proto_loss(fwd.z, y, local_sets, tau, cfg.denom_mode, cfg.similarity);
        break;
      case PrototypeSources::kBoth:
        loss = combined_loss(fwd.z, y, global_protos, local_sets, tau, cfg.denom_mode, cfg.similarity);
        break;
    }
  } else {
    const Matrix logits = classifier_forward(*s.head, fwd.z);
    LossOutput ce = cross_entropy_loss(logits, y);
    ClassifierGrads hg = classifier_backward(*s.head, fwd.z, ce.dz);
    loss.value = ce.value;
    loss.dz = std::move(hg.dz);
    if (cfg.method == Method::kFedProto && global_protos.size() > 0) {
      LossOutput reg = proto_dist_term(fwd.z, y, global_protos, cfg.proto_dist_lambda);
      loss.value += reg.value;
      loss.dz += reg.dz;
    }
    if (phase != RepPhase::kBodyOnly) adam_step(*s.head, hg, s.head_adam, cfg.adam);
  }
  require(std::isfinite(loss.value) && loss.dz.all_finite(), ErrorKind::kNumerical,
          "non-finite loss on client " + std::to_string(s.id));
  if (phase != RepPhase::kHeadOnly) {
    const ProjectorGrads g = backward(s.projector, fwd.cache, loss.dz);
    adam_step(s.projector, g, s.projector_adam, cfg.adam);
  }
  return loss.value;
}

}  // namespace detail

/// Local prototypes over the client's full training shard, eval-mode forward.
inline PrototypeSet recompute_local_prototypes(const ClientState& s, const FederationConfig& cfg) {
  return compute_local_prototypes(project(s.projector, s.train_x, cfg.projector), s.train_y, s.id);
}

/// E local epochs of mini-batch training followed by prototype recomputation.
/// For fedpcl the prototype inputs must already be padded to full coverage.
inline LocalUpdateResult local_update(ClientState& state, const PrototypeSet& global_protos,
                                      std::span<const PrototypeSet> local_sets, const FederationConfig& cfg,
                                      Rng& rng) {
  if (cfg.method == Method::kFedPCL) {
    for (int y : state.train_y) {
      if (cfg.sources() != PrototypeSources::kLocalOnly)
        require(global_protos.has(y), ErrorKind::kMissingClass, "global prototypes lack class " + std::to_string(y));
      if (cfg.sources() != PrototypeSources::kGlobalOnly)
        for (const auto& set : local_sets)
          require(set.has(y), ErrorKind::kMissingClass,
                  "local set of client " + std::to_string(set.owner) + " lacks class " + std::to_string(y) +
                      " (pad before training)");
    }
  }
  require(!cfg.uses_classifier() || state.head.has_value(), ErrorKind::kConfig, "classifier head missing");

  LocalUpdateResult out;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::vector<detail::RepPhase> phases = {detail::RepPhase::kAll};
    if (cfg.method == Method::kFedRep) phases = {detail::RepPhase::kHeadOnly, detail::RepPhase::kBodyOnly};
    double sum = 0.0;
    std::size_t count = 0;
    for (auto phase : phases) {
      for (const auto& batch : make_batches(state.train_y.size(), cfg.batch_size, rng)) {
        const Matrix x = detail::rows_of(state.train_x, batch);
        const std::vector<int> y = detail::labels_of(state.train_y, batch);
        sum += detail::train_batch(state, x, y, global_protos, local_sets, cfg, phase);
        ++count;
      }
    }
    out.epoch_losses.push_back(count ? sum / static_cast<double>(count) : 0.0);
  }
  if (cfg.uses_prototypes()) {
    state.local = recompute_local_prototypes(state, cfg);
    out.local = state.local;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter averaging.
// ---------------------------------------------------------------------------

inline void check_weights(std::span<const double> weights, std::size_t n) {
  require(weights.size() == n && n > 0, ErrorKind::kShape, "one weight per parameter set required");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorKind::kParameter, "averaging weights must be >= 0");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorKind::kParameter, "averaging weights must sum to 1");
}

namespace detail {

inline void weighted_accumulate(std::span<double> dst, std::span<const double> src, double w) {
  require(dst.size() == src.size(), ErrorKind::kShape, "tensor shapes differ across clients");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
}

}  // namespace detail

/// Elementwise weighted average of every tensor, running statistics included.
inline ProjectorParams fedavg_aggregate(std::span<const ProjectorParams> params, std::span<const double> weights) {
  check_weights(weights, params.size());
  ProjectorParams out = params[0];
  require(params[0].weight.rows() > 0, ErrorKind::kShape, "empty projector");
  for (auto* t : {&out.bias, &out.bn_gamma, &out.bn_beta, &out.bn_running_mean, &out.bn_running_var})
    std::fill(t->begin(), t->end(), 0.0);
  std::fill(out.weight.data().begin(), out.weight.data().end(), 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    require(p.weight.rows() == out.weight.rows() && p.weight.cols() == out.weight.cols(), ErrorKind::kShape,
            "projector shapes differ across clients");
    const double w = weights[k];
    detail::weighted_accumulate(out.weight.data(), p.weight.data(), w);
    detail::weighted_accumulate(out.bias, p.bias, w);
    detail::weighted_accumulate(out.bn_gamma, p.bn_gamma, w);
    detail::weighted_accumulate(out.bn_beta, p.bn_beta, w);
    detail::weighted_accumulate(out.bn_running_mean, p.bn_running_mean, w);
    detail::weighted_accumulate(out.bn_running_var, p.bn_running_var, w);
  }
  return out;
}

inline ClassifierHead fedavg_aggregate(std::span<const ClassifierHead> heads, std::span<const double> weights) {
  check_weights(weights, heads.size());
  ClassifierHead out = heads[0];
  std::fill(out.weight.data().begin(), out.weight.data().end(), 0.0);
  std::fill(out.bias.begin(), out.bias.end(), 0.0);
  for (std::size_t k = 0; k < heads.size(); ++k) {
    require(heads[k].weight.rows() == out.weight.rows() && heads[k].weight.cols() == out.weight.cols(),
            ErrorKind::kShape, "classifier shapes differ across clients");
    detail::weighted_accumulate(out.weight.data(), heads[k].weight.data(), weights[k]);
    detail::weighted_accumulate(out.bias, heads[k].bias, weights[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training driver.
// ---------------------------------------------------------------------------

struct RunOptions {
  std::size_t threads = 1;
};

struct TrainingResult {
  std::vector<RoundRecord> history;
  std::vector<ClientState> clients;
  PrototypeSet global_protos;
  std::vector<PrototypeSet> padded_sets;
  std::vector<std::vector<UploadPayload>> uploads;  // final round, one payload per client
  std::size_t n_classes = 0;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; the first exception is rethrown after all workers join.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::jthread> workers;
  for (std::size_t t = 0; t < threads; ++t)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  workers.clear();
  if (error) std::rethrow_exception(error);
}

namespace detail {

enum SeedTag : std::uint64_t { kInitTag = 1, kTrainTag = 2, kNoiseTag = 3, kHeadTag = 4 };

inline UploadPayload make_upload(const ClientState& s, const FederationConfig& cfg, std::size_t round) {
  UploadPayload up;
  up.sample_count = s.train_y.size();
  switch (cfg.method) {
    case Method::kFedPCL:
    case Method::kFedProto: {
      PrototypeSet sent = s.local;
      if (cfg.prototype_noise) {
        Rng noise_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s.id), round, kNoiseTag}));
        for (auto& [cls, e] : sent.entries)
          e.vec = inject_noise(e.vec, cfg.prototype_noise->dist, cfg.prototype_noise->scale, cfg.prototype_noise->p,
                               noise_rng);
      }
      up.prototypes = std::move(sent);
      break;
    }
    case Method::kFedAvg:
      up.projector = s.projector;
      up.head = s.head;
      break;
    case Method::kFedRep:
      up.projector = s.projector;
      break;
    case Method::kSolo:
      break;
  }
  return up;
}

inline PrototypeSet padded_view(const ClientState& s, const PrototypeSet& global) {
  const PrototypeSet own[] = {s.local};
  return pad_local_sets(own, global).front();
}

}  // namespace detail

inline std::vector<ClientState> make_clients(const FederationConfig& cfg, const EmbeddingDataset& ds,
                                             const PartitionAssignment& assignment) {
  require(assignment.size() == cfg.clients, ErrorKind::kConfig,
          "partition has " + std::to_string(assignment.size()) + " clients, config expects " +
              std::to_string(cfg.clients));
  require(ds.backbones == cfg.backbones && ds.embed_dim == cfg.embed_dim, ErrorKind::kConfig,
          "dataset embedding layout (K=" + std::to_string(ds.backbones) + ", d_e=" + std::to_string(ds.embed_dim) +
              ") does not match config");
  std::vector<ClientState> clients(cfg.clients);
  const bool shared_init = cfg.method == Method::kFedAvg || cfg.method == Method::kFedRep;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    auto& c = clients[i];
    c.id = static_cast<int>(i);
    const auto& shard = assignment.clients[i];
    require(!shard.train.empty(), ErrorKind::kConfig, "client " + std::to_string(i) + " has an empty shard");
    c.train_x = gather_rows(ds, shard.train);
    c.train_y = gather_labels(ds, shard.train);
    c.test_x = gather_rows(ds, shard.test);
    c.test_y = gather_labels(ds, shard.test);
    const std::uint64_t init_id = shared_init ? 0 : i;
    Rng init_rng(derive_seed(cfg.seed, {init_id, 0, detail::kInitTag}));
    c.projector = init_params(init_rng, cfg.backbones, cfg.embed_dim, cfg.proj_dim);
    if (cfg.uses_classifier()) {
      Rng head_rng(derive_seed(cfg.seed, {cfg.method == Method::kFedAvg ? 0 : i, 0, detail::kHeadTag}));
      c.head = init_classifier(head_rng, cfg.proj_dim, ds.n_classes);
    }
  }
  return clients;
}

/// Test accuracy with the method's inference rule: fedpcl scores against the
/// client's padded local prototypes; classifier methods take the argmax logit.
inline double client_accuracy(const ClientState& s, const FederationConfig& cfg, const PrototypeSet& global) {
  if (s.test_y.empty()) return 0.0;
  const Matrix z = project(s.projector, s.test_x, cfg.projector);
  if (cfg.method == Method::kFedPCL)
    return prototype_accuracy(z, s.test_y, detail::padded_view(s, global), cfg.similarity == Similarity::kCosine);
  return classifier_accuracy(classifier_forward(*s.head, z), s.test_y);
}

/// Executes the configured protocol for cfg.rounds rounds. Results are a pure
/// function of (cfg, ds, assignment); the thread count only changes speed.
inline TrainingResult run_training(const FederationConfig& cfg, const EmbeddingDataset& ds,
                                   const PartitionAssignment& assignment, const RunOptions& opts = {}) {
  validate(cfg);
  TrainingResult res;
  res.n_classes = ds.n_classes;
  res.clients = make_clients(cfg, ds, assignment);
  auto& clients = res.clients;
  const std::size_t m = clients.size();

  std::size_t total_train = 0;
  for (const auto& c : clients) total_train += c.train_y.size();
  std::vector<double> weights;
  for (const auto& c : clients)
    weights.push_back(static_cast<double>(c.train_y.size()) / static_cast<double>(total_train));

  auto server_prototypes = [&](const std::vector<UploadPayload>& uploads) {
    std::vector<PrototypeSet> sets;
    for (const auto& u : uploads) sets.push_back(*u.prototypes);
    res.global_protos = aggregate_global(sets, cfg.aggregation);
    if (cfg.method == Method::kFedPCL) res.padded_sets = pad_local_sets(sets, res.global_protos);
  };

  // Prototype bootstrap: prototypes from the freshly initialized projectors
  // stand in for the initial prototype sets.
  if (cfg.uses_prototypes()) {
    std::vector<UploadPayload> uploads(m);
    parallel_for(m, opts.threads, [&](std::size_t i) {
      clients[i].local = recompute_local_prototypes(clients[i], cfg);
      uploads[i] = detail::make_upload(clients[i], cfg, 0);
    });
    server_prototypes(uploads);
  }

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    std::vector<LocalUpdateResult> results(m);
    std::vector<UploadPayload> uploads(m);
    parallel_for(m, opts.threads, [&](std::size_t i) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(i), round, detail::kTrainTag}));
      results[i] = local_update(clients[i], res.global_protos, res.padded_sets, cfg, rng);
      uploads[i] = detail::make_upload(clients[i], cfg, round);
    });

    switch (cfg.method) {
      case Method::kFedPCL:
      case Method::kFedProto:
        server_prototypes(uploads);
        break;
      case Method::kFedAvg:
      case Method::kFedRep: {
        std::vector<ProjectorParams> bodies;
        for (const auto& u : uploads) bodies.push_back(*u.projector);
        const ProjectorParams avg = fedavg_aggregate(bodies, weights);
        std::optional<ClassifierHead> avg_head;
        if (cfg.method == Method::kFedAvg) {
          std::vector<ClassifierHead> heads;
          for (const auto& u : uploads) heads.push_back(*u.head);
          avg_head = fedavg_aggregate(heads, weights);
        }
        for (auto& c : clients) {
          c.projector = avg;
          if (avg_head) c.head = avg_head;
        }
        break;
      }
      case Method::kSolo:
        break;
    }

    std::vector<double> acc(m);
    parallel_for(m, opts.threads, [&](std::size_t i) { acc[i] = client_accuracy(clients[i], cfg, res.global_protos); });

    const std::uint64_t n_global = res.global_protos.size();
    for (std::size_t i = 0; i < m; ++i) {
      RoundRecord r;
      r.round = round;
      r.client_id = clients[i].id;
      r.train_loss = results[i].mean_loss();
      r.test_acc = acc[i];
      r.params_up = uploads[i].param_count();
      switch (cfg.method) {
        case Method::kFedPCL: r.params_down = (1 + m) * n_global * cfg.proj_dim; break;
        case Method::kFedProto: r.params_down = n_global * cfg.proj_dim; break;
        case Method::kFedAvg:
        case Method::kFedRep: r.params_down = r.params_up; break;
        case Method::kSolo: r.params_down = 0; break;
      }
      res.history.push_back(r);
    }
    if (round == cfg.rounds) res.uploads.push_back(std::move(uploads));
  }
  return res;
}

/// Per-client accuracies of the final round.
inline std::vector<double> final_accuracies(const std::vector<RoundRecord>& history) {
  std::size_t last = 0;
  for (const auto& r : history) last = std::max(last, r.round);
  std::vector<double> out;
  for (const auto& r : history)
    if (r.round == last) out.push_back(r.test_acc);
  return out;
}

inline std::string history_csv(const std::vector<RoundRecord>& history) {
  std::string out = "round,client_id,train_loss,test_acc,params_up,params_down\n";
  for (const auto& r : history) {
    out += std::to_string(r.round) + "," + std::to_string(r.client_id) + "," + detail::format_double(r.train_loss) +
           "," + detail::format_double(r.test_acc) + "," + std::to_string(r.params_up) + "," +
           std::to_string(r.params_down) + "\n";
  }
  return out;
}

}  // namespace fedpcl
