#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpcl/detail/binary_io.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/linalg.hpp"

namespace fedpcl {

// Projection network: z = Norm(ReLU(x·W + b)), with Norm one of batch norm
// (the default), row-wise L2 normalization, or identity.

enum class Normalization { kBatchNorm, kL2, kNone };
enum class Mode { kTrain, kEval };

inline const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::kBatchNorm: return "batchnorm";
    case Normalization::kL2: return "l2";
    case Normalization::kNone: return "none";
  }
  return "?";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "batchnorm") return Normalization::kBatchNorm;
  if (s == "l2") return Normalization::kL2;
  if (s == "none") return Normalization::kNone;
  fail(ErrorKind::kConfig, "unknown normalization '" + s + "'");
}

struct ProjectorConfig {
  Normalization normalization = Normalization::kBatchNorm;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double l2_eps = 1e-12;
};

struct ProjectorParams {
  Matrix weight;  // (K·d_e) x d_h
  Vector bias;
  Vector bn_gamma;
  Vector bn_beta;
  Vector bn_running_mean;
  Vector bn_running_var;

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t output_dim() const { return weight.cols(); }

  /// Learnable tensors in declaration order; running stats are not learnable.
  std::vector<std::span<double>> learnables() {
    return {weight.data(), bias, bn_gamma, bn_beta};
  }

  friend bool operator==(const ProjectorParams&, const ProjectorParams&) = default;
};

struct ProjectorGrads {
  Matrix weight;
  Vector bias;
  Vector bn_gamma;
  Vector bn_beta;

  std::vector<std::span<const double>> tensors() const {
    return {weight.data(), bias, bn_gamma, bn_beta};
  }
};

struct ForwardCache {
  Mode mode = Mode::kEval;
  Normalization normalization = Normalization::kBatchNorm;
  Matrix input;
  Matrix pre_activation;
  Matrix activation;
  Vector mean;     // batch-norm statistics used
  Vector var;      // biased (1/n) in train mode, running in eval mode
  Vector inv_std;
  Matrix normalized;  // x-hat for batch norm, unit rows for l2
  Vector row_scale;   // l2: sqrt(|h|^2 + eps) per row
};

struct ForwardResult {
  Matrix z;
  ForwardCache cache;
};

inline ProjectorParams init_params(Rng& rng, std::size_t backbones, std::size_t embed_dim,
                                   std::size_t proj_dim) {
  require(backbones >= 1 && embed_dim >= 1 && proj_dim >= 1, ErrorKind::kParameter,
          "projector dimensions must be >= 1");
  const std::size_t fan_in = backbones * embed_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ProjectorParams p;
  p.weight = Matrix(fan_in, proj_dim);
  for (double& w : p.weight.data()) w = rng.uniform(-bound, bound);
  p.bias.assign(proj_dim, 0.0);
  p.bn_gamma.assign(proj_dim, 1.0);
  p.bn_beta.assign(proj_dim, 0.0);
  p.bn_running_mean.assign(proj_dim, 0.0);
  p.bn_running_var.assign(proj_dim, 1.0);
  return p;
}

namespace detail {

inline void check_projector_input(const ProjectorParams& params, const Matrix& batch) {
  require(batch.cols() == params.input_dim(), ErrorKind::kShape,
          "batch has " + std::to_string(batch.cols()) + " columns, projector expects " +
              std::to_string(params.input_dim()));
}

inline ForwardResult forward_impl(const ProjectorParams& params, const Matrix& batch, Mode mode,
                                  const ProjectorConfig& cfg, Vector* new_running_mean,
                                  Vector* new_running_var) {
  check_projector_input(params, batch);
  const std::size_t n = batch.rows();
  const std::size_t d = params.output_dim();
  if (mode == Mode::kTrain && cfg.normalization == Normalization::kBatchNorm)
    require(n >= 2, ErrorKind::kBatchSize, "train-mode batch norm needs at least 2 rows");

  ForwardResult out;
  ForwardCache& c = out.cache;
  c.mode = mode;
  c.normalization = cfg.normalization;
  c.input = batch;
  c.pre_activation = matmul(batch, params.weight);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) c.pre_activation(i, j) += params.bias[j];
  c.activation = c.pre_activation;
  for (double& v : c.activation.data()) v = v > 0.0 ? v : 0.0;

  switch (cfg.normalization) {
    case Normalization::kNone:
      out.z = c.activation;
      break;
    case Normalization::kL2: {
      out.z = Matrix(n, d);
      c.row_scale.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto h = c.activation.row(i);
        const double s = std::sqrt(dot(h, h) + cfg.l2_eps);
        c.row_scale[i] = s;
        for (std::size_t j = 0; j < d; ++j) out.z(i, j) = h[j] / s;
      }
      c.normalized = out.z;
      break;
    }
    case Normalization::kBatchNorm: {
      c.mean.assign(d, 0.0);
      c.var.assign(d, 0.0);
      if (mode == Mode::kTrain) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) c.mean[j] += c.activation(i, j);
        for (double& m : c.mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = c.activation(i, j) - c.mean[j];
            c.var[j] += diff * diff;
          }
        for (double& v : c.var) v /= static_cast<double>(n);
        if (new_running_mean && new_running_var) {
          const double mu = cfg.bn_momentum;
          const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
          for (std::size_t j = 0; j < d; ++j) {
            (*new_running_mean)[j] = (1.0 - mu) * params.bn_running_mean[j] + mu * c.mean[j];
            (*new_running_var)[j] = (1.0 - mu) * params.bn_running_var[j] + mu * c.var[j] * unbias;
          }
        }
      } else {
        c.mean = params.bn_running_mean;
        c.var = params.bn_running_var;
      }
      c.inv_std.resize(d);
      for (std::size_t j = 0; j < d; ++j) c.inv_std[j] = 1.0 / std::sqrt(c.var[j] + cfg.bn_eps);
      c.normalized = Matrix(n, d);
      out.z = Matrix(n, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = (c.activation(i, j) - c.mean[j]) * c.inv_std[j];
          c.normalized(i, j) = xhat;
          out.z(i, j) = params.bn_gamma[j] * xhat + params.bn_beta[j];
        }
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Forward pass. Train mode with batch norm updates the running statistics
/// in place: running <- (1 - momentum)·running + momentum·batch_stat, with
/// the unbiased batch variance.
inline ForwardResult forward(ProjectorParams& params, const Matrix& batch, Mode mode,
                             const ProjectorConfig& cfg = {}) {
  if (mode == Mode::kEval) return detail::forward_impl(params, batch, mode, cfg, nullptr, nullptr);
  Vector rm(params.output_dim()), rv(params.output_dim());
  ForwardResult out = detail::forward_impl(params, batch, mode, cfg, &rm, &rv);
  if (cfg.normalization == Normalization::kBatchNorm) {
    params.bn_running_mean = std::move(rm);
    params.bn_running_var = std::move(rv);
  }
  return out;
}

/// Eval-mode forward; never mutates params.
inline Matrix project(const ProjectorParams& params, const Matrix& batch,
                      const ProjectorConfig& cfg = {}) {
  return detail::forward_impl(params, batch, Mode::kEval, cfg, nullptr, nullptr).z;
}

inline ProjectorGrads backward(const ProjectorParams& params, const ForwardCache& cache,
                               const Matrix& dz) {
  require(cache.mode == Mode::kTrain, ErrorKind::kMode, "backward needs a train-mode cache");
  const std::size_t n = cache.activation.rows();
  const std::size_t d = cache.activation.cols();
  require(dz.rows() == n && dz.cols() == d, ErrorKind::kShape, "dz shape does not match z");

  ProjectorGrads g;
  g.bn_gamma.assign(d, 0.0);
  g.bn_beta.assign(d, 0.0);
  Matrix dh(n, d);

  switch (cache.normalization) {
    case Normalization::kNone:
      dh = dz;
      break;
    case Normalization::kL2:
      for (std::size_t i = 0; i < n; ++i) {
        const double s = cache.row_scale[i];
        const double proj = dot(cache.normalized.row(i), dz.row(i));
        for (std::size_t j = 0; j < d; ++j)
          dh(i, j) = (dz(i, j) - cache.normalized(i, j) * proj) / s;
      }
      break;
    case Normalization::kBatchNorm: {
      const double inv_n = 1.0 / static_cast<double>(n);
      Vector sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = cache.normalized(i, j);
          g.bn_gamma[j] += dz(i, j) * xhat;
          g.bn_beta[j] += dz(i, j);
          const double dxhat = dz(i, j) * params.bn_gamma[j];
          sum_dxhat[j] += dxhat;
          sum_dxhat_xhat[j] += dxhat * xhat;
        }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double dxhat = dz(i, j) * params.bn_gamma[j];
          dh(i, j) = cache.inv_std[j] * inv_n *
                     (static_cast<double>(n) * dxhat - sum_dxhat[j] -
                      cache.normalized(i, j) * sum_dxhat_xhat[j]);
        }
      break;
    }
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (cache.pre_activation(i, j) <= 0.0) dh(i, j) = 0.0;

  g.weight = matmul_tn(cache.input, dh);
  g.bias.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.bias[j] += dh(i, j);
  return g;
}

// ---------------------------------------------------------------------------
// Linear classifier head used by the parameter-sharing baselines.
// ---------------------------------------------------------------------------

struct ClassifierHead {
  Matrix weight;  // d_h x n_classes
  Vector bias;

  std::vector<std::span<double>> learnables() { return {weight.data(), bias}; }
  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

struct ClassifierGrads {
  Matrix weight;
  Vector bias;
  Matrix dz;

  std::vector<std::span<const double>> tensors() const { return {weight.data(), bias}; }
};

inline ClassifierHead init_classifier(Rng& rng, std::size_t proj_dim, std::size_t n_classes) {
  require(proj_dim >= 1 && n_classes >= 1, ErrorKind::kParameter, "classifier dims must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(proj_dim));
  ClassifierHead h;
  h.weight = Matrix(proj_dim, n_classes);
  for (double& w : h.weight.data()) w = rng.uniform(-bound, bound);
  h.bias.assign(n_classes, 0.0);
  return h;
}

inline Matrix classifier_forward(const ClassifierHead& head, const Matrix& z) {
  Matrix logits = matmul(z, head.weight);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += head.bias[j];
  return logits;
}

inline ClassifierGrads classifier_backward(const ClassifierHead& head, const Matrix& z,
                                           const Matrix& dlogits) {
  ClassifierGrads g;
  g.weight = matmul_tn(z, dlogits);
  g.bias.assign(head.bias.size(), 0.0);
  for (std::size_t i = 0; i < dlogits.rows(); ++i)
    for (std::size_t j = 0; j < dlogits.cols(); ++j) g.bias[j] += dlogits(i, j);
  g.dz = matmul_nt(dlogits, head.weight);
  return g;
}

// ---------------------------------------------------------------------------
// Adam with L2-coupled weight decay: g <- g + wd·θ before the moment updates.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::int64_t step_count = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void validate(const AdamConfig& cfg) {
  require(cfg.lr > 0.0, ErrorKind::kParameter, "adam lr must be > 0");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, ErrorKind::kParameter, "adam beta1 must be in [0,1)");
  require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, ErrorKind::kParameter, "adam beta2 must be in [0,1)");
  require(cfg.eps >= 0.0, ErrorKind::kParameter, "adam eps must be >= 0");
  require(cfg.weight_decay >= 0.0, ErrorKind::kParameter, "weight decay must be >= 0");
}

inline void adam_update(std::vector<std::span<double>> params,
                        const std::vector<std::span<const double>>& grads, AdamState& state,
                        const AdamConfig& cfg) {
  validate(cfg);
  require(params.size() == grads.size(), ErrorKind::kShape, "adam param/grad count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), ErrorKind::kShape, "adam state mismatch");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    require(p.size() == g.size() && p.size() == m.size(), ErrorKind::kShape,
            "adam tensor size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

inline void adam_step(ProjectorParams& params, const ProjectorGrads& grads, AdamState& state,
                      const AdamConfig& cfg) {
  adam_update(params.learnables(), grads.tensors(), state, cfg);
}

inline void adam_step(ClassifierHead& head, const ClassifierGrads& grads, AdamState& state,
                      const AdamConfig& cfg) {
  adam_update(head.learnables(), grads.tensors(), state, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoint: one JSON header line, then weight, bias, gamma, beta, running
// mean, running var as little-endian float32.
// ---------------------------------------------------------------------------

inline std::string encode_checkpoint(const ProjectorParams& p, const std::string& config_hash) {
  nlohmann::json header = {{"format", "fedpcl-projector"},
                           {"version", 1},
                           {"input_dim", p.input_dim()},
                           {"output_dim", p.output_dim()},
                           {"config_hash", config_hash}};
  std::string out = header.dump() + "\n";
  for (double v : p.weight.data()) detail::append_f32_le(out, v);
  for (const Vector* t : {&p.bias, &p.bn_gamma, &p.bn_beta, &p.bn_running_mean, &p.bn_running_var})
    for (double v : *t) detail::append_f32_le(out, v);
  return out;
}

inline ProjectorParams decode_checkpoint(std::string_view bytes, std::string* config_hash = nullptr) {
  const auto nl = bytes.find('\n');
  require(nl != std::string_view::npos, ErrorKind::kFormat, "checkpoint header missing at offset 0");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint header at offset 0: ") + e.what());
  }
  require(header.value("format", "") == "fedpcl-projector", ErrorKind::kFormat, "not a projector checkpoint");
  const std::size_t in = header.at("input_dim").get<std::size_t>();
  const std::size_t outd = header.at("output_dim").get<std::size_t>();
  const std::size_t count = in * outd + 5 * outd;
  std::size_t off = nl + 1;
  require(bytes.size() - off == count * 4, ErrorKind::kFormat,
          "checkpoint payload at offset " + std::to_string(off) + " has " +
              std::to_string(bytes.size() - off) + " bytes, expected " + std::to_string(count * 4));
  ProjectorParams p;
  p.weight = Matrix(in, outd);
  for (double& v : p.weight.data()) { v = detail::read_f32_le(bytes, off); off += 4; }
  for (Vector* t : {&p.bias, &p.bn_gamma, &p.bn_beta, &p.bn_running_mean, &p.bn_running_var}) {
    t->resize(outd);
    for (double& v : *t) { v = detail::read_f32_le(bytes, off); off += 4; }
  }
  if (config_hash) *config_hash = header.value("config_hash", "");
  return p;
}

}  // namespace fedpcl
