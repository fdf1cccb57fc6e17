#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedpcl/error.hpp"
#include "fedpcl/linalg.hpp"
#include "fedpcl/prototypes.hpp"

namespace fedpcl {

/// Scalar batch-mean loss together with its gradient w.r.t. the loss input.
struct LossOutput {
  double value = 0.0;
  Matrix dz;
  bool degenerate = false;  // set when the batch admits no contrast (loss defined as 0)
};

class Temperature {
 public:
  explicit Temperature(double tau) : tau_(tau) {
    require(tau > 0.0 && std::isfinite(tau), ErrorKind::kParameter, "temperature must be > 0");
  }
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

/// exclude_positive sums the softmax denominator over the negatives only;
/// include_positive is the usual InfoNCE denominator over every class.
enum class DenomMode { kExcludePositive, kIncludePositive };

/// Raw inner product, or cosine (z and prototypes L2-normalized first).
enum class Similarity { kDot, kCosine };

inline const char* to_string(DenomMode m) {
  return m == DenomMode::kExcludePositive ? "exclude_positive" : "include_positive";
}
inline DenomMode parse_denom_mode(const std::string& s) {
  if (s == "exclude_positive") return DenomMode::kExcludePositive;
  if (s == "include_positive") return DenomMode::kIncludePositive;
  fail(ErrorKind::kConfig, "unknown denominator mode '" + s + "'");
}
inline const char* to_string(Similarity s) { return s == Similarity::kDot ? "dot" : "cosine"; }
inline Similarity parse_similarity(const std::string& s) {
  if (s == "dot") return Similarity::kDot;
  if (s == "cosine") return Similarity::kCosine;
  fail(ErrorKind::kConfig, "unknown similarity '" + s + "'");
}

namespace detail {

inline constexpr double kNormEps = 1e-12;

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

/// Pulls a gradient w.r.t. u = z / sqrt(|z|^2 + eps) back to z.
inline void unnormalize_grad(std::span<const double> z, std::span<double> du) {
  const double s = std::sqrt(dot(z, z) + kNormEps);
  const double zdu = dot(z, du);
  for (std::size_t k = 0; k < z.size(); ++k) du[k] = du[k] / s - z[k] * zdu / (s * s * s);
}

inline Vector normalized(std::span<const double> v) {
  const double s = std::sqrt(dot(v, v) + kNormEps);
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= s;
  return out;
}

/// Summed (not averaged) prototype-contrastive loss of the batch against one
/// set; gradient accumulated into dz with the given scale.
inline double proto_contrast_sum(const Matrix& z, std::span<const int> labels, const PrototypeSet& set,
                                 const Temperature& tau, DenomMode denom, Similarity sim,
                                 double grad_scale, Matrix& dz) {
  require(z.rows() == labels.size(), ErrorKind::kShape, "z rows and label count differ");
  require(set.size() >= 2, ErrorKind::kDegenerateLoss,
          "prototype contrast needs at least 2 classes, got " + std::to_string(set.size()));
  require(z.cols() == set.dim, ErrorKind::kShape, "z dim " + std::to_string(z.cols()) +
                                                      " != prototype dim " + std::to_string(set.dim));
  const std::size_t n_cls = set.size();
  std::vector<int> classes = set.classes();
  std::vector<Vector> protos;
  protos.reserve(n_cls);
  for (int c : classes) protos.push_back(sim == Similarity::kCosine ? normalized(set.at(c)) : set.at(c));

  const double t = tau.value();
  double total = 0.0;
  std::vector<double> scores(n_cls), denom_scores;
  Vector du(z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto pos_it = std::lower_bound(classes.begin(), classes.end(), labels[i]);
    if (pos_it == classes.end() || *pos_it != labels[i])
      fail(ErrorKind::kMissingClass, "no prototype for label " + std::to_string(labels[i]) +
                                         " in set of owner " + std::to_string(set.owner));
    const std::size_t pos = static_cast<std::size_t>(pos_it - classes.begin());
    const Vector u = sim == Similarity::kCosine ? normalized(z.row(i)) : Vector(z.row(i).begin(), z.row(i).end());
    for (std::size_t k = 0; k < n_cls; ++k) scores[k] = dot(u, protos[k]) / t;

    denom_scores.clear();
    for (std::size_t k = 0; k < n_cls; ++k)
      if (denom == DenomMode::kIncludePositive || k != pos) denom_scores.push_back(scores[k]);
    const double lse = log_sum_exp(denom_scores);
    total += lse - scores[pos];

    std::fill(du.begin(), du.end(), 0.0);
    for (std::size_t k = 0; k < n_cls; ++k) {
      double coef = 0.0;
      if (denom == DenomMode::kIncludePositive || k != pos) coef += std::exp(scores[k] - lse);
      if (k == pos) coef -= 1.0;
      if (coef == 0.0) continue;
      for (std::size_t c = 0; c < du.size(); ++c) du[c] += coef * protos[k][c] / t;
    }
    if (sim == Similarity::kCosine) unnormalize_grad(z.row(i), du);
    auto g = dz.row(i);
    for (std::size_t c = 0; c < du.size(); ++c) g[c] += grad_scale * du[c];
  }
  return total;
}

}  // namespace detail

/// Contrast of each sample against the global prototypes, averaged over the batch.
inline LossOutput global_proto_loss(const Matrix& z, std::span<const int> labels,
                                    const PrototypeSet& global_protos, const Temperature& tau,
                                    DenomMode denom = DenomMode::kExcludePositive,
                                    Similarity sim = Similarity::kDot) {
  require(z.rows() >= 1, ErrorKind::kShape, "empty batch");
  LossOutput out;
  out.dz = Matrix(z.rows(), z.cols());
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  out.value = detail::proto_contrast_sum(z, labels, global_protos, tau, denom, sim, inv_n, out.dz) * inv_n;
  return out;
}

/// Mean over the m (padded) local prototype sets of the same contrast.
inline LossOutput local_proto_loss(const Matrix& z, std::span<const int> labels,
                                   std::span<const PrototypeSet> local_sets, const Temperature& tau,
                                   DenomMode denom = DenomMode::kExcludePositive,
                                   Similarity sim = Similarity::kDot) {
  require(z.rows() >= 1, ErrorKind::kShape, "empty batch");
  require(!local_sets.empty(), ErrorKind::kEmptySet, "local_proto_loss needs at least one set");
  LossOutput out;
  out.dz = Matrix(z.rows(), z.cols());
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  const double inv_m = 1.0 / static_cast<double>(local_sets.size());
  double total = 0.0;
  for (const auto& set : local_sets)
    total += detail::proto_contrast_sum(z, labels, set, tau, denom, sim, inv_n * inv_m, out.dz);
  out.value = total * inv_n * inv_m;
  return out;
}

inline LossOutput combined_loss(const Matrix& z, std::span<const int> labels,
                                const PrototypeSet& global_protos,
                                std::span<const PrototypeSet> local_sets, const Temperature& tau,
                                DenomMode denom = DenomMode::kExcludePositive,
                                Similarity sim = Similarity::kDot) {
  LossOutput g = global_proto_loss(z, labels, global_protos, tau, denom, sim);
  LossOutput p = local_proto_loss(z, labels, local_sets, tau, denom, sim);
  g.value += p.value;
  g.dz += p.dz;
  return g;
}

/// Mean negative log-softmax of the true class; gradient w.r.t. the logits.
inline LossOutput cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  require(logits.rows() == labels.size() && logits.rows() >= 1, ErrorKind::kShape,
          "logits rows and label count differ");
  LossOutput out;
  out.dz = Matrix(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < logits.cols(), ErrorKind::kLabel,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(logits.cols()) + ")");
    auto row = logits.row(i);
    const double lse = detail::log_sum_exp(row);
    total += lse - row[y];
    auto g = out.dz.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) g[k] = std::exp(row[k] - lse) * inv_n;
    g[y] -= inv_n;
  }
  out.value = total * inv_n;
  return out;
}

/// lambda · mean squared distance to the sample's global prototype.
inline LossOutput proto_dist_term(const Matrix& z, std::span<const int> labels,
                                  const PrototypeSet& global_protos, double lambda = 1.0) {
  require(z.rows() == labels.size() && z.rows() >= 1, ErrorKind::kShape, "z rows and label count differ");
  require(z.cols() == global_protos.dim, ErrorKind::kShape, "z dim differs from prototype dim");
  LossOutput out;
  out.dz = Matrix(z.rows(), z.cols());
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const Vector& c = global_protos.at(labels[i]);
    auto zr = z.row(i);
    auto g = out.dz.row(i);
    for (std::size_t k = 0; k < zr.size(); ++k) {
      const double diff = zr[k] - c[k];
      total += diff * diff;
      g[k] = 2.0 * lambda * diff * inv_n;
    }
  }
  out.value = lambda * total * inv_n;
  return out;
}

/// Batch-wise supervised contrastive loss on L2-normalized embeddings.
/// Anchors with no same-class partner are skipped; the loss is the mean over
/// the remaining anchors. A batch with positives but no negatives yields 0
/// with the degenerate flag raised.
inline LossOutput supcon_batch_loss(const Matrix& z, std::span<const int> labels, const Temperature& tau) {
  require(z.rows() == labels.size(), ErrorKind::kShape, "z rows and label count differ");
  require(z.rows() >= 2, ErrorKind::kBatchSize, "supervised contrastive loss needs batch >= 2");
  const std::size_t n = z.rows();
  const double t = tau.value();
  std::vector<Vector> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = detail::normalized(z.row(i));

  std::vector<std::size_t> anchors;
  bool any_negative = false;
  for (std::size_t i = 0; i < n; ++i) {
    bool has_pos = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) has_pos = true;
      else any_negative = true;
    }
    if (has_pos) anchors.push_back(i);
  }
  require(!anchors.empty(), ErrorKind::kDegenerateBatch, "no anchor has a positive in the batch");

  LossOutput out;
  out.dz = Matrix(n, z.cols());
  out.degenerate = !any_negative;
  std::vector<Vector> du(n, Vector(z.cols(), 0.0));
  const double inv_anchors = 1.0 / static_cast<double>(anchors.size());
  std::vector<double> scores;
  double total = 0.0;
  for (std::size_t i : anchors) {
    scores.clear();
    std::vector<std::size_t> others;
    std::size_t n_pos = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      others.push_back(a);
      scores.push_back(dot(u[i], u[a]) / t);
      if (labels[a] == labels[i]) ++n_pos;
    }
    const double lse = detail::log_sum_exp(scores);
    double li = 0.0;
    for (std::size_t k = 0; k < others.size(); ++k) {
      const std::size_t a = others[k];
      const bool pos = labels[a] == labels[i];
      if (pos) li += lse - scores[k];
      // dL_i / d s_ia
      double coef = std::exp(scores[k] - lse) - (pos ? 1.0 / static_cast<double>(n_pos) : 0.0);
      coef *= inv_anchors / t;
      for (std::size_t c = 0; c < z.cols(); ++c) {
        du[i][c] += coef * u[a][c];
        du[a][c] += coef * u[i][c];
      }
    }
    total += li / static_cast<double>(n_pos);
  }
  out.value = total * inv_anchors;
  for (std::size_t i = 0; i < n; ++i) {
    detail::unnormalize_grad(z.row(i), du[i]);
    auto g = out.dz.row(i);
    for (std::size_t c = 0; c < z.cols(); ++c) g[c] = du[i][c];
  }
  return out;
}

}  // namespace fedpcl
