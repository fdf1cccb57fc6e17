#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpcl/detail/binary_io.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/linalg.hpp"
#include "fedpcl/losses.hpp"
#include "fedpcl/prototypes.hpp"

namespace fedpcl {

/// Class whose prototype scores highest against z; ties go to the lower id.
inline int predict(std::span<const double> z, const PrototypeSet& protos, bool normalize = false) {
  require(protos.size() > 0, ErrorKind::kEmptySet, "predict needs a non-empty prototype set");
  require(z.size() == protos.dim, ErrorKind::kShape, "z dim differs from prototype dim");
  const double zn = normalize ? norm2(z) : 1.0;
  int best = 0;
  double best_score = 0.0;
  bool first = true;
  for (const auto& [cls, e] : protos.entries) {
    double score = dot(z, e.vec);
    if (normalize) {
      const double denom = zn * norm2(e.vec);
      score = denom > 0.0 ? score / denom : 0.0;
    }
    if (first || score > best_score) {
      best = cls;
      best_score = score;
      first = false;
    }
  }
  return best;
}

/// Fraction of rows of z whose predicted class matches the label.
inline double prototype_accuracy(const Matrix& z, std::span<const int> labels, const PrototypeSet& protos,
                                 bool normalize = false) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < z.rows(); ++i)
    if (predict(z.row(i), protos, normalize) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double classifier_accuracy(const Matrix& logits, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct FairnessReport {
  double average = 0.0;
  double worst10 = 0.0;
  double worst20 = 0.0;
  double worst40 = 0.0;
  double best10 = 0.0;
  double variance = 0.0;  // population variance
};

/// Mean of the lowest ceil(q·m/100) entries of an ascending list.
inline double worst_fraction_mean(std::span<const double> sorted_asc, double percent) {
  const auto m = sorted_asc.size();
  auto k = static_cast<std::size_t>(std::ceil(percent * static_cast<double>(m) / 100.0 - 1e-9));
  k = std::clamp<std::size_t>(k, 1, m);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += sorted_asc[i];
  return acc / static_cast<double>(k);
}

inline FairnessReport fairness_report(std::span<const double> per_client_acc) {
  require(!per_client_acc.empty(), ErrorKind::kEmptySet, "fairness report needs at least one client");
  std::vector<double> sorted(per_client_acc.begin(), per_client_acc.end());
  std::sort(sorted.begin(), sorted.end());
  FairnessReport r;
  for (double a : sorted) r.average += a;
  r.average /= static_cast<double>(sorted.size());
  for (double a : sorted) r.variance += (a - r.average) * (a - r.average);
  r.variance /= static_cast<double>(sorted.size());
  r.worst10 = worst_fraction_mean(sorted, 10.0);
  r.worst20 = worst_fraction_mean(sorted, 20.0);
  r.worst40 = worst_fraction_mean(sorted, 40.0);
  std::vector<double> desc(sorted.rbegin(), sorted.rend());
  r.best10 = worst_fraction_mean(desc, 10.0);
  return r;
}

struct MetricsReport {
  std::vector<double> per_client_accuracy;
  double mean = 0.0;
  double std_dev = 0.0;  // population
  FairnessReport fairness;
  nlohmann::json comm_ledger;
};

inline MetricsReport make_metrics_report(std::span<const double> per_client_acc, nlohmann::json comm_ledger = {}) {
  MetricsReport r;
  r.per_client_accuracy.assign(per_client_acc.begin(), per_client_acc.end());
  r.fairness = fairness_report(per_client_acc);
  r.mean = r.fairness.average;
  r.std_dev = std::sqrt(r.fairness.variance);
  r.comm_ledger = std::move(comm_ledger);
  return r;
}

inline nlohmann::json to_json(const FairnessReport& f) {
  return {{"average", f.average}, {"worst_10", f.worst10}, {"worst_20", f.worst20},
          {"worst_40", f.worst40}, {"best_10", f.best10},  {"variance", f.variance}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"per_client_accuracy", r.per_client_accuracy},
          {"mean", r.mean},
          {"std", r.std_dev},
          {"fairness", to_json(r.fairness)},
          {"comm_ledger", r.comm_ledger}};
}

inline std::string fairness_csv(const std::string& method, const FairnessReport& f) {
  using detail::format_double;
  return "Method,Average,Worst 10%,Worst 20%,Worst 40%,Best 10%,Variance\n" + method + "," +
         format_double(f.average) + "," + format_double(f.worst10) + "," + format_double(f.worst20) + "," +
         format_double(f.worst40) + "," + format_double(f.best10) + "," + format_double(f.variance) + "\n";
}

struct BoundInputs {
  double total_samples = 0.0;   // N
  double clients = 0.0;         // m
  double prototype_count = 0.0; // |C|
  double vc_dim = 0.0;          // d
  double delta = 0.0;
};

inline void validate(const BoundInputs& b) {
  require(b.total_samples > 0 && b.clients > 0 && b.prototype_count > 0 && b.vc_dim > 0, ErrorKind::kParameter,
          "bound inputs N, m, |C|, d must be positive");
  require(b.delta > 0.0 && b.delta < 1.0, ErrorKind::kParameter, "delta must lie in (0, 1)");
  require(b.total_samples >= b.vc_dim, ErrorKind::kParameter, "bound requires N >= d");
  require((b.clients + 1.0) * b.prototype_count / b.delta > 1.0, ErrorKind::kParameter,
          "bound requires (m+1)|C|/delta > 1");
}

/// sqrt(N/2 · ln((m+1)|C|/delta)) + sqrt(d/N · ln(e·N/d)).
inline double generalization_bound(const BoundInputs& b) {
  validate(b);
  const double first = std::sqrt(b.total_samples / 2.0 * std::log((b.clients + 1.0) * b.prototype_count / b.delta));
  // ln(e·N/d) = 1 + ln(N/d); keeps N = d at exactly 1.
  const double second = std::sqrt(b.vc_dim / b.total_samples * (1.0 + std::log(b.total_samples / b.vc_dim)));
  return first + second;
}

/// Parameter count of the projection network, offered as a default for d.
inline double projector_param_count(std::size_t in_dim, std::size_t out_dim) {
  return static_cast<double>(in_dim * out_dim + 3 * out_dim);
}

enum class NoiseDist { kGaussian, kLaplace };

inline NoiseDist parse_noise_dist(const std::string& s) {
  if (s == "gaussian") return NoiseDist::kGaussian;
  if (s == "laplace") return NoiseDist::kLaplace;
  fail(ErrorKind::kConfig, "unknown noise distribution '" + s + "'");
}
inline const char* to_string(NoiseDist d) { return d == NoiseDist::kGaussian ? "gaussian" : "laplace"; }

/// x~ = (1 - p)·x + e, e drawn i.i.d. per coordinate with scale s
/// (Gaussian standard deviation, or Laplace diversity).
inline Vector inject_noise(std::span<const double> x, NoiseDist dist, double scale, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::kParameter, "perturbation coefficient p must lie in [0, 1)");
  require(scale >= 0.0, ErrorKind::kParameter, "noise scale must be >= 0");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = dist == NoiseDist::kGaussian ? scale * rng.normal() : rng.laplace(scale);
    out[i] = (1.0 - p) * x[i] + e;
  }
  return out;
}

}  // namespace fedpcl
