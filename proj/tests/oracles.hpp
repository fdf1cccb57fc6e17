#pragma once

// Independent reference implementations used only by the test suites. They
// follow the defining formulas directly (nested loops, no shared helpers with
// the library) so agreement is meaningful.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "fedpcl/fedpcl.hpp"

namespace oracle {

using fedpcl::Matrix;
using fedpcl::PrototypeSet;

/// Five-point (fourth-order) central differences of f over every entry of
/// every tensor in `tensors`. The larger step keeps roundoff near eps·|f|/h
/// while truncation stays O(h^4).
inline std::vector<std::vector<double>> finite_difference(std::vector<std::span<double>> tensors,
                                                          const std::function<double()>& f, double step = 1e-3) {
  std::vector<std::vector<double>> out;
  for (auto t : tensors) {
    std::vector<double> g(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      auto at = [&](double offset) {
        t[i] = orig + offset;
        return f();
      };
      const double p1 = at(step), m1 = at(-step), p2 = at(2 * step), m2 = at(-2 * step);
      t[i] = orig;
      g[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Largest entrywise relative error, with the denominator floored at `floor`.
inline double max_rel_error(const std::vector<std::span<const double>>& analytic,
                            const std::vector<std::vector<double>>& numeric, double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t t = 0; t < analytic.size(); ++t)
    for (std::size_t i = 0; i < analytic[t].size(); ++i) {
      const double a = analytic[t][i], n = numeric[t][i];
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  return worst;
}

/// Class-mean prototypes by brute force: for each class, scan every sample.
inline std::map<int, std::vector<double>> local_prototypes(const Matrix& z, const std::vector<int>& labels) {
  std::set<int> classes(labels.begin(), labels.end());
  std::map<int, std::vector<double>> out;
  for (int c : classes) {
    std::vector<double> sum(z.cols(), 0.0);
    double count = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (labels[i] != c) continue;
      for (std::size_t k = 0; k < z.cols(); ++k) sum[k] += z(i, k);
      count += 1;
    }
    for (double& v : sum) v /= count;
    out[c] = sum;
  }
  return out;
}

/// Global aggregation by brute force over the (client, class) grid.
inline std::map<int, std::vector<double>> aggregate(const std::vector<PrototypeSet>& sets, bool as_written) {
  std::set<int> classes;
  std::size_t dim = 0;
  for (const auto& s : sets)
    for (const auto& [c, e] : s.entries)
      if (!e.padded) {
        classes.insert(c);
        dim = e.vec.size();
      }
  std::map<int, std::vector<double>> out;
  for (int c : classes) {
    double n_j = 0, owners = 0;
    for (const auto& s : sets)
      if (s.entries.count(c) && !s.entries.at(c).padded) {
        n_j += static_cast<double>(s.entries.at(c).count);
        owners += 1;
      }
    std::vector<double> acc(dim, 0.0);
    for (const auto& s : sets) {
      if (!s.entries.count(c) || s.entries.at(c).padded) continue;
      const auto& e = s.entries.at(c);
      for (std::size_t k = 0; k < dim; ++k) {
        const double term = (static_cast<double>(e.count) / n_j) * e.vec[k];
        acc[k] += as_written ? term / owners : term;
      }
    }
    out[c] = acc;
  }
  return out;
}

/// Padding by brute force.
inline std::map<int, std::vector<double>> pad(const PrototypeSet& local, const std::map<int, std::vector<double>>& global) {
  std::map<int, std::vector<double>> out;
  for (const auto& [c, g] : global) {
    const bool owns = local.entries.count(c) && !local.entries.at(c).padded;
    out[c] = owns ? local.entries.at(c).vec : g;
  }
  return out;
}

inline int predict(const std::vector<double>& z, const std::map<int, std::vector<double>>& protos) {
  int best = -1;
  double best_score = -INFINITY;
  for (const auto& [c, p] : protos) {
    double s = 0;
    for (std::size_t k = 0; k < z.size(); ++k) s += z[k] * p[k];
    if (best < 0 || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

/// Literal prototype-contrastive loss: -log(exp(s_y) / sum exp(s_a)), averaged.
inline double proto_loss(const Matrix& z, const std::vector<int>& y, const PrototypeSet& set, double tau,
                         bool include_positive) {
  double total = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double num = 0, den = 0;
    for (const auto& [c, e] : set.entries) {
      double s = 0;
      for (std::size_t k = 0; k < z.cols(); ++k) s += z(i, k) * e.vec[k];
      const double ex = std::exp(s / tau);
      if (c == y[i]) num = ex;
      if (c != y[i] || include_positive) den += ex;
    }
    total += -std::log(num / den);
  }
  return total / static_cast<double>(z.rows());
}

/// Supervised contrastive loss by the double-loop definition.
inline double supcon(const Matrix& z, const std::vector<int>& y, double tau) {
  const std::size_t n = z.rows();
  std::vector<std::vector<double>> u(n, std::vector<double>(z.cols()));
  for (std::size_t i = 0; i < n; ++i) {
    double nn = 0;
    for (std::size_t k = 0; k < z.cols(); ++k) nn += z(i, k) * z(i, k);
    nn = std::sqrt(nn + 1e-12);
    for (std::size_t k = 0; k < z.cols(); ++k) u[i][k] = z(i, k) / nn;
  }
  auto sim = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t k = 0; k < z.cols(); ++k) s += u[a][k] * u[b][k];
    return s / tau;
  };
  double total = 0;
  int anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int pos = 0;
    double li = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || y[p] != y[i]) continue;
      double den = 0;
      for (std::size_t a = 0; a < n; ++a)
        if (a != i) den += std::exp(sim(i, a));
      li += -std::log(std::exp(sim(i, p)) / den);
      ++pos;
    }
    if (pos == 0) continue;
    total += li / pos;
    ++anchors;
  }
  return total / anchors;
}

inline Matrix random_matrix(fedpcl::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

}  // namespace oracle
