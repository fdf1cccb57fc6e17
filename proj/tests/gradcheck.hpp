#pragma once

// Finite-difference harness for losses composed with the projector.

#include <functional>
#include <optional>

#include "fedpcl/fedpcl.hpp"
#include "oracles.hpp"

namespace gradcheck {

using fedpcl::ClassifierHead;
using fedpcl::LossOutput;
using fedpcl::Matrix;
using fedpcl::ProjectorConfig;
using fedpcl::ProjectorParams;

using LossOnZ = std::function<LossOutput(const Matrix&)>;

struct Instance {
  ProjectorParams params;
  Matrix x;
  std::vector<int> labels;
  std::size_t n_classes = 0;
};

/// Random projector + batch whose pre-activations stay far enough from the
/// ReLU kink that no finite-difference probe (weights or bias moved by up to
/// 2·step) can cross it.
inline Instance random_instance(fedpcl::Rng& rng, std::size_t rows, std::size_t in_dim, std::size_t out_dim,
                                std::size_t n_classes, double step = 1e-3) {
  for (;;) {
    Instance inst;
    inst.params = fedpcl::init_params(rng, 1, in_dim, out_dim);
    for (double& b : inst.params.bias) b = 0.1 * rng.normal();
    for (double& g : inst.params.bn_gamma) g = 1.0 + 0.2 * rng.normal();
    for (double& b : inst.params.bn_beta) b = 0.2 * rng.normal();
    inst.x = oracle::random_matrix(rng, rows, in_dim);
    inst.n_classes = n_classes;
    for (std::size_t i = 0; i < rows; ++i) inst.labels.push_back(static_cast<int>(rng.below(n_classes)));
    Matrix pre = fedpcl::matmul(inst.x, inst.params.weight);
    double max_x = 0.0;
    for (double v : inst.x.data()) max_x = std::max(max_x, std::abs(v));
    const double margin = 2.5 * step * (1.0 + max_x);
    bool ok = true;
    for (std::size_t i = 0; i < pre.rows(); ++i)
      for (std::size_t j = 0; j < pre.cols(); ++j)
        if (std::abs(pre(i, j) + inst.params.bias[j]) < margin) ok = false;
    // Each column's post-ReLU batch spread must dwarf the probe size, otherwise
    // batch-norm curvature (scale ~ the column std) swamps the stencil.
    for (std::size_t j = 0; j < pre.cols() && ok; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < pre.rows(); ++i) mean += std::max(0.0, pre(i, j) + inst.params.bias[j]);
      mean /= static_cast<double>(pre.rows());
      for (std::size_t i = 0; i < pre.rows(); ++i) {
        const double a = std::max(0.0, pre(i, j) + inst.params.bias[j]) - mean;
        var += a * a;
      }
      var /= static_cast<double>(pre.rows());
      if (var < 1e-2) ok = false;
    }
    if (ok) return inst;
  }
}

/// Max relative error between analytic and central-difference gradients of
/// loss(forward_train(params, x)) over all projector learnables.
inline double projector_error(const Instance& inst, const ProjectorConfig& cfg, const LossOnZ& loss) {
  ProjectorParams work = inst.params;
  auto fwd = fedpcl::forward(work, inst.x, fedpcl::Mode::kTrain, cfg);
  const LossOutput l = loss(fwd.z);
  const auto analytic = fedpcl::backward(inst.params, fwd.cache, l.dz);

  ProjectorParams probe = inst.params;
  auto f = [&] {
    ProjectorParams copy = probe;
    return loss(fedpcl::forward(copy, inst.x, fedpcl::Mode::kTrain, cfg).z).value;
  };
  const auto numeric = oracle::finite_difference(probe.learnables(), f);
  return oracle::max_rel_error(analytic.tensors(), numeric);
}

/// Same, for projector + linear classifier + cross entropy; covers head grads too.
inline double classifier_error(const Instance& inst, const ClassifierHead& head, const ProjectorConfig& cfg) {
  ProjectorParams work = inst.params;
  auto fwd = fedpcl::forward(work, inst.x, fedpcl::Mode::kTrain, cfg);
  const Matrix logits = fedpcl::classifier_forward(head, fwd.z);
  const auto ce = fedpcl::cross_entropy_loss(logits, inst.labels);
  const auto hg = fedpcl::classifier_backward(head, fwd.z, ce.dz);
  const auto pg = fedpcl::backward(inst.params, fwd.cache, hg.dz);

  ProjectorParams probe = inst.params;
  ClassifierHead hprobe = head;
  auto f = [&] {
    ProjectorParams copy = probe;
    const Matrix z = fedpcl::forward(copy, inst.x, fedpcl::Mode::kTrain, cfg).z;
    return fedpcl::cross_entropy_loss(fedpcl::classifier_forward(hprobe, z), inst.labels).value;
  };
  auto tensors = probe.learnables();
  for (auto t : hprobe.learnables()) tensors.push_back(t);
  const auto numeric = oracle::finite_difference(tensors, f);
  auto analytic = pg.tensors();
  for (auto t : hg.tensors()) analytic.push_back(t);
  return oracle::max_rel_error(analytic, numeric);
}

/// Random prototype set over classes [0, n_classes) of dimension dim.
inline fedpcl::PrototypeSet random_protos(fedpcl::Rng& rng, std::size_t n_classes, std::size_t dim, int owner,
                                          double scale = 1.0) {
  fedpcl::PrototypeSet s;
  s.owner = owner;
  s.dim = dim;
  for (std::size_t c = 0; c < n_classes; ++c) {
    fedpcl::PrototypeEntry e;
    e.count = 1 + rng.below(10);
    for (std::size_t k = 0; k < dim; ++k) e.vec.push_back(scale * rng.normal());
    s.entries.emplace(static_cast<int>(c), e);
  }
  return s;
}

}  // namespace gradcheck
