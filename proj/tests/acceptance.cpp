// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Usage: fedpcl_acceptance <path-to-fedpcl-cli> <scratch-dir>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "fedpcl/fedpcl.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace fedpcl;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
  std::printf("criterion %d [%s] %s: %s (%.1fs)\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
              seconds);
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

template <typename Fn>
void run(int id, const std::string& name, Fn fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. Communication cost, exact.
// ---------------------------------------------------------------------------

Outcome comm_cost_table() {
  struct Row {
    Method m;
    std::uint64_t k, expected;
  };
  const Row rows[] = {{Method::kFedAvg, 1, 133632}, {Method::kFedAvg, 3, 395776}, {Method::kFedRep, 1, 131072},
                      {Method::kFedRep, 3, 393216}, {Method::kFedPCL, 3, 2560},   {Method::kFedProto, 3, 2560}};
  std::string detail;
  bool ok = true;
  for (const auto& r : rows) {
    const auto got = comm_cost(r.m, r.k, 512, 256, 10);
    ok = ok && got == r.expected;
    detail += std::string(to_string(r.m)) + "/K=" + std::to_string(r.k) + "=" + std::to_string(got) + " ";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 2. Gradients of every loss composed with the projector (batch norm in the
//    backward path) against finite differences.
// ---------------------------------------------------------------------------

Outcome gradient_checks() {
  constexpr int kInstances = 50;
  constexpr double kTol = 1e-4;
  Rng rng(20240601);
  std::vector<std::string> names = {"global_proto/exclude", "global_proto/include", "local_proto", "combined",
                                    "cross_entropy",        "proto_dist",           "supcon_batch"};
  std::vector<double> worst(names.size(), 0.0);
  const ProjectorConfig cfg;  // batch norm
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t rows = 4 + rng.below(5), in = 3 + rng.below(4), out = 3 + rng.below(3),
                      classes = 2 + rng.below(3);
    auto inst = gradcheck::random_instance(rng, rows, in, out, classes);
    inst.labels[1] = inst.labels[0];  // at least one supcon anchor
    const Temperature tau(rng.uniform(0.07, 1.0));
    const auto global = gradcheck::random_protos(rng, classes, out, kGlobalOwner, 0.5);
    std::vector<PrototypeSet> locals;
    for (int m = 0; m < 3; ++m) locals.push_back(gradcheck::random_protos(rng, classes, out, m, 0.5));
    const auto& y = inst.labels;
    const std::vector<gradcheck::LossOnZ> losses = {
        [&](const Matrix& z) { return global_proto_loss(z, y, global, tau, DenomMode::kExcludePositive); },
        [&](const Matrix& z) { return global_proto_loss(z, y, global, tau, DenomMode::kIncludePositive); },
        [&](const Matrix& z) { return local_proto_loss(z, y, locals, tau); },
        [&](const Matrix& z) { return combined_loss(z, y, global, locals, tau); },
        nullptr,  // cross entropy: needs the classifier head, handled below
        nullptr,  // proto_dist: random lambda, handled below
        [&](const Matrix& z) { return supcon_batch_loss(z, y, tau); },
    };
    for (std::size_t k = 0; k < losses.size(); ++k) {
      double err;
      if (k == 4) {
        Rng head_rng(rng.next_u64());
        err = gradcheck::classifier_error(inst, init_classifier(head_rng, out, classes), cfg);
      } else if (k == 5) {
        const double lambda = rng.uniform(0.1, 2.0);
        err = gradcheck::projector_error(inst, cfg, [&](const Matrix& z) { return proto_dist_term(z, y, global, lambda); });
      } else {
        err = gradcheck::projector_error(inst, cfg, losses[k]);
      }
      worst[k] = std::max(worst[k], err);
    }
  }
  bool ok = true;
  std::string detail = std::to_string(kInstances) + " instances each; max rel err";
  for (std::size_t k = 0; k < names.size(); ++k) {
    ok = ok && worst[k] < kTol;
    detail += " " + names[k] + "=" + fmt(worst[k], 2);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 3. Prototype computation, aggregation (both modes), padding and prediction
//    against brute force.
// ---------------------------------------------------------------------------

Outcome prototype_brute_force() {
  constexpr int kTrials = 2000;
  constexpr double kTol = 1e-12;
  Rng rng(77);
  double worst = 0.0;
  std::size_t predict_mismatch = 0, predictions = 0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t m = 1 + rng.below(5), c = 1 + rng.below(6), d = 1 + rng.below(8);
    std::vector<PrototypeSet> sets;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t n = 1 + rng.below(25);
      const Matrix z = oracle::random_matrix(rng, n, d);
      std::vector<int> y;
      for (std::size_t r = 0; r < n; ++r) y.push_back(static_cast<int>(rng.below(c)));
      const auto got = compute_local_prototypes(z, y, static_cast<int>(i));
      const auto ref = oracle::local_prototypes(z, y);
      if (got.size() != ref.size()) return {false, "local prototype class sets differ"};
      for (const auto& [cls, v] : ref)
        for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(got.at(cls)[k] - v[k]));
      sets.push_back(got);
    }
    for (bool as_written : {true, false}) {
      const auto got = aggregate_global(sets, as_written ? AggregationMode::kAsWritten : AggregationMode::kWeightedMean);
      const auto ref = oracle::aggregate(sets, as_written);
      if (got.size() != ref.size()) return {false, "aggregated class sets differ"};
      for (const auto& [cls, v] : ref)
        for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(got.at(cls)[k] - v[k]));
    }
    const auto global = aggregate_global(sets, AggregationMode::kAsWritten);
    std::map<int, std::vector<double>> gmap;
    for (const auto& [cls, e] : global.entries) gmap[cls] = e.vec;
    const auto padded = pad_local_sets(sets, global);
    for (std::size_t i = 0; i < m; ++i) {
      const auto ref = oracle::pad(sets[i], gmap);
      if (padded[i].size() != ref.size()) return {false, "padded class sets differ"};
      for (const auto& [cls, v] : ref)
        for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(padded[i].at(cls)[k] - v[k]));
      for (int q = 0; q < 5; ++q) {
        Vector z(d);
        for (double& v : z) v = rng.normal();
        ++predictions;
        if (predict(z, padded[i]) != oracle::predict(z, ref)) ++predict_mismatch;
      }
    }
  }
  return {worst <= kTol && predict_mismatch == 0,
          std::to_string(kTrials) + " trials; max abs diff " + fmt(worst, 2) + "; predict mismatches " +
              std::to_string(predict_mismatch) + "/" + std::to_string(predictions)};
}

// ---------------------------------------------------------------------------
// End-to-end experiments on synthetic data.
// ---------------------------------------------------------------------------

json experiment_config(std::uint64_t seed, double class_sep, const std::string& method) {
  return {{"seed", seed},
          {"dataset",
           {{"synthetic",
             {{"n_classes", 10}, {"K", 3}, {"d_e", 8}, {"samples_per_cell", 100}, {"class_sep", class_sep}}}}},
          {"partition", {{"clients", 5}, {"scheme", "label_shift"}, {"alpha", 0.5}}},
          {"federation",
           {{"method", method},
            {"rounds", 50},
            {"local_epochs", 1},
            {"batch_size", 32},
            {"tau", 0.07},
            {"lr", 1e-3},
            {"weight_decay", 1e-4}}}};
}

struct RunSummary {
  double final_mean = 0.0;
  double best_round_mean = 0.0;
};

RunSummary run_experiment(const json& config) {
  const auto spec = parse_experiment(config);
  const auto ds = build_dataset(spec);
  const auto result = run_training(spec.federation, ds, build_partition(spec, ds));
  RunSummary s;
  for (std::size_t r = 1; r <= spec.federation.rounds; ++r) {
    double mean = 0.0, n = 0.0;
    for (const auto& h : result.history)
      if (h.round == r) {
        mean += h.test_acc;
        n += 1.0;
      }
    s.best_round_mean = std::max(s.best_round_mean, mean / n);
  }
  const auto fin = final_accuracies(result.history);
  for (double a : fin) s.final_mean += a / static_cast<double>(fin.size());
  return s;
}

constexpr int kSeeds = 5;

std::vector<RunSummary> g_fedpcl_runs;  // reused by the noise criterion

Outcome end_to_end() {
  int reached = 0;
  double pcl = 0.0, solo = 0.0;
  std::string per_seed;
  g_fedpcl_runs.clear();
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto p = run_experiment(experiment_config(seed, 20.0, "fedpcl"));
    const auto s = run_experiment(experiment_config(seed, 20.0, "solo"));
    g_fedpcl_runs.push_back(p);
    reached += p.best_round_mean >= 0.95;
    pcl += p.final_mean / kSeeds;
    solo += s.final_mean / kSeeds;
    per_seed += " " + fmt(100 * p.best_round_mean, 4);
  }
  return {reached >= 4 && pcl >= solo,
          "fedpcl reached 95% on " + std::to_string(reached) + "/5 seeds (best round means:" + per_seed +
              "); final mean fedpcl=" + fmt(100 * pcl) + " solo=" + fmt(100 * solo)};
}

Outcome ablation() {
  double both = 0.0, global = 0.0, local = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (auto [src, acc] : {std::pair<const char*, double*>{"both", &both}, {"global_only", &global}, {"local_only", &local}}) {
      auto cfg = experiment_config(seed, 6.0, "fedpcl");
      cfg["federation"]["prototype_sources"] = src;
      *acc += 100.0 * run_experiment(cfg).final_mean / kSeeds;
    }
  }
  return {both >= std::max(global, local) - 1.0,
          "combined=" + fmt(both) + " global_only=" + fmt(global) + " local_only=" + fmt(local)};
}

Outcome noise_robustness() {
  if (g_fedpcl_runs.size() != kSeeds) return {false, "clean runs unavailable"};
  double clean = 0.0, noisy = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto cfg = experiment_config(seed, 20.0, "fedpcl");
    cfg["federation"]["prototype_noise"] = {{"dist", "gaussian"}, {"s", 0.05}, {"p", 0.1}};
    noisy += 100.0 * run_experiment(cfg).final_mean / kSeeds;
    clean += 100.0 * g_fedpcl_runs[seed].final_mean / kSeeds;
  }
  return {clean - noisy <= 5.0, "clean=" + fmt(clean) + " noisy=" + fmt(noisy) + " drop=" + fmt(clean - noisy, 3)};
}

// ---------------------------------------------------------------------------
// 6. Generalization bound against 50-digit evaluation.
// ---------------------------------------------------------------------------

Outcome bound_precision() {
  using big = boost::multiprecision::cpp_bin_float_50;
  Rng rng(4242);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    BoundInputs b;
    b.total_samples = std::floor(std::exp(rng.uniform(std::log(10.0), std::log(1e7))));
    b.clients = static_cast<double>(1 + rng.below(100));
    b.prototype_count = static_cast<double>(1 + rng.below(1000));
    b.vc_dim = std::max(1.0, std::floor(b.total_samples * rng.uniform()));
    b.delta = std::exp(rng.uniform(std::log(1e-6), std::log(0.5)));
    const big N(b.total_samples), m(b.clients), C(b.prototype_count), d(b.vc_dim), delta(b.delta);
    const big ref = sqrt(N / 2 * log((m + 1) * C / delta)) + sqrt(d / N * (1 + log(N / d)));
    const double got = generalization_bound(b);
    worst = std::max(worst, static_cast<double>(abs((big(got) - ref) / ref)));
  }
  // N = d: the complexity term must be exactly 1.
  bool exact = true;
  for (double n : {1.0, 7.0, 1000.0, 123457.0, 1e9}) {
    BoundInputs b{n, 4, 10, n, 0.05};
    const double first = std::sqrt(n / 2.0 * std::log(5.0 * 10.0 / 0.05));
    exact = exact && generalization_bound(b) - first == 1.0;
  }
  return {worst <= 1e-10 && exact,
          "100 inputs, max rel err " + fmt(worst, 2) + "; N=d second term exactly 1: " + (exact ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 7. Thread-count independence through the CLI.
// ---------------------------------------------------------------------------

Outcome thread_determinism(const std::string& cli, const fs::path& scratch) {
  fs::create_directories(scratch);
  const fs::path config = scratch / "determinism.json";
  detail::write_file(config.string(), experiment_config(0, 20.0, "fedpcl").dump(2));
  std::string outputs[2];
  int idx = 0;
  for (int threads : {1, 8}) {
    const fs::path out = scratch / ("threads_" + std::to_string(threads));
    fs::remove_all(out);
    const std::string cmd = "\"" + cli + "\" train -c \"" + config.string() + "\" --threads " + std::to_string(threads) +
                            " --out \"" + out.string() + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) return {false, "train exited with status " + std::to_string(rc) + " at threads=" + std::to_string(threads)};
    outputs[idx++] = detail::read_file((out / "history.csv").string());
  }
  const bool same = outputs[0] == outputs[1];
  return {same && !outputs[0].empty(), "history.csv " + std::to_string(outputs[0].size()) + " bytes, " +
                                           (same ? "bitwise identical" : "DIFFERENT") + " for 1 vs 8 threads"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: " << argv[0] << " <fedpcl-cli> <scratch-dir>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path scratch = argv[2];

  run(1, "communication cost", comm_cost_table);
  run(2, "gradient finite differences", gradient_checks);
  run(3, "prototype ops vs brute force", prototype_brute_force);
  run(4, "end-to-end synthetic accuracy", end_to_end);
  run(5, "prototype source ablation", ablation);
  run(6, "generalization bound precision", bound_precision);
  run(7, "thread-count determinism", [&] { return thread_determinism(cli, scratch); });
  run(8, "prototype noise robustness", noise_robustness);

  std::printf("%d of 8 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
