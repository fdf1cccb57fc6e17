// fedpcl command-line driver: dataset generation, partitioning, training,
// evaluation and the closed-form analysis helpers.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedpcl/fedpcl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

json load_json(const std::string& path) {
  std::string text;
  try {
    text = fedpcl::detail::read_file(path);
  } catch (const fedpcl::Error& e) {
    fedpcl::fail(fedpcl::ErrorKind::kConfig, std::string("cannot read config: ") + e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fedpcl::fail(fedpcl::ErrorKind::kConfig, "config " + path + " is not valid JSON: " + e.what());
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> clients;
  std::optional<double> alpha;
  std::optional<std::string> out;
};

// Precedence: command-line flag, then FPCL_SEED (seed only), then the file.
fedpcl::ExperimentSpec load_spec(const std::string& path, const Overrides& o) {
  json j = load_json(path);
  json& cfg = j.contains("manifest_version") ? j["config"] : j;
  if (const char* env = std::getenv("FPCL_SEED")) {
    try {
      cfg["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      fedpcl::fail(fedpcl::ErrorKind::kConfig, "FPCL_SEED must be an unsigned integer");
    }
  }
  if (o.seed) cfg["seed"] = *o.seed;
  if (o.method) cfg["federation"]["method"] = *o.method;
  if (o.rounds) cfg["federation"]["rounds"] = *o.rounds;
  if (o.clients) cfg["partition"]["clients"] = *o.clients;
  if (o.alpha) cfg["partition"]["alpha"] = *o.alpha;
  if (o.out) cfg["output_dir"] = *o.out;
  return fedpcl::parse_experiment(cfg);
}

json manifest(const std::string& subcommand, const fedpcl::ExperimentSpec& spec) {
  return {{"manifest_version", kManifestVersion},
          {"tool", "fedpcl"},
          {"subcommand", subcommand},
          {"rng", fedpcl::kRngFamily},
          {"seed", spec.seed},
          {"config", fedpcl::to_json(spec)},
          {"status", "running"}};
}

void write_text(const fs::path& path, const std::string& text) { fedpcl::detail::write_file(path.string(), text); }

int cmd_generate(const std::string& config, const Overrides& o, const std::optional<std::string>& out_path) {
  auto spec = load_spec(config, o);
  if (!spec.synthetic) fedpcl::fail(fedpcl::ErrorKind::kConfig, "missing required key 'dataset.synthetic'");
  if (out_path) spec.dataset_path = *out_path;
  if (!spec.dataset_path) fedpcl::fail(fedpcl::ErrorKind::kConfig, "missing required key 'dataset.path'");
  const auto ds = fedpcl::build_dataset(spec);
  const std::string bytes = fedpcl::encode_dataset(ds);
  fedpcl::detail::write_file(*spec.dataset_path, bytes);
  const std::string hash = fedpcl::detail::hex64(fedpcl::detail::fnv1a64(bytes));
  json m = manifest("generate", spec);
  m["dataset_hash"] = hash;
  m["status"] = "complete";
  write_text(*spec.dataset_path + ".manifest.json", m.dump(2) + "\n");
  std::cout << hash << "\n";
  return 0;
}

int cmd_partition(const std::string& config, const Overrides& o, const std::optional<std::string>& out_path) {
  const auto spec = load_spec(config, o);
  const auto ds = fedpcl::build_dataset(spec);
  const auto assignment = fedpcl::build_partition(spec, ds);
  const std::string text = fedpcl::partition_to_json(assignment).dump() + "\n";
  std::string path = out_path.value_or("");
  if (path.empty()) {
    if (!spec.output_dir) fedpcl::fail(fedpcl::ErrorKind::kConfig, "missing required key 'output_dir' (or --out)");
    fs::create_directories(*spec.output_dir);
    path = (fs::path(*spec.output_dir) / "partition.json").string();
  }
  write_text(path, text);
  json m = manifest("partition", spec);
  m["dataset_hash"] = fedpcl::dataset_hash(ds);
  m["partition_hash"] = fedpcl::detail::hex64(fedpcl::detail::fnv1a64(text));
  m["status"] = "complete";
  write_text(path + ".manifest.json", m.dump(2) + "\n");
  for (std::size_t i = 0; i < assignment.size(); ++i)
    std::cout << "client " << i << ": train=" << assignment.clients[i].train.size()
              << " test=" << assignment.clients[i].test.size() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const Overrides& o, std::size_t threads) {
  const auto spec = load_spec(config, o);
  if (!spec.output_dir) fedpcl::fail(fedpcl::ErrorKind::kConfig, "missing required key 'output_dir' (or --out)");
  const fs::path out(*spec.output_dir);
  fs::create_directories(out);
  json m = manifest("train", spec);
  m["method_label"] = fedpcl::method_label(spec.federation.method);
  try {
    const auto ds = fedpcl::build_dataset(spec);
    const auto assignment = fedpcl::build_partition(spec, ds);
    m["dataset_hash"] = fedpcl::dataset_hash(ds);
    m["partition_hash"] = fedpcl::detail::hex64(fedpcl::detail::fnv1a64(fedpcl::partition_to_json(assignment).dump()));
    auto cfg = spec.federation;
    cfg.backbones = ds.backbones;
    cfg.embed_dim = ds.embed_dim;
    const auto result = fedpcl::run_training(cfg, ds, assignment, {threads});

    write_text(out / "history.csv", fedpcl::history_csv(result.history));

    const auto acc = fedpcl::final_accuracies(result.history);
    json ledger = {{"params_up_per_client_round",
                    fedpcl::comm_cost(cfg.method, cfg.backbones, cfg.embed_dim, cfg.proj_dim, ds.n_classes)},
                   {"accounting", "weight-matrix entries only; prototypes count classes x d_h"}};
    const auto report = fedpcl::make_metrics_report(acc, ledger);
    json metrics = fedpcl::to_json(report);
    metrics["method"] = fedpcl::method_label(cfg.method);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    write_text(out / "fairness.csv", fedpcl::fairness_csv(fedpcl::method_label(cfg.method), report.fairness));

    const json proto_meta = {{"aggregation", fedpcl::to_string(cfg.aggregation)}};
    if (cfg.uses_prototypes()) {
      fs::create_directories(out / "prototypes");
      write_text(out / "prototypes" / "global.fpp", fedpcl::encode_prototypes(result.global_protos, proto_meta));
      for (const auto& c : result.clients)
        write_text(out / "prototypes" / ("client_" + std::to_string(c.id) + ".fpp"),
                   fedpcl::encode_prototypes(c.local, proto_meta));
    }
    fs::create_directories(out / "checkpoints");
    const std::string cfg_hash = fedpcl::detail::hex64(fedpcl::detail::fnv1a64(fedpcl::to_json(spec).dump()));
    for (const auto& c : result.clients)
      write_text(out / "checkpoints" / ("client_" + std::to_string(c.id) + ".ckpt"),
                 fedpcl::encode_checkpoint(c.projector, cfg_hash));

    m["config_hash"] = cfg_hash;
    m["status"] = "complete";
    m["final_mean_accuracy"] = report.mean;
    write_text(out / "manifest.json", m.dump(2) + "\n");
    std::cout << "method=" << fedpcl::method_label(cfg.method) << " rounds=" << cfg.rounds
              << " mean_acc=" << fedpcl::detail::format_double(report.mean) << "\n";
    return 0;
  } catch (const std::exception& e) {
    m["status"] = "failed";
    m["error"] = e.what();
    write_text(out / "manifest.json", m.dump(2) + "\n");
    throw;
  }
}

std::vector<fedpcl::RoundRecord> parse_history(const std::string& path) {
  const std::string text = fedpcl::detail::read_file(path);
  std::vector<fedpcl::RoundRecord> out;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos || text.substr(0, pos) != "round,client_id,train_loss,test_acc,params_up,params_down")
    fedpcl::fail(fedpcl::ErrorKind::kFormat, "history CSV header mismatch in " + path);
  ++pos;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? text.size() : end + 1;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t s = 0;
    for (std::size_t c; (c = line.find(',', s)) != std::string::npos; s = c + 1) f.push_back(line.substr(s, c - s));
    f.push_back(line.substr(s));
    if (f.size() != 6) fedpcl::fail(fedpcl::ErrorKind::kFormat, "history row has " + std::to_string(f.size()) + " fields");
    try {
      out.push_back({std::stoul(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stoull(f[4]),
                     std::stoull(f[5])});
    } catch (const std::exception&) {
      fedpcl::fail(fedpcl::ErrorKind::kFormat, "unparseable history row: " + line);
    }
  }
  if (out.empty()) fedpcl::fail(fedpcl::ErrorKind::kEmptyDataset, "history " + path + " has no rows");
  return out;
}

int cmd_evaluate(const std::string& history_path, std::optional<std::size_t> round, const std::string& label,
                 const std::optional<std::string>& out_dir) {
  auto history = parse_history(history_path);
  if (round) {
    std::erase_if(history, [&](const fedpcl::RoundRecord& r) { return r.round != *round; });
    if (history.empty()) fedpcl::fail(fedpcl::ErrorKind::kConfig, "round " + std::to_string(*round) + " not in history");
  }
  const auto acc = fedpcl::final_accuracies(history);
  std::uint64_t up = 0, down = 0;
  for (const auto& r : history) {
    up += r.params_up;
    down += r.params_down;
  }
  const auto report = fedpcl::make_metrics_report(acc, {{"params_up_total", up}, {"params_down_total", down}});
  json j = fedpcl::to_json(report);
  j["method"] = label;
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(fs::path(*out_dir) / "metrics.json", j.dump(2) + "\n");
    write_text(fs::path(*out_dir) / "fairness.csv", fedpcl::fairness_csv(label, report.fairness));
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedpcl: prototype-based federated learning simulator"};
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  std::size_t threads = 1;
  std::optional<std::string> out_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "experiment JSON (or a run manifest)")->required();
    sub->add_option("--seed", o.seed, "override the configured seed");
    sub->add_option("--out", out_path, "output path");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic embedding dataset");
  add_common(gen);

  auto* part = app.add_subcommand("partition", "partition a dataset across clients");
  add_common(part);
  part->add_option("--clients", o.clients);
  part->add_option("--alpha", o.alpha);

  auto* train = app.add_subcommand("train", "run federated training");
  add_common(train);
  train->add_option("--method", o.method, "fedpcl|fedavg|fedrep|fedproto|solo");
  train->add_option("--rounds", o.rounds);
  train->add_option("--clients", o.clients);
  train->add_option("--alpha", o.alpha);
  train->add_option("--threads", threads, "client parallelism cap")->check(CLI::PositiveNumber);

  std::string history_path, eval_label = "run";
  std::optional<std::size_t> eval_round;
  auto* eval = app.add_subcommand("evaluate", "metrics and fairness table from a history CSV");
  eval->add_option("--history", history_path)->required();
  eval->add_option("--round", eval_round, "round to report (default: last)");
  eval->add_option("--label", eval_label, "method label for the fairness table");
  eval->add_option("--out", out_path, "directory for metrics.json and fairness.csv");

  std::string cc_method;
  std::uint64_t cc_k = 1, cc_de = 512, cc_dh = 256, cc_classes = 10;
  auto* cc = app.add_subcommand("commcost", "parameters uploaded per client per round");
  cc->add_option("method", cc_method)->required();
  cc->add_option("--K", cc_k);
  cc->add_option("--de", cc_de);
  cc->add_option("--dh", cc_dh);
  cc->add_option("--classes", cc_classes);

  fedpcl::BoundInputs bi;
  auto* bound = app.add_subcommand("bound", "evaluate the generalization bound");
  bound->add_option("--N", bi.total_samples)->required();
  bound->add_option("--m", bi.clients)->required();
  bound->add_option("--protos", bi.prototype_count)->required();
  bound->add_option("--d", bi.vc_dim)->required();
  bound->add_option("--delta", bi.delta)->required();

  std::string proto_a, proto_b;
  bool normalize = false;
  auto* heat = app.add_subcommand("heatmap", "prototype similarity matrix as CSV");
  heat->add_option("a", proto_a)->required();
  heat->add_option("b", proto_b)->required();
  heat->add_flag("--normalize", normalize, "cosine instead of raw inner product");
  heat->add_option("--out", out_path, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(config, o, out_path);
    if (*part) return cmd_partition(config, o, out_path);
    if (*train) {
      if (out_path) o.out = out_path;
      return cmd_train(config, o, threads);
    }
    if (*eval) return cmd_evaluate(history_path, eval_round, eval_label, out_path);
    if (*cc) {
      std::cout << fedpcl::comm_cost(fedpcl::parse_method(cc_method), cc_k, cc_de, cc_dh, cc_classes) << "\n";
      return 0;
    }
    if (*bound) {
      std::cout << fedpcl::detail::format_double(fedpcl::generalization_bound(bi)) << "\n";
      return 0;
    }
    if (*heat) {
      const auto a = fedpcl::decode_prototypes(fedpcl::detail::read_file(proto_a));
      const auto b = fedpcl::decode_prototypes(fedpcl::detail::read_file(proto_b));
      const std::string csv = fedpcl::similarity_csv(fedpcl::similarity_matrix(a, b, normalize));
      if (out_path) write_text(*out_path, csv);
      else std::cout << csv;
      return 0;
    }
  } catch (const fedpcl::Error& e) {
    std::cerr << "fedpcl: " << e.what() << "\n";
    return fedpcl::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fedpcl: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
