#include <gtest/gtest.h>

#include <filesystem>

#include "fedpcl/experiment.hpp"

using namespace fedpcl;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    parse_experiment(j);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "expected a config error";
  return {};
}

json base_config() {
  return {{"seed", 3},
          {"dataset", {{"synthetic", {{"n_classes", 4}, {"K", 2}, {"d_e", 3}, {"samples_per_cell", 20}, {"class_sep", 6.0}}}}},
          {"partition", {{"clients", 3}, {"scheme", "label_shift"}, {"alpha", 0.5}}},
          {"federation", {{"method", "fedpcl"}, {"rounds", 2}, {"d_h", 8}}}};
}

}  // namespace

TEST(ParseExperiment, FillsDefaultsAndPropagatesLayout) {
  const auto spec = parse_experiment(base_config());
  EXPECT_EQ(spec.seed, 3u);
  EXPECT_EQ(spec.federation.seed, 3u);
  EXPECT_EQ(spec.federation.clients, 3u);
  EXPECT_EQ(spec.federation.backbones, 2u);
  EXPECT_EQ(spec.federation.embed_dim, 3u);
  EXPECT_EQ(spec.federation.proj_dim, 8u);
  EXPECT_DOUBLE_EQ(spec.federation.tau, 0.07);
  EXPECT_EQ(spec.federation.batch_size, 32u);
  EXPECT_EQ(spec.federation.denom_mode, DenomMode::kExcludePositive);
  EXPECT_EQ(spec.federation.aggregation, AggregationMode::kAsWritten);
  EXPECT_FALSE(spec.federation.prototype_sources.has_value());
}

TEST(ParseExperiment, MissingRequiredKeyNamesIt) {
  auto j = base_config();
  j["dataset"]["synthetic"].erase("class_sep");
  EXPECT_NE(config_error(j).find("dataset.synthetic.class_sep"), std::string::npos);
  auto k = base_config();
  k["partition"].erase("alpha");
  EXPECT_NE(config_error(k).find("partition.alpha"), std::string::npos);
}

TEST(ParseExperiment, UnknownKeysRejected) {
  auto j = base_config();
  j["federation"]["learning_rate"] = 0.1;
  EXPECT_NE(config_error(j).find("federation.learning_rate"), std::string::npos);
  auto k = base_config();
  k["extra"] = 1;
  EXPECT_NE(config_error(k).find("extra"), std::string::npos);
}

TEST(ParseExperiment, WrongTypesRejected) {
  auto j = base_config();
  j["federation"]["rounds"] = "ten";
  config_error(j);
  auto k = base_config();
  k["federation"]["rounds"] = -3;
  config_error(k);
  auto l = base_config();
  l["federation"]["method"] = "fedsgd";
  config_error(l);
}

TEST(ParseExperiment, PrototypeOptions) {
  auto j = base_config();
  j["federation"]["prototype_sources"] = "local_only";
  j["federation"]["prototype_noise"] = {{"dist", "laplace"}, {"s", 0.1}, {"p", 0.2}};
  j["federation"]["denom_mode"] = "include_positive";
  j["federation"]["aggregation"] = "weighted_mean";
  const auto spec = parse_experiment(j);
  EXPECT_EQ(spec.federation.sources(), PrototypeSources::kLocalOnly);
  ASSERT_TRUE(spec.federation.prototype_noise.has_value());
  EXPECT_EQ(spec.federation.prototype_noise->dist, NoiseDist::kLaplace);
  EXPECT_DOUBLE_EQ(spec.federation.prototype_noise->p, 0.2);
  EXPECT_EQ(spec.federation.denom_mode, DenomMode::kIncludePositive);
  EXPECT_EQ(spec.federation.aggregation, AggregationMode::kWeightedMean);
}

TEST(ParseExperiment, JsonRoundTrip) {
  auto j = base_config();
  j["federation"]["prototype_noise"] = {{"dist", "gaussian"}, {"s", 0.05}, {"p", 0.1}};
  const auto spec = parse_experiment(j);
  const auto again = parse_experiment(to_json(spec));
  EXPECT_EQ(to_json(again), to_json(spec));
}

TEST(ParseExperiment, ManifestIsAcceptedAsConfig) {
  const auto spec = parse_experiment(base_config());
  const json manifest = {{"manifest_version", 1}, {"config", to_json(spec)}, {"status", "ok"}};
  EXPECT_EQ(to_json(parse_experiment(manifest)), to_json(spec));
}

TEST(BuildExperiment, DatasetAndPartitionAreSeedDeterministic) {
  const auto spec = parse_experiment(base_config());
  const auto a = build_dataset(spec), b = build_dataset(spec);
  EXPECT_EQ(a, b);
  EXPECT_EQ(build_partition(spec, a), build_partition(spec, b));
  auto other = base_config();
  other["seed"] = 4;
  EXPECT_NE(build_dataset(parse_experiment(other)).embeddings, a.embeddings);
}

TEST(BuildExperiment, MissingSourcesAreConfigErrors) {
  ExperimentSpec spec;
  try {
    build_dataset(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  const auto ds = build_dataset(parse_experiment(base_config()));
  try {
    build_partition(spec, ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(BuildExperiment, EndToEndSmallRun) {
  const auto spec = parse_experiment(base_config());
  const auto ds = build_dataset(spec);
  const auto res = run_training(spec.federation, ds, build_partition(spec, ds));
  EXPECT_EQ(res.history.size(), 6u);
}

TEST(SampleConfigs, AllParse) {
  std::size_t seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(FEDPCL_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const auto j = json::parse(detail::read_file(entry.path().string()));
    EXPECT_NO_THROW(validate(parse_experiment(j).federation)) << entry.path();
    ++seen;
  }
  EXPECT_GE(seen, 1u);
}
