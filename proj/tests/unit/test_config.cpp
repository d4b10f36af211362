#include <doctest.h>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "wkcl/config.hpp"

using namespace wkcl;
using wkcl::testing::error_kind;
using wkcl::testing::TempDir;
using wkcl::testing::write_file;

TEST_CASE("defaults") {
  const RunConfig c = config_from_json(nlohmann::json::object());
  CHECK(c.retrieval_k == 3);
  CHECK(c.images_per_class == 10);
  CHECK(c.k_conf == 16);
  CHECK(c.replay_k == 10);
  CHECK(c.weights.lambda1 == 1.0);
  CHECK(c.weights.lambda4 == 30.0);
  CHECK(c.weights.tau == 2.0);
  CHECK(c.weights.logit_scale == 100.0);
  CHECK(c.optimizer.lr == 0.004);
  CHECK(c.optimizer.weight_decay == 0.01);
  CHECK(c.stage3_epochs == 20);
  CHECK(c.stage4_epochs == 30);
  CHECK(c.seed == 42);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("unknown or mistyped keys are rejected") {
  CHECK(error_kind([] { config_from_json({{"retreival_k", 3}}); }) == ErrorKind::ConfigError);
  CHECK(error_kind([] { config_from_json({{"retrieval_k", "three"}}); }) == ErrorKind::ConfigError);
  CHECK(error_kind([] { config_from_json(nlohmann::json::array()); }) == ErrorKind::ConfigError);
}

TEST_CASE("round trip through JSON and a file") {
  RunConfig c;
  c.retrieval_k = 5;
  c.replay_k = 0;
  c.weights.lambda4 = 0;
  c.soft_targets = true;
  c.seed = 7;
  c.decay_fractions = {0.5};
  c.paths.data_dir = "some/dir";
  const nlohmann::json j = config_to_json(c);
  CHECK(config_to_json(config_from_json(j)) == j);

  TempDir dir;
  write_file(dir / "run.json", j.dump(2));
  const RunConfig back = load_config(dir / "run.json");
  CHECK(back.retrieval_k == 5);
  CHECK(back.seed == 7);
  CHECK(back.paths.data_dir == "some/dir");
  CHECK(back.soft_targets);

  write_file(dir / "broken.json", "{\"seed\": ");
  CHECK(error_kind([&] { load_config(dir / "broken.json"); }) == ErrorKind::ConfigError);
  CHECK(error_kind([&] { load_config(dir / "missing.json"); }) == ErrorKind::ConfigError);
}

TEST_CASE("validation") {
  for (const nlohmann::json& bad : std::vector<nlohmann::json>{
           {{"retrieval_k", 0}},
           {{"k_conf", 0}},
           {{"replay_k", -1}},
           {{"lambda2", -0.5}},
           {{"tau", 0}},
           {{"lr", 0}},
           {{"beta1", 1.0}},
           {{"decay_fractions", {1.5}}},
           {{"stage3", false}},
           {{"stage3", false}, {"stage4", false}, {"stage5", true}},
           {{"stage4", false}},
       }) {
    CHECK_MESSAGE(error_kind([&] { config_from_json(bad); }) == ErrorKind::ConfigError, bad.dump());
  }
  CHECK_NOTHROW(config_from_json({{"stage3", false}, {"stage4", false}, {"stage5", false}}));
  CHECK_NOTHROW(config_from_json({{"stage5", false}}));
  CHECK_NOTHROW(config_from_json({{"replay_k", 0}, {"lambda4", 0}}));
}

TEST_CASE("paths resolve against the data directory") {
  DataPaths p;
  p.data_dir = "d";
  p.world_vl = "elsewhere/world";
  const DataPaths r = p.resolved();
  CHECK(r.world_vl == "elsewhere/world");
  CHECK(r.downstream_vl.parent_path() == "d");
  CHECK(!r.task_stream.empty());
}
