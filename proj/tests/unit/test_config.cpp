#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "mmcdfsl/config.hpp"
#include "mmcdfsl/errors.hpp"

using namespace mmcdfsl;

TEST_SUITE("config") {
  TEST_CASE("defaults resolve to the documented stage settings") {
    const RunConfig c;
    CHECK(c.get_double("rho_pretrain") == 0.9);
    CHECK(c.get_double("rho_distill") == 0.75);
    CHECK(c.get_double("rho_infer") == 0.75);
    CHECK(c.get_int("ensemble") == 2);
    CHECK(c.get_double("lambda_ce_rgb") == 0.05);
    CHECK(c.get_double("lambda_ce_flow") == 0.01);
    CHECK(c.get_double("lambda_ce_pose") == 0.01);
    CHECK(c.provenance("seed") == Provenance::Default);

    const PipelineSettings s = c.to_settings();
    CHECK(s.pretrain.mask_ratio == 0.9);
    CHECK(s.distill.mask_ratio == 0.75);
    CHECK(s.eval.inference.mask_ratio == 0.75);
    CHECK(s.eval.inference.ensemble == 2);
    CHECK(s.eval.n_way == 5);
    CHECK(s.eval.k_shot == 1);
    CHECK(s.eval.n_query == 15);
    CHECK(s.eval.episodes == 600);
    CHECK(s.model.embed_dim == 64);
    CHECK(s.lambda_for(ModalityKind::POSE) == 0.01);
  }

  TEST_CASE("every documented key has a parseable default") {
    for (const ConfigKey& k : config_keys()) {
      INFO(k.name);
      RunConfig c;
      CHECK_NOTHROW(c.set(k.name, k.default_value, Provenance::Flag));
      CHECK(find_key(k.name) != nullptr);
      CHECK(flag_to_key(key_to_flag(k.name)) == k.name);
    }
    CHECK(key_to_flag("rho_infer") == "rho-infer");
  }

  TEST_CASE("range and type errors name the key") {
    RunConfig c;
    for (const char* bad : {"1.0", "1.5", "-0.1", "abc"}) {
      try {
        c.set("rho_infer", bad, Provenance::Flag);
        FAIL("accepted rho_infer=" << bad);
      } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("rho_infer") != std::string::npos);
      }
    }
    CHECK_THROWS_AS(c.set("ensemble", "0", Provenance::Flag), ConfigError);
    CHECK_THROWS_AS(c.set("ensemble", "2.5", Provenance::Flag), ConfigError);
    CHECK_THROWS_AS(c.set("no_such_key", "1", Provenance::Flag), ConfigError);
    CHECK_THROWS_AS(c.set("modality", "depth", Provenance::Flag), ConfigError);
    CHECK_THROWS_AS(c.set("tradeoff_rhos", "0,x", Provenance::Flag), ConfigError);
    CHECK_NOTHROW(c.set("rho_infer", "0.9", Provenance::Flag));
    CHECK(c.get_double("rho_infer") == 0.9);
  }

  TEST_CASE("cross-key checks") {
    RunConfig c;
    c.set("nway", "9", Provenance::Flag);
    CHECK_THROWS_AS(c.to_settings(), ConfigError);
    c = RunConfig{};
    c.set("modalities", "flow,pose", Provenance::Flag);
    CHECK_THROWS_AS(c.to_settings(), ConfigError);
    c = RunConfig{};
    c.set("data_frames", "7", Provenance::Flag);
    CHECK_THROWS_AS(c.to_settings(), ConfigError);
  }

  TEST_CASE("config text parsing") {
    const auto kv = parse_config_text("# comment\n\nseed = 4  # trailing\n  rho_infer=0.5\n");
    REQUIRE(kv.size() == 2);
    CHECK(kv[0] == std::pair<std::string, std::string>{"seed", "4"});
    CHECK(kv[1] == std::pair<std::string, std::string>{"rho_infer", "0.5"});
    CHECK_THROWS_AS(parse_config_text("seed 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("bogus = 1\n"), ConfigError);
  }

  TEST_CASE("precedence: defaults < file < flags") {
    const auto dir = testutil::temp_dir("config");
    std::ofstream(dir / "run.cfg") << "seed = 5\nepisodes = 10\n";
    const RunConfig c = load_config(dir / "run.cfg", {{"episodes", "20"}});
    CHECK(c.get_u64("seed") == 5);
    CHECK(c.provenance("seed") == Provenance::File);
    CHECK(c.get_int("episodes") == 20);
    CHECK(c.provenance("episodes") == Provenance::Flag);
    CHECK(c.provenance("nway") == Provenance::Default);
    CHECK(c.dump().find("episodes = 20") != std::string::npos);
    CHECK_THROWS_AS(load_config(dir / "absent.cfg"), IoError);
  }

  TEST_CASE("hash covers settings but not paths") {
    RunConfig a, b;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    b.set("out_dir", "/tmp/elsewhere", Provenance::Flag);
    CHECK(a.hash() == b.hash());
    b.set("rho_infer", "0.9", Provenance::Flag);
    CHECK(a.hash() != b.hash());
  }

  TEST_CASE("stage seeds are derived from the global seed") {
    RunConfig a, b;
    b.set("seed", "1", Provenance::Flag);
    const PipelineSettings sa = a.to_settings(), sb = b.to_settings();
    CHECK(sa.data.seed != sb.data.seed);
    CHECK(sa.pretrain.seed != sb.pretrain.seed);
    CHECK(sa.distill.seed != sb.distill.seed);
    CHECK(sa.eval.seed != sb.eval.seed);
    CHECK(sa.data.seed == RunConfig{}.to_settings().data.seed);
  }
}
