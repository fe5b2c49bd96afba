#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "biozsl/config.hpp"
#include "biozsl/datagen.hpp"
#include "biozsl/io.hpp"
#include "biozsl/pipeline.hpp"

using namespace biozsl;
namespace fs = std::filesystem;

namespace {

GenConfig small_gen(std::uint64_t seed) {
  GenConfig cfg;
  cfg.branching = {3, 3, 2, 2, 2, 2, 2};
  cfg.feature_dim = 8;
  cfg.attr_dim = 6;
  cfg.samples_per_class = 12;
  cfg.seen_classes = 6;
  cfg.unseen_classes = 2;
  cfg.pool_classes = 10;
  cfg.seed = seed;
  return cfg;
}

RunConfig small_run() {
  RunConfig cfg;
  cfg.train.epochs = 4;
  cfg.train.feature_width = 12;
  cfg.train.hidden_width = 10;
  cfg.pretext.classes = 4;
  cfg.pretext.samples_per_class = 8;
  cfg.pretext.epochs = 2;
  cfg.vae.epochs = 6;
  cfg.vae.latent_width = 6;
  cfg.vae.hidden_width = 10;
  cfg.classifier.epochs = 8;
  cfg.draws_per_item = 6;
  cfg.aux_classes = 8;
  cfg.aux_samples_per_class = 9;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config files parse section.key lines with comments", "[config]") {
  const ConfigMap cfg = ConfigMap::parse(
      "# a comment\n"
      "train.lambda = 2.5\n"
      "gen.seed = 7   # trailing comment\n"
      "run.seeds = 1, 2, 3\n"
      "\n");
  REQUIRE(cfg.get_double("train.lambda", 0.0) == 2.5);
  REQUIRE(cfg.get_int("gen.seed", 0) == 7);
  REQUIRE(cfg.get_u64s("run.seeds", {}) == std::vector<std::uint64_t>{1, 2, 3});
  REQUIRE(cfg.get_double("vae.beta", 0.5) == 0.5);  // fallback
}

TEST_CASE("config files reject malformed lines", "[config]") {
  REQUIRE_THROWS_AS(ConfigMap::parse("just words\n"), ConfigError);
  REQUIRE_THROWS_AS(ConfigMap::parse("nodot = 3\n"), ConfigError);
  REQUIRE_THROWS_AS(ConfigMap::parse("train.lambda = abc\n").get_double("train.lambda", 0.0), ConfigError);
}

TEST_CASE("config values feed the run and gen configs", "[config]") {
  const ConfigMap cfg = ConfigMap::parse(
      "gen.feature_dim = 24\n"
      "gen.diffusion_scales = 1,2,3,4,5,6,7\n"
      "train.lambda = 0.25\n"
      "vae.delta = 2.0\n"
      "run.seeds = 11,12\n");
  const GenConfig g = gen_config_from(cfg);
  REQUIRE(g.feature_dim == 24);
  REQUIRE(g.diffusion_scales[0] == 1.0);
  REQUIRE(g.diffusion_scales[6] == 7.0);
  const RunConfig r = run_config_from(cfg);
  REQUIRE(r.train.lambda == 0.25);
  REQUIRE(r.vae.delta == 2.0);
  REQUIRE(r.seeds == std::vector<std::uint64_t>{11, 12});
}

TEST_CASE("run config validation catches bad settings", "[config]") {
  RunConfig cfg = small_run();
  cfg.seeds.clear();
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_run();
  cfg.benchmark_dir = "same";
  cfg.output_dir = "same";
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_run();
  cfg.train.lambda = -1.0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("run_regime produces a valid report on every regime", "[pipeline]") {
  const SyntheticBenchmark bench = generate(small_gen(21));
  const RunConfig cfg = small_run();
  for (Regime regime : {Regime::Baseline, Regime::Low, Regime::Middle, Regime::High}) {
    const RunResult r = run_regime(bench, cfg, regime, 1);
    REQUIRE(r.report.method == regime_name(regime));
    REQUIRE(r.report.accuracy_seen >= 0.0);
    REQUIRE(r.report.accuracy_seen <= 100.0);
    REQUIRE(r.report.accuracy_unseen >= 0.0);
    REQUIRE(r.report.accuracy_unseen <= 100.0);
    REQUIRE(r.report.harmonic >= 0.0);
    REQUIRE(r.report.harmonic <= 100.0);
    REQUIRE(r.history.size() > 0);
    REQUIRE(r.fisher >= 0.0);
    REQUIRE(r.test_features.size() == r.predictions.size());
  }
}

TEST_CASE("run outputs are byte-identical across reruns with one seed", "[pipeline]") {
  const SyntheticBenchmark bench = generate(small_gen(22));
  const RunConfig cfg = small_run();
  const fs::path dir1 = temp_dir("biozsl_run_det1");
  const fs::path dir2 = temp_dir("biozsl_run_det2");
  write_run_outputs(run_regime(bench, cfg, Regime::High, 5), dir1);
  write_run_outputs(run_regime(bench, cfg, Regime::High, 5), dir2);
  for (const char* name : {"report.tsv", "history.tsv", "projection.tsv", "features.tsv", "predictions.tsv",
                           "separability.tsv", "model.ckpt", "vae.ckpt", "classifier.ckpt"}) {
    REQUIRE(read_file(dir1 / name) == read_file(dir2 / name));
  }
  validate_run_outputs(dir1);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("different seeds change the outcome", "[pipeline]") {
  const SyntheticBenchmark bench = generate(small_gen(23));
  const RunConfig cfg = small_run();
  const RunResult a = run_regime(bench, cfg, Regime::High, 1);
  const RunResult b = run_regime(bench, cfg, Regime::High, 2);
  REQUIRE_FALSE(a.model.extractor.at("W1").value == b.model.extractor.at("W1").value);
}

TEST_CASE("every regime starts from the same pretrained extractor", "[pipeline]") {
  // The baseline and the dual runs must share the pretext stage bit for bit;
  // verified indirectly: two regimes with the same seed diverge only through
  // fine-tuning, so their histories start from the same first loss.
  const SyntheticBenchmark bench = generate(small_gen(24));
  RunConfig cfg = small_run();
  cfg.train.epochs = 1;
  cfg.train.lambda = 0.0;
  const RunResult base = run_regime(bench, cfg, Regime::Baseline, 3);
  const RunResult high = run_regime(bench, cfg, Regime::High, 3);
  REQUIRE(base.history.front().loss_cur == high.history.front().loss_cur);
}

TEST_CASE("missing report file is reported by directory", "[pipeline]") {
  const fs::path dir = temp_dir("biozsl_run_missing");
  REQUIRE_THROWS_AS(validate_run_outputs(dir), FormatError);
  fs::remove_all(dir);
}
