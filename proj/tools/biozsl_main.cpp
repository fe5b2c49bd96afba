// biozsl command line: generate synthetic benchmarks, run the four training
// regimes, sweep the trade-off weight, and merge run reports.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biozsl/config.hpp"
#include "biozsl/datagen.hpp"
#include "biozsl/eval.hpp"
#include "biozsl/io.hpp"
#include "biozsl/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace biozsl;

ConfigMap load_config(const std::string& flag_path) {
  std::string path = flag_path;
  if (path.empty()) {
    if (const char* env = std::getenv("BIOZSL_CONFIG")) path = env;
  }
  if (path.empty()) return ConfigMap::parse("");
  return ConfigMap::parse_file(path);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_gen(const ConfigMap& cfg, const fs::path& out_dir, long long seed_override) {
  GenConfig gen_cfg = gen_config_from(cfg);
  if (seed_override >= 0) gen_cfg.seed = static_cast<std::uint64_t>(seed_override);
  const SyntheticBenchmark bench = generate(gen_cfg);
  export_benchmark(bench, out_dir);
  std::size_t classes = 0;
  for (const auto* set : bench.class_sets()) classes += set->size();
  std::cout << "benchmark written to " << out_dir.string() << "\n"
            << "  classes: " << classes << " (seen " << bench.seen.size() << ", unseen " << bench.unseen.size()
            << ", pools 3x" << bench.aux_low.size() << ")\n"
            << "  samples: " << bench.samples.size() << " x " << bench.samples.dim() << "d\n";
  // Re-import to confirm the artifacts are valid before reporting success.
  import_benchmark(out_dir);
  return 0;
}

int cmd_run(const ConfigMap& cfg, const fs::path& bench_dir, const fs::path& out_dir, const std::string& regime,
            long long seed_flag, double lambda_flag) {
  RunConfig run_cfg = run_config_from(cfg);
  run_cfg.benchmark_dir = bench_dir;
  run_cfg.output_dir = out_dir;
  if (lambda_flag >= 0.0) run_cfg.train.lambda = lambda_flag;
  const std::uint64_t seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : run_cfg.seeds.front();
  const SyntheticBenchmark bench = import_benchmark(bench_dir);
  const RunResult result = run_regime(bench, run_cfg, regime_from_name(regime), seed);
  write_run_outputs(result, out_dir);
  validate_run_outputs(out_dir);
  const EvalReport reports[] = {result.report};
  std::cout << report_table(reports) << "fisher ratio: " << fmt_double(result.fisher) << "\n"
            << "outputs in " << out_dir.string() << "\n";
  return 0;
}

int cmd_sweep_lambda(const ConfigMap& cfg, const fs::path& bench_dir, const fs::path& out_dir,
                     const std::string& regime, const std::vector<double>& lambdas) {
  RunConfig run_cfg = run_config_from(cfg);
  run_cfg.benchmark_dir = bench_dir;
  run_cfg.output_dir = out_dir;
  const SyntheticBenchmark bench = import_benchmark(bench_dir);
  fs::create_directories(out_dir);
  std::ostringstream tsv;
  tsv << "lambda\tAs\tAu\tH\n";
  std::cout << "lambda sweep (" << regime << ", median over " << run_cfg.seeds.size() << " seeds)\n";
  for (double lambda : lambdas) {
    RunConfig c = run_cfg;
    c.train.lambda = lambda;
    std::vector<double> as, au, h;
    for (std::uint64_t seed : c.seeds) {
      const RunResult r = run_regime(bench, c, regime_from_name(regime), seed);
      as.push_back(r.report.accuracy_seen);
      au.push_back(r.report.accuracy_unseen);
      h.push_back(r.report.harmonic);
    }
    char line[128];
    std::snprintf(line, sizeof(line), "  lambda=%-8g As=%6.1f Au=%6.1f H=%6.1f\n", lambda, median(as), median(au),
                  median(h));
    std::cout << line;
    tsv << fmt_double(lambda) << '\t' << fmt_double(median(as)) << '\t' << fmt_double(median(au)) << '\t'
        << fmt_double(median(h)) << '\n';
  }
  write_file(out_dir / "sweep.tsv", tsv.str());
  std::cout << "sweep table written to " << (out_dir / "sweep.tsv").string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_file) {
  std::vector<EvalReport> reports;
  for (const std::string& dir : run_dirs) {
    const fs::path path = fs::path(dir) / "report.tsv";
    if (!fs::exists(path)) throw FormatError("no report.tsv in " + dir);
    for (EvalReport& r : load_report_tsv(read_file(path), path.string())) reports.push_back(std::move(r));
  }
  std::cout << report_table(reports);
  const auto base = std::find_if(reports.begin(), reports.end(),
                                 [](const EvalReport& r) { return r.method == "baseline"; });
  if (base != reports.end()) {
    std::cout << "improvement vs baseline:\n";
    for (const EvalReport& r : reports) {
      if (r.method == "baseline") continue;
      char line[96];
      std::snprintf(line, sizeof(line), "  %-12s %+.1f%%\n", r.method.c_str(),
                    improvement_rate(r.harmonic, base->harmonic));
      std::cout << line;
    }
  }
  if (!out_file.empty()) {
    std::ostringstream ss;
    save_report_tsv(reports, ss);
    write_file(out_file, ss.str());
  }
  return 0;
}

int cmd_project(const fs::path& run_dir, const std::string& out_file) {
  const LabeledSamples feats = load_samples(read_file(run_dir / "features.tsv"), "features.tsv");
  const Projection proj = project_2d(feats.features, feats.class_ids);
  std::ostringstream ss;
  save_projection(proj, ss);
  const fs::path out = out_file.empty() ? run_dir / "projection.tsv" : fs::path(out_file);
  write_file(out, ss.str());
  std::cout << "projection written to " << out.string() << " (top-2 variance " << fmt_double(proj.eigenvalues[0])
            << ", " << fmt_double(proj.eigenvalues[1]) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taxonomy-guided dual-channel feature enhancement for generalized zero-shot learning"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "config file (section.key = value); defaults to $BIOZSL_CONFIG");

  auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark");
  std::string gen_out = "benchmark";
  long long gen_seed = -1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "generator seed (overrides config)");

  auto* run = app.add_subcommand("run", "run one training regime end to end");
  std::string run_bench = "benchmark", run_out = "run", run_regime_name = "baseline";
  long long run_seed = -1;
  double run_lambda = -1.0;
  run->add_option("--benchmark", run_bench, "benchmark directory");
  run->add_option("--out", run_out, "output directory");
  run->add_option("--regime", run_regime_name, "baseline|low|middle|high")->required();
  run->add_option("--seed", run_seed, "run seed");
  run->add_option("--lambda", run_lambda, "trade-off weight override");

  auto* sweep = app.add_subcommand("sweep-lambda", "median H over a lambda grid");
  std::string sweep_bench = "benchmark", sweep_out = "sweep", sweep_regime = "high";
  std::vector<double> sweep_lambdas = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
  sweep->add_option("--benchmark", sweep_bench, "benchmark directory");
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--regime", sweep_regime, "regime to sweep");
  sweep->add_option("--lambdas", sweep_lambdas, "lambda grid")->delimiter(',');

  auto* report = app.add_subcommand("report", "merge run reports into one table");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report->add_option("dirs", report_dirs, "run output directories")->required();
  report->add_option("--out", report_out, "write combined TSV here");

  auto* project = app.add_subcommand("project", "2-D projection of a run's test features");
  std::string project_run = "run", project_out;
  project->add_option("--run", project_run, "run output directory");
  project->add_option("--out", project_out, "output file (default <run>/projection.tsv)");

  CLI11_PARSE(app, argc, argv);

  try {
    const ConfigMap cfg = load_config(config_path);
    if (gen->parsed()) return cmd_gen(cfg, gen_out, gen_seed);
    if (run->parsed()) return cmd_run(cfg, run_bench, run_out, run_regime_name, run_seed, run_lambda);
    if (sweep->parsed()) return cmd_sweep_lambda(cfg, sweep_bench, sweep_out, sweep_regime, sweep_lambdas);
    if (report->parsed()) return cmd_report(report_dirs, report_out);
    if (project->parsed()) return cmd_project(project_run, project_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
