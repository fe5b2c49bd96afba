#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "biozsl/checkpoint.hpp"
#include "biozsl/config.hpp"
#include "biozsl/datagen.hpp"
#include "biozsl/dataset.hpp"
#include "biozsl/dual_channel.hpp"
#include "biozsl/errors.hpp"
#include "biozsl/eval.hpp"
#include "biozsl/rng.hpp"
#include "biozsl/taxonomy.hpp"
#include "biozsl/vae.hpp"

namespace biozsl {

enum class Regime { Baseline, Low, Middle, High };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::Low: return "low";
    case Regime::Middle: return "middle";
    case Regime::High: return "high";
  }
  return "?";
}

inline Regime regime_from_name(std::string_view name) {
  for (Regime r : {Regime::Baseline, Regime::Low, Regime::Middle, Regime::High}) {
    if (name == regime_name(r)) return r;
  }
  throw ConfigError("unknown regime '" + std::string(name) + "' (expected baseline|low|middle|high)");
}

// Stand-in for "start from a pre-trained model": the extractor is first
// trained on a disjoint synthetic classification pretext before any
// fine-tuning.
struct PretextConfig {
  std::size_t classes = 16;
  std::size_t samples_per_class = 20;
  double mean_scale = 3.0;
  double noise = 1.0;
  std::size_t epochs = 3;
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
};

struct RunConfig {
  std::filesystem::path benchmark_dir;
  std::filesystem::path output_dir;
  TrainConfig train;
  PretextConfig pretext;
  VaeConfig vae;
  ClassifierConfig classifier;
  std::size_t draws_per_item = 60;
  std::size_t aux_classes = 50;
  // Auxiliary sample quota per class, sized so the two channels supply a
  // comparable number of batches per epoch.
  std::size_t aux_samples_per_class = 24;
  double train_fraction = 0.75;  // per-seen-class train/test split
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7};

  void validate() const {
    if (seeds.empty()) throw ConfigError("run: seeds list must be non-empty");
    if (!benchmark_dir.empty() && benchmark_dir == output_dir) {
      throw ConfigError("run: benchmark and output paths must be distinct");
    }
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
      throw ConfigError("run: train_fraction must be in (0, 1)");
    }
    if (draws_per_item == 0) throw ConfigError("run: draws_per_item must be >= 1");
    if (aux_classes == 0) throw ConfigError("run: aux_classes must be >= 1");
    train.validate();
    vae.validate();
    classifier.validate();
  }
};

// Configuration file keys, all optional; command-line flags override.
inline GenConfig gen_config_from(const ConfigMap& cfg) {
  GenConfig g;
  g.feature_dim = static_cast<std::size_t>(cfg.get_int("gen.feature_dim", static_cast<long long>(g.feature_dim)));
  g.attr_dim = static_cast<std::size_t>(cfg.get_int("gen.attr_dim", static_cast<long long>(g.attr_dim)));
  g.modality_correlation = cfg.get_double("gen.modality_correlation", g.modality_correlation);
  g.sample_noise = cfg.get_double("gen.sample_noise", g.sample_noise);
  g.samples_per_class =
      static_cast<std::size_t>(cfg.get_int("gen.samples_per_class", static_cast<long long>(g.samples_per_class)));
  g.seen_classes = static_cast<std::size_t>(cfg.get_int("gen.seen_classes", static_cast<long long>(g.seen_classes)));
  g.unseen_classes =
      static_cast<std::size_t>(cfg.get_int("gen.unseen_classes", static_cast<long long>(g.unseen_classes)));
  g.pool_classes = static_cast<std::size_t>(cfg.get_int("gen.pool_classes", static_cast<long long>(g.pool_classes)));
  g.seed = static_cast<std::uint64_t>(cfg.get_int("gen.seed", static_cast<long long>(g.seed)));
  const auto scales = cfg.get_doubles("gen.diffusion_scales",
                                      std::vector<double>(g.diffusion_scales.begin(), g.diffusion_scales.end()));
  if (scales.size() != kRankCount) throw ConfigError("gen.diffusion_scales needs 7 values (species..kingdom)");
  std::copy(scales.begin(), scales.end(), g.diffusion_scales.begin());
  std::vector<double> branching(g.branching.begin(), g.branching.end());
  const auto br = cfg.get_doubles("gen.branching", branching);
  if (br.size() != kRankCount) throw ConfigError("gen.branching needs 7 values (species..kingdom)");
  for (std::size_t i = 0; i < kRankCount; ++i) g.branching[i] = static_cast<std::size_t>(br[i]);
  return g;
}

inline RunConfig run_config_from(const ConfigMap& cfg) {
  RunConfig r;
  r.train.lambda = cfg.get_double("train.lambda", r.train.lambda);
  r.train.learning_rate = cfg.get_double("train.learning_rate", r.train.learning_rate);
  r.train.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs", static_cast<long long>(r.train.epochs)));
  r.train.batch_size =
      static_cast<std::size_t>(cfg.get_int("train.batch_size", static_cast<long long>(r.train.batch_size)));
  r.train.feature_width =
      static_cast<std::size_t>(cfg.get_int("train.feature_width", static_cast<long long>(r.train.feature_width)));
  r.train.hidden_width =
      static_cast<std::size_t>(cfg.get_int("train.hidden_width", static_cast<long long>(r.train.hidden_width)));
  r.pretext.classes =
      static_cast<std::size_t>(cfg.get_int("pretext.classes", static_cast<long long>(r.pretext.classes)));
  r.pretext.samples_per_class = static_cast<std::size_t>(
      cfg.get_int("pretext.samples_per_class", static_cast<long long>(r.pretext.samples_per_class)));
  r.pretext.epochs = static_cast<std::size_t>(cfg.get_int("pretext.epochs", static_cast<long long>(r.pretext.epochs)));
  r.pretext.learning_rate = cfg.get_double("pretext.learning_rate", r.pretext.learning_rate);
  r.vae.latent_width =
      static_cast<std::size_t>(cfg.get_int("vae.latent_width", static_cast<long long>(r.vae.latent_width)));
  r.vae.hidden_width =
      static_cast<std::size_t>(cfg.get_int("vae.hidden_width", static_cast<long long>(r.vae.hidden_width)));
  r.vae.beta = cfg.get_double("vae.beta", r.vae.beta);
  r.vae.gamma = cfg.get_double("vae.gamma", r.vae.gamma);
  r.vae.delta = cfg.get_double("vae.delta", r.vae.delta);
  r.vae.learning_rate = cfg.get_double("vae.learning_rate", r.vae.learning_rate);
  r.vae.epochs = static_cast<std::size_t>(cfg.get_int("vae.epochs", static_cast<long long>(r.vae.epochs)));
  r.vae.batch_size = static_cast<std::size_t>(cfg.get_int("vae.batch_size", static_cast<long long>(r.vae.batch_size)));
  r.classifier.learning_rate = cfg.get_double("classifier.learning_rate", r.classifier.learning_rate);
  r.classifier.epochs =
      static_cast<std::size_t>(cfg.get_int("classifier.epochs", static_cast<long long>(r.classifier.epochs)));
  r.classifier.batch_size =
      static_cast<std::size_t>(cfg.get_int("classifier.batch_size", static_cast<long long>(r.classifier.batch_size)));
  r.draws_per_item =
      static_cast<std::size_t>(cfg.get_int("run.draws_per_item", static_cast<long long>(r.draws_per_item)));
  r.aux_classes = static_cast<std::size_t>(cfg.get_int("run.aux_classes", static_cast<long long>(r.aux_classes)));
  r.aux_samples_per_class = static_cast<std::size_t>(
      cfg.get_int("run.aux_samples_per_class", static_cast<long long>(r.aux_samples_per_class)));
  r.train_fraction = cfg.get_double("run.train_fraction", r.train_fraction);
  r.seeds = cfg.get_u64s("run.seeds", r.seeds);
  return r;
}

namespace pipeline_detail {

// Deterministic per-class train/test split of the seen samples: within each
// class the first floor(fraction * n) rows (file order) train, the rest test.
struct SeenSplit {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

inline SeenSplit split_seen(const LabeledSamples& samples, const std::vector<std::string>& seen,
                            double train_fraction) {
  std::unordered_map<std::string, std::size_t> seen_pos;
  for (std::size_t i = 0; i < seen.size(); ++i) seen_pos[seen[i]] = i;
  std::unordered_map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (seen_pos.count(samples.class_ids[r])) rows_of[samples.class_ids[r]].push_back(r);
  }
  SeenSplit split;
  for (const std::string& id : seen) {
    const auto it = rows_of.find(id);
    if (it == rows_of.end() || it->second.empty()) {
      throw CoverageError("seen class '" + id + "' has no samples");
    }
    const std::vector<std::size_t>& rows = it->second;
    std::size_t n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(rows.size())));
    if (n_train == 0) n_train = 1;
    if (n_train == rows.size()) n_train = rows.size() - 1;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      (k < n_train ? split.train_rows : split.test_rows).push_back(rows[k]);
    }
  }
  return split;
}

inline Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t dim = x.shape[1];
  Tensor out = Tensor::zeros({rows.size(), dim});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(&x.values[rows[k] * dim], dim, &out.values[k * dim]);
  }
  return out;
}

// Per-dimension standardization statistics fitted on training features.
struct Standardizer {
  std::vector<double> mean, inv_std;

  static Standardizer fit(const Tensor& x) {
    const std::size_t n = x.shape[0], d = x.shape[1];
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.inv_std.assign(d, 1.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.values[r * d + j];
    for (double& m : s.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.values[r * d + j] - s.mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      s.inv_std[j] = 1.0 / std::max(sd, 1e-8);
    }
    return s;
  }

  Tensor apply(const Tensor& x) const {
    Tensor out = x;
    const std::size_t d = mean.size();
    for (std::size_t r = 0; r < out.shape[0]; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        out.values[r * d + j] = (out.values[r * d + j] - mean[j]) * inv_std[j];
      }
    return out;
  }

  std::vector<double> apply(const std::vector<double>& v) const {
    std::vector<double> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) out[j] = (v[j] - mean[j]) * inv_std[j];
    return out;
  }
};

inline Dataset make_pretext_dataset(std::size_t input_dim, const PretextConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  const std::size_t n = cfg.classes * cfg.samples_per_class;
  d.x = Tensor::zeros({n, input_dim});
  d.y.reserve(n);
  d.classes.reserve(cfg.classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    d.classes.push_back("pretext" + std::to_string(c));
    std::vector<double> mean(input_dim);
    for (double& m : mean) m = cfg.mean_scale * rng.normal();
    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
      for (std::size_t j = 0; j < input_dim; ++j) {
        d.x.values[row * input_dim + j] = mean[j] + cfg.noise * rng.normal();
      }
      d.y.push_back(static_cast<int>(c));
      ++row;
    }
  }
  return d;
}

}  // namespace pipeline_detail

struct RunResult {
  std::string regime;
  std::uint64_t seed = 0;
  EvalReport report;
  TrainHistory history;
  LabeledSamples test_features;           // extractor outputs on the GZSL test set
  std::vector<std::string> predictions;   // aligned with test_features rows
  double fisher = 0.0;
  Projection projection;
  ModelParams model;
  VaeParams vae;
  LatentClassifier classifier;
};

// Full single-seed pipeline: pretext pretraining, (dual-channel or baseline)
// fine-tuning, feature re-extraction, VAE + latent classifier training, GZSL
// evaluation.
inline RunResult run_regime(const SyntheticBenchmark& bench, const RunConfig& cfg, Regime regime,
                            std::uint64_t seed) {
  cfg.validate();
  using namespace pipeline_detail;

  const std::size_t input_dim = bench.samples.dim();

  // Stage 1: pretext pretraining of the extractor. The pretext stream depends
  // only on the seed, so every regime starts from the same pretrained state.
  ModelParams model = make_model_params(input_dim, cfg.train.hidden_width, cfg.train.feature_width,
                                        regime == Regime::Baseline ? 1 : cfg.aux_classes, bench.seen.size(),
                                        derive_seed(seed, "init"));
  {
    const Dataset pretext = make_pretext_dataset(input_dim, cfg.pretext, derive_seed(seed, "pretext/data"));
    ModelParams warm = make_model_params(input_dim, cfg.train.hidden_width, cfg.train.feature_width, 1,
                                         cfg.pretext.classes, derive_seed(seed, "init"));
    warm.extractor = std::move(model.extractor);
    TrainConfig pcfg;
    pcfg.learning_rate = cfg.pretext.learning_rate;
    pcfg.epochs = cfg.pretext.epochs;
    pcfg.batch_size = cfg.pretext.batch_size;
    pcfg.seed = derive_seed(seed, "pretext/train");
    pcfg.feature_width = cfg.train.feature_width;
    pcfg.hidden_width = cfg.train.hidden_width;
    train_baseline(warm, pretext, pcfg);
    model.extractor = std::move(warm.extractor);
  }

  // Stage 2: fine-tune, either current-channel-only or jointly with the
  // regime's auxiliary selection.
  const SeenSplit split = split_seen(bench.samples, bench.seen, cfg.train_fraction);
  Dataset cur;
  cur.classes = bench.seen;
  {
    std::unordered_map<std::string, int> label_of;
    for (std::size_t i = 0; i < bench.seen.size(); ++i) label_of[bench.seen[i]] = static_cast<int>(i);
    cur.x = rows_of(bench.samples.features, split.train_rows);
    cur.y.reserve(split.train_rows.size());
    for (std::size_t r : split.train_rows) cur.y.push_back(label_of[bench.samples.class_ids[r]]);
  }

  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(seed, "train");
  RunResult result;
  result.regime = regime_name(regime);
  result.seed = seed;
  if (regime == Regime::Baseline) {
    result.history = train_baseline(model, cur, tcfg);
  } else {
    const std::vector<std::string>* pool_ids = nullptr;
    RelevanceLevel level{};
    switch (regime) {
      case Regime::Low: pool_ids = &bench.aux_low; level = RelevanceLevel::Low; break;
      case Regime::Middle: pool_ids = &bench.aux_middle; level = RelevanceLevel::Middle; break;
      case Regime::High: pool_ids = &bench.aux_high; level = RelevanceLevel::High; break;
      case Regime::Baseline: break;
    }
    std::unordered_map<std::string, std::size_t> sample_count;
    for (const std::string& id : bench.samples.class_ids) ++sample_count[id];
    std::vector<PoolEntry> pool;
    pool.reserve(pool_ids->size());
    for (const std::string& id : *pool_ids) pool.push_back({id, sample_count[id]});
    const AuxiliarySelection sel = select_auxiliary(bench.taxonomy, bench.seen, pool, level, cfg.aux_classes,
                                                    cfg.aux_samples_per_class, derive_seed(seed, "aux-select"));
    const Dataset aux = make_dataset(bench.samples, sel.classes, sel.per_class_quota);
    result.history = train_dual(model, aux, cur, tcfg);
  }

  // Stage 3: re-extract features with the fine-tuned extractor.
  const Tensor feats_train = extract(model.extractor, cur.x);
  std::vector<std::size_t> test_rows = split.test_rows;
  std::unordered_map<std::string, bool> is_unseen;
  for (const std::string& id : bench.unseen) is_unseen[id] = true;
  for (std::size_t r = 0; r < bench.samples.size(); ++r) {
    if (is_unseen.count(bench.samples.class_ids[r])) test_rows.push_back(r);
  }
  const Tensor test_inputs = rows_of(bench.samples.features, test_rows);
  const Tensor feats_test = extract(model.extractor, test_inputs);
  std::vector<std::string> test_truth;
  test_truth.reserve(test_rows.size());
  for (std::size_t r : test_rows) test_truth.push_back(bench.samples.class_ids[r]);

  // Stage 4: VAE over standardized features and attributes, then the latent
  // classifier over seen + unseen.
  const Standardizer feat_std = Standardizer::fit(feats_train);
  Tensor sem_seen = Tensor::zeros({bench.seen.size(), bench.semantics.begin()->second.size()});
  {
    std::vector<std::vector<double>> sem_rows;
    for (const std::string& id : bench.seen) sem_rows.push_back(bench.semantics.at(id));
    for (const std::string& id : bench.unseen) sem_rows.push_back(bench.semantics.at(id));
    Tensor all = Tensor::zeros({sem_rows.size(), sem_rows[0].size()});
    for (std::size_t r = 0; r < sem_rows.size(); ++r) {
      std::copy(sem_rows[r].begin(), sem_rows[r].end(), all.values.begin() + static_cast<std::ptrdiff_t>(r * sem_rows[r].size()));
    }
    const Standardizer sem_std = Standardizer::fit(all);
    for (std::size_t i = 0; i < bench.seen.size(); ++i) {
      const std::vector<double> v = sem_std.apply(bench.semantics.at(bench.seen[i]));
      std::copy(v.begin(), v.end(), sem_seen.values.begin() + static_cast<std::ptrdiff_t>(i * v.size()));
    }
    result.vae = make_vae_params(cfg.train.feature_width, sem_seen.shape[1], cfg.vae.latent_width,
                                 cfg.vae.hidden_width, derive_seed(seed, "vae/init"));
    VaeConfig vcfg = cfg.vae;
    vcfg.seed = derive_seed(seed, "vae/train");
    train_vae(result.vae, feat_std.apply(feats_train), cur.y, sem_seen, vcfg);

    std::vector<std::string> train_ids;
    train_ids.reserve(cur.y.size());
    for (int y : cur.y) train_ids.push_back(bench.seen[static_cast<std::size_t>(y)]);
    std::vector<std::pair<std::string, std::vector<double>>> unseen_sem;
    for (const std::string& id : bench.unseen) unseen_sem.emplace_back(id, sem_std.apply(bench.semantics.at(id)));

    const LatentDataset latents = build_latent_trainset(result.vae, feat_std.apply(feats_train), train_ids,
                                                        unseen_sem, cfg.draws_per_item, derive_seed(seed, "latents"));
    std::vector<std::string> all_classes = bench.seen;
    all_classes.insert(all_classes.end(), bench.unseen.begin(), bench.unseen.end());
    ClassifierConfig ccfg = cfg.classifier;
    ccfg.seed = derive_seed(seed, "clf");
    result.classifier = train_latent_classifier(latents, ccfg, all_classes);
  }

  // Stage 5: GZSL evaluation on seen-test + unseen-test.
  result.predictions = predict(result.vae, result.classifier, feat_std.apply(feats_test));
  const std::size_t n_seen_test = split.test_rows.size();
  const std::vector<std::string> pred_seen(result.predictions.begin(),
                                           result.predictions.begin() + static_cast<std::ptrdiff_t>(n_seen_test));
  const std::vector<std::string> truth_seen(test_truth.begin(),
                                            test_truth.begin() + static_cast<std::ptrdiff_t>(n_seen_test));
  const std::vector<std::string> pred_unseen(result.predictions.begin() + static_cast<std::ptrdiff_t>(n_seen_test),
                                             result.predictions.end());
  const std::vector<std::string> truth_unseen(test_truth.begin() + static_cast<std::ptrdiff_t>(n_seen_test),
                                              test_truth.end());
  result.report = make_report(regime_name(regime), per_class_accuracy(pred_seen, truth_seen, bench.seen),
                              per_class_accuracy(pred_unseen, truth_unseen, bench.unseen));

  result.test_features.class_ids = test_truth;
  result.test_features.features = feats_test;
  result.fisher = separability(feats_test, test_truth);
  result.projection = project_2d(feats_test, test_truth);
  result.model = std::move(model);
  return result;
}

inline void write_run_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream ss;
    const EvalReport reports[] = {r.report};
    save_report_tsv(reports, ss);
    write_file(dir / "report.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_history(r.history, ss);
    write_file(dir / "history.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_projection(r.projection, ss);
    write_file(dir / "projection.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_samples(r.test_features, ss);
    write_file(dir / "features.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    ss << "truth\tpredicted\n";
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
      ss << r.test_features.class_ids[i] << '\t' << r.predictions[i] << '\n';
    }
    write_file(dir / "predictions.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    ss << "fisher_ratio\t" << fmt_double(r.fisher) << '\n';
    write_file(dir / "separability.tsv", ss.str());
  }
  ckpt::save_file(dir / "model.ckpt", ckpt::collect({{"extractor", &r.model.extractor},
                                                     {"aux_head", &r.model.aux_head},
                                                     {"cur_head", &r.model.cur_head}}));
  ckpt::save_file(dir / "vae.ckpt", ckpt::collect({{"visual_encoder", &r.vae.visual_encoder},
                                                   {"visual_decoder", &r.vae.visual_decoder},
                                                   {"semantic_encoder", &r.vae.semantic_encoder},
                                                   {"semantic_decoder", &r.vae.semantic_decoder}}));
  ckpt::save_file(dir / "classifier.ckpt", ckpt::collect({{"latent_clf", &r.classifier.net}}));
}

// Re-reads the artifacts a run just wrote; throws on any format violation.
inline void validate_run_outputs(const std::filesystem::path& dir) {
  const auto reports = load_report_tsv(read_file(dir / "report.tsv"), "report.tsv");
  if (reports.size() != 1) throw FormatError("report.tsv: expected exactly one row");
  load_history(read_file(dir / "history.tsv"), "history.tsv");
  const auto lines = split_lines(read_file(dir / "projection.tsv"));
  if (lines.empty() || lines[0] != "x\ty\tclass_id") throw FormatError("projection.tsv: bad header");
  load_samples(read_file(dir / "features.tsv"), "features.tsv");
  ckpt::load_file(dir / "model.ckpt");
}

}  // namespace biozsl
