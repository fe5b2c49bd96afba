#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "biozsl/dataset.hpp"
#include "biozsl/errors.hpp"
#include "biozsl/io.hpp"
#include "biozsl/rng.hpp"
#include "biozsl/taxonomy.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

// Synthetic benchmark generator. Classes live on a seven-rank tree; each tree
// node drifts from its parent by a Gaussian step whose scale shrinks toward
// Species, so feature similarity tracks taxonomic kinship. Class attributes
// are generated the same way in a separate attribute space.
struct GenConfig {
  // branching[r]: children of rank r per node of rank r+1 (Kingdom entry =
  // number of kingdom roots). Indexed Species..Kingdom like Rank.
  std::array<std::size_t, kRankCount> branching = {3, 3, 3, 3, 2, 2, 2};
  std::size_t feature_dim = 16;
  std::size_t attr_dim = 12;
  // Per-rank prototype drift scales, Species..Kingdom. Kingdoms sit far
  // apart; the class/phylum steps are kept moderate so same-kingdom classes
  // remain near enough to share extractor units.
  std::array<double, kRankCount> diffusion_scales = {0.5, 1.0, 1.5, 2.0, 1.5, 2.0, 6.0};
  // Correlation between a node's attribute drift and its feature drift.
  // Attributes only carry transferable information about unseen classes when
  // the two spaces co-vary; 0 makes the semantic channel pure noise.
  double modality_correlation = 0.85;
  double sample_noise = 1.5;
  std::size_t samples_per_class = 40;
  std::size_t seen_classes = 20;
  std::size_t unseen_classes = 5;
  std::size_t pool_classes = 50;  // per relevance level
  std::uint64_t seed = 1;

  void validate() const {
    for (std::size_t b : branching) {
      if (b == 0) throw ConfigError("gen: branching factors must be >= 1");
    }
    if (feature_dim < 2) throw ConfigError("gen: feature_dim must be >= 2");
    if (attr_dim < 2) throw ConfigError("gen: attr_dim must be >= 2");
    for (double s : diffusion_scales) {
      if (s < 0.0) throw ConfigError("gen: diffusion scales must be >= 0");
    }
    if (modality_correlation < 0.0 || modality_correlation > 1.0) {
      throw ConfigError("gen: modality_correlation must be in [0, 1]");
    }
    if (sample_noise < 0.0) throw ConfigError("gen: sample_noise must be >= 0");
    if (samples_per_class == 0) throw ConfigError("gen: samples_per_class must be >= 1");
    if (seen_classes == 0) throw ConfigError("gen: at least one seen class required");
    if (unseen_classes == 0) throw ConfigError("gen: at least one unseen class required");
  }
};

struct SyntheticBenchmark {
  Taxonomy taxonomy;
  std::map<std::string, std::vector<double>> prototypes;  // class id -> feature-space mean
  std::map<std::string, std::vector<double>> semantics;   // class id -> attribute vector
  std::vector<std::string> seen, unseen, aux_low, aux_middle, aux_high;
  LabeledSamples samples;

  std::vector<const std::vector<std::string>*> class_sets() const {
    return {&seen, &unseen, &aux_low, &aux_middle, &aux_high};
  }

  bool operator==(const SyntheticBenchmark&) const = default;
};

namespace gen_detail {

// Tree coordinates of a leaf: index per rank, Kingdom first in the path.
using Path = std::array<std::size_t, kRankCount>;

inline std::string node_key(const Path& p, Rank rank) {
  // Identifies the rank-`rank` ancestor: indices from Kingdom down to `rank`.
  std::string key = kRankNames[static_cast<std::size_t>(static_cast<int>(rank))];
  for (int r = kRankCount - 1; r >= static_cast<int>(rank); --r) {
    key += '.';
    key += std::to_string(p[static_cast<std::size_t>(r)]);
  }
  return key;
}

// Fixed attribute-to-feature mixer: a matrix with orthonormal columns (rows
// when attr_dim exceeds feature_dim) scaled so an isotropic attribute draw
// maps to a feature draw of the same expected squared norm.
class ModalityMixer {
 public:
  ModalityMixer(const GenConfig& cfg)
      : rows_(cfg.feature_dim), cols_(cfg.attr_dim), m_(cfg.feature_dim * cfg.attr_dim, 0.0) {
    Rng rng = Rng(cfg.seed).fork("mixer");
    for (double& v : m_) v = rng.normal();
    // Gram-Schmidt over the smaller side.
    if (cols_ <= rows_) {
      for (std::size_t c = 0; c < cols_; ++c) orthonormalize_column(c);
    } else {
      for (std::size_t r = 0; r < rows_; ++r) orthonormalize_row(r);
    }
    const double k = static_cast<double>(std::min(rows_, cols_));
    const double gain = std::sqrt(static_cast<double>(rows_) / k);
    for (double& v : m_) v *= gain;
  }

  // y = M * u, with E||y||^2 == feature_dim for u ~ N(0, I_attr_dim).
  std::vector<double> apply(const std::vector<double>& u) const {
    std::vector<double> y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols_; ++c) y[r] += m_[r * cols_ + c] * u[c];
    }
    return y;
  }

 private:
  void orthonormalize_column(std::size_t c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows_; ++r) dot += m_[r * cols_ + c] * m_[r * cols_ + prev];
      for (std::size_t r = 0; r < rows_; ++r) m_[r * cols_ + c] -= dot * m_[r * cols_ + prev];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) norm += m_[r * cols_ + c] * m_[r * cols_ + c];
    norm = std::sqrt(std::max(norm, 1e-300));
    for (std::size_t r = 0; r < rows_; ++r) m_[r * cols_ + c] /= norm;
  }

  void orthonormalize_row(std::size_t r) {
    for (std::size_t prev = 0; prev < r; ++prev) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) dot += m_[r * cols_ + c] * m_[prev * cols_ + c];
      for (std::size_t c = 0; c < cols_; ++c) m_[r * cols_ + c] -= dot * m_[prev * cols_ + c];
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) norm += m_[r * cols_ + c] * m_[r * cols_ + c];
    norm = std::sqrt(std::max(norm, 1e-300));
    for (std::size_t c = 0; c < cols_; ++c) m_[r * cols_ + c] /= norm;
  }

  std::size_t rows_, cols_;
  std::vector<double> m_;
};

// Ranks at and below Family are "fine": their drifts stay inside a kingdom's
// trait subspace, so classes of one kingdom differ along shared axes and an
// extractor trained on relatives exercises exactly those axes. Ranks above
// Family drift isotropically.
inline bool is_fine_rank(Rank r) { return static_cast<int>(r) <= static_cast<int>(Rank::Family); }

inline constexpr std::size_t kTraitAxes = 6;

// Orthonormal basis columns (dim x k) drawn from the given stream.
inline std::vector<double> orthonormal_basis(std::size_t dim, std::size_t k, Rng rng) {
  std::vector<double> b(dim * k);
  for (double& v : b) v = rng.normal();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < dim; ++r) dot += b[r * k + c] * b[r * k + prev];
      for (std::size_t r = 0; r < dim; ++r) b[r * k + c] -= dot * b[r * k + prev];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < dim; ++r) norm += b[r * k + c] * b[r * k + c];
    norm = std::sqrt(std::max(norm, 1e-300));
    for (std::size_t r = 0; r < dim; ++r) b[r * k + c] /= norm;
  }
  return b;
}

// Per-kingdom trait axes of one space. A unit-variance fine drift is
// sqrt(dim / k) * V * g with g ~ N(0, I_k), preserving the expected squared
// norm of an isotropic draw.
class TraitAxes {
 public:
  TraitAxes(std::uint64_t seed, std::string_view space, std::size_t kingdom, std::size_t dim)
      : dim_(dim), k_(std::min<std::size_t>(kTraitAxes, dim)) {
    basis_ = orthonormal_basis(dim_, k_,
                               Rng(seed).fork("axes/" + std::string(space) + "/k" + std::to_string(kingdom)));
  }

  std::vector<double> draw(Rng& rng) const {
    std::vector<double> g(k_);
    for (double& v : g) v = rng.normal();
    std::vector<double> out(dim_, 0.0);
    const double gain = std::sqrt(static_cast<double>(dim_) / static_cast<double>(k_));
    for (std::size_t r = 0; r < dim_; ++r) {
      for (std::size_t c = 0; c < k_; ++c) out[r] += gain * basis_[r * k_ + c] * g[c];
    }
    return out;
  }

 private:
  std::size_t dim_, k_;
  std::vector<double> basis_;
};

struct NodePosition {
  std::vector<double> attr;
  std::vector<double> proto;
};

struct DriftModel {
  const GenConfig* cfg;
  ModalityMixer mixer;
  std::vector<TraitAxes> attr_axes;  // one per kingdom
  std::vector<TraitAxes> feat_axes;

  explicit DriftModel(const GenConfig& c) : cfg(&c), mixer(c) {
    for (std::size_t k = 0; k < c.branching[static_cast<std::size_t>(static_cast<int>(Rank::Kingdom))]; ++k) {
      attr_axes.emplace_back(c.seed, "attr", k, c.attr_dim);
      feat_axes.emplace_back(c.seed, "feat", k, c.feature_dim);
    }
  }
};

// Position of the rank-`rank` ancestor of path p in both spaces: the sum of
// per-node drifts from the kingdom root down. A node's attribute drift is
// isotropic at coarse ranks and trait-axis-bound at fine ranks; its feature
// drift mixes the image of the attribute drift with an independent component,
// so kinship shapes both modalities and attributes stay predictive of
// features. Memoized per node key so shared ancestors agree.
inline const NodePosition& node_position(const DriftModel& model, const Path& p, Rank rank,
                                         std::map<std::string, NodePosition>& memo) {
  const std::string key = node_key(p, rank);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;

  const GenConfig& cfg = *model.cfg;
  NodePosition pos;
  pos.attr.assign(cfg.attr_dim, 0.0);
  pos.proto.assign(cfg.feature_dim, 0.0);
  if (static_cast<int>(rank) + 1 < kRankCount) {
    pos = node_position(model, p, static_cast<Rank>(static_cast<int>(rank) + 1), memo);
  }
  const double scale = cfg.diffusion_scales[static_cast<std::size_t>(static_cast<int>(rank))];
  const std::size_t kingdom = p[static_cast<std::size_t>(static_cast<int>(Rank::Kingdom))];

  std::vector<double> attr_drift(cfg.attr_dim);
  {
    Rng rng = Rng(cfg.seed).fork("attr/" + key);
    if (is_fine_rank(rank)) {
      attr_drift = model.attr_axes[kingdom].draw(rng);
    } else {
      for (double& v : attr_drift) v = rng.normal();
    }
  }
  const std::vector<double> mixed = model.mixer.apply(attr_drift);
  const double rho = cfg.modality_correlation;
  const double indep = std::sqrt(1.0 - rho * rho);
  {
    Rng rng = Rng(cfg.seed).fork("proto/" + key);
    std::vector<double> own(cfg.feature_dim);
    if (is_fine_rank(rank)) {
      own = model.feat_axes[kingdom].draw(rng);
    } else {
      for (double& v : own) v = rng.normal();
    }
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
      pos.proto[j] += scale * (rho * mixed[j] + indep * own[j]);
    }
  }
  for (std::size_t j = 0; j < cfg.attr_dim; ++j) pos.attr[j] += scale * attr_drift[j];
  return memo.emplace(key, std::move(pos)).first->second;
}

inline Lineage make_lineage(const Path& p, const std::string& taxon_id) {
  Lineage l;
  l.taxon_id = taxon_id;
  for (int r = 0; r < kRankCount; ++r) {
    l.names[static_cast<std::size_t>(r)] = node_key(p, static_cast<Rank>(r));
  }
  return l;
}

}  // namespace gen_detail

// Builds the benchmark: seen, unseen and the high-relevant pool share one
// taxonomic class; the middle pool comes from the same kingdom outside that
// class; the low pool from a different kingdom entirely.
inline SyntheticBenchmark generate(const GenConfig& cfg) {
  using gen_detail::Path;
  cfg.validate();

  const auto& br = cfg.branching;
  std::size_t leaves_per_class_node = 1;
  for (int r = 0; r < static_cast<int>(Rank::Class); ++r) leaves_per_class_node *= br[static_cast<std::size_t>(r)];
  const std::size_t class_nodes_per_kingdom = br[static_cast<std::size_t>(static_cast<int>(Rank::Phylum))] *
                                              br[static_cast<std::size_t>(static_cast<int>(Rank::Class))];

  const std::size_t need_home = cfg.seen_classes + cfg.unseen_classes + cfg.pool_classes;
  if (leaves_per_class_node < need_home) {
    throw CapacityError("home class node has " + std::to_string(leaves_per_class_node) + " leaves, need " +
                        std::to_string(need_home) + " for seen + unseen + high pool");
  }
  const std::size_t middle_capacity = (class_nodes_per_kingdom - 1) * leaves_per_class_node;
  if (middle_capacity < cfg.pool_classes) {
    throw CapacityError("kingdom 0 offers " + std::to_string(middle_capacity) +
                        " leaves outside the home class, need " + std::to_string(cfg.pool_classes) +
                        " for the middle pool");
  }
  if (br[static_cast<std::size_t>(static_cast<int>(Rank::Kingdom))] < 2) {
    throw CapacityError("low pool requires at least two kingdoms");
  }
  const std::size_t low_capacity = class_nodes_per_kingdom * leaves_per_class_node;
  if (low_capacity < cfg.pool_classes) {
    throw CapacityError("kingdom 1 offers " + std::to_string(low_capacity) + " leaves, need " +
                        std::to_string(cfg.pool_classes) + " for the low pool");
  }

  // Enumerate the leaf paths of one class node.
  const auto leaves_under_class = [&](std::size_t kingdom, std::size_t phylum, std::size_t cls) {
    std::vector<Path> out;
    for (std::size_t o = 0; o < br[static_cast<std::size_t>(static_cast<int>(Rank::Order))]; ++o)
      for (std::size_t f = 0; f < br[static_cast<std::size_t>(static_cast<int>(Rank::Family))]; ++f)
        for (std::size_t g = 0; g < br[static_cast<std::size_t>(static_cast<int>(Rank::Genus))]; ++g)
          for (std::size_t s = 0; s < br[static_cast<std::size_t>(static_cast<int>(Rank::Species))]; ++s) {
            Path p{};
            p[static_cast<std::size_t>(static_cast<int>(Rank::Kingdom))] = kingdom;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Phylum))] = phylum;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Class))] = cls;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Order))] = o;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Family))] = f;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Genus))] = g;
            p[static_cast<std::size_t>(static_cast<int>(Rank::Species))] = s;
            out.push_back(p);
          }
    return out;
  };

  Rng master(cfg.seed);

  // Home subtree: kingdom 0, phylum 0, class 0.
  std::vector<Path> home = leaves_under_class(0, 0, 0);
  master.fork("split/home").shuffle(home);

  std::vector<Path> middle_cands;
  for (std::size_t ph = 0; ph < br[static_cast<std::size_t>(static_cast<int>(Rank::Phylum))]; ++ph) {
    for (std::size_t c = 0; c < br[static_cast<std::size_t>(static_cast<int>(Rank::Class))]; ++c) {
      if (ph == 0 && c == 0) continue;
      for (const Path& p : leaves_under_class(0, ph, c)) middle_cands.push_back(p);
    }
  }
  master.fork("split/middle").shuffle(middle_cands);

  std::vector<Path> low_cands;
  for (std::size_t ph = 0; ph < br[static_cast<std::size_t>(static_cast<int>(Rank::Phylum))]; ++ph) {
    for (std::size_t c = 0; c < br[static_cast<std::size_t>(static_cast<int>(Rank::Class))]; ++c) {
      for (const Path& p : leaves_under_class(1, ph, c)) low_cands.push_back(p);
    }
  }
  master.fork("split/low").shuffle(low_cands);

  SyntheticBenchmark b;
  std::vector<std::pair<Path, std::string>> all_classes;  // in canonical order
  std::size_t next_id = 0;
  const auto take = [&](std::vector<Path>& from, std::size_t n, std::vector<std::string>& into) {
    for (std::size_t i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "t%04zu", next_id++);
      into.emplace_back(buf);
      all_classes.emplace_back(from[i], buf);
    }
    from.erase(from.begin(), from.begin() + static_cast<std::ptrdiff_t>(n));
  };

  take(home, cfg.seen_classes, b.seen);
  take(home, cfg.unseen_classes, b.unseen);
  take(home, cfg.pool_classes, b.aux_high);
  take(low_cands, cfg.pool_classes, b.aux_low);
  take(middle_cands, cfg.pool_classes, b.aux_middle);

  // Lineages, prototypes, attributes and samples for every materialized class.
  std::vector<Lineage> lineages;
  const gen_detail::DriftModel drift(cfg);
  std::map<std::string, gen_detail::NodePosition> memo;
  std::size_t total_samples = all_classes.size() * cfg.samples_per_class;
  b.samples.features = Tensor::zeros({total_samples, cfg.feature_dim});
  b.samples.class_ids.reserve(total_samples);
  std::size_t row = 0;
  for (const auto& [path, id] : all_classes) {
    lineages.push_back(gen_detail::make_lineage(path, id));
    const gen_detail::NodePosition& pos = gen_detail::node_position(drift, path, Rank::Species, memo);
    const std::vector<double>& proto = pos.proto;
    b.prototypes[id] = pos.proto;
    b.semantics[id] = pos.attr;
    Rng srng = master.fork("samples/" + id);
    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
      b.samples.class_ids.push_back(id);
      for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
        b.samples.features.values[row * cfg.feature_dim + j] = proto[j] + cfg.sample_noise * srng.normal();
      }
      ++row;
    }
  }
  b.taxonomy = Taxonomy::from_lineages(std::move(lineages));
  return b;
}

namespace gen_detail {

inline const std::array<const char*, 5> kManifestSections = {"seen", "unseen", "aux_low", "aux_middle", "aux_high"};

}  // namespace gen_detail

inline void save_manifest(const SyntheticBenchmark& b, std::ostream& out) {
  const auto sets = b.class_sets();
  for (std::size_t s = 0; s < sets.size(); ++s) {
    out << '[' << gen_detail::kManifestSections[s] << "]\n";
    for (const std::string& id : *sets[s]) out << id << '\n';
  }
}

inline void export_benchmark(const SyntheticBenchmark& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream ss;
    save_taxonomy(b.taxonomy, ss);
    write_file(dir / "taxonomy.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_samples(b.samples, ss);
    write_file(dir / "samples.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_class_vectors(b.semantics, ss);
    write_file(dir / "attributes.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_class_vectors(b.prototypes, ss);
    write_file(dir / "prototypes.tsv", ss.str());
  }
  {
    std::ostringstream ss;
    save_manifest(b, ss);
    write_file(dir / "manifest.txt", ss.str());
  }
}

inline SyntheticBenchmark import_benchmark(const std::filesystem::path& dir) {
  for (const char* name : {"taxonomy.tsv", "samples.tsv", "attributes.tsv", "prototypes.tsv", "manifest.txt"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw FormatError("benchmark: missing file " + (dir / name).string());
    }
  }
  SyntheticBenchmark b;
  try {
    b.taxonomy = load_taxonomy(read_file(dir / "taxonomy.tsv"));
  } catch (const ParseError& e) {
    throw FormatError("taxonomy.tsv: " + std::string(e.what()));
  }
  b.samples = load_samples(read_file(dir / "samples.tsv"), "samples.tsv");
  b.semantics = load_class_vectors(read_file(dir / "attributes.tsv"), "attributes.tsv");
  b.prototypes = load_class_vectors(read_file(dir / "prototypes.tsv"), "prototypes.tsv");

  const std::vector<std::string> lines = split_lines(read_file(dir / "manifest.txt"));
  std::vector<std::string>* current = nullptr;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      const std::string section = line.substr(1, line.size() - 2);
      current = nullptr;
      const auto sets = std::vector<std::vector<std::string>*>{&b.seen, &b.unseen, &b.aux_low, &b.aux_middle,
                                                               &b.aux_high};
      for (std::size_t s = 0; s < sets.size(); ++s) {
        if (section == gen_detail::kManifestSections[s]) current = sets[s];
      }
      if (!current) throw FormatError("manifest.txt line " + std::to_string(i + 1) + ": unknown section '" + section + "'");
      continue;
    }
    if (!current) throw FormatError("manifest.txt line " + std::to_string(i + 1) + ": class id before any section");
    current->push_back(line);
  }

  // Validation: the five sets are disjoint and fully backed by samples,
  // semantics, prototypes and taxonomy entries.
  std::unordered_set<std::string> seen_ids;
  std::unordered_set<std::string> sampled(b.samples.class_ids.begin(), b.samples.class_ids.end());
  for (const auto* set : b.class_sets()) {
    for (const std::string& id : *set) {
      if (!seen_ids.insert(id).second) {
        throw FormatError("manifest.txt: class '" + id + "' appears in more than one section");
      }
      if (!sampled.count(id)) throw CoverageError("benchmark: class '" + id + "' has no samples");
      if (!b.semantics.count(id)) throw CoverageError("benchmark: class '" + id + "' has no attribute vector");
      if (!b.prototypes.count(id)) throw CoverageError("benchmark: class '" + id + "' has no prototype");
      if (!b.taxonomy.contains(id)) throw CoverageError("benchmark: class '" + id + "' missing from taxonomy");
    }
  }
  for (const std::string& id : b.samples.class_ids) {
    if (!seen_ids.count(id)) {
      throw FormatError("benchmark: sample class '" + id + "' not listed in the manifest");
    }
  }
  return b;
}

}  // namespace biozsl
