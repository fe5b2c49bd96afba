#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "biozsl/dataset.hpp"
#include "biozsl/dual_channel.hpp"
#include "biozsl/errors.hpp"
#include "biozsl/graph.hpp"
#include "biozsl/params.hpp"
#include "biozsl/rng.hpp"

namespace biozsl {

// Cross-aligned variational embedding over two modalities: visual feature
// vectors and per-class attribute vectors are encoded into one latent space,
// where a plain classifier handles seen and unseen classes alike.
struct VaeConfig {
  std::size_t latent_width = 16;
  std::size_t hidden_width = 32;
  double beta = 0.5;    // KL weight
  double gamma = 1.0;   // cross-reconstruction weight
  double delta = 2.0;   // distribution-alignment weight
  double learning_rate = 0.05;
  std::size_t epochs = 150;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (latent_width == 0 || hidden_width == 0) throw ConfigError("vae: widths must be >= 1");
    if (beta < 0.0 || gamma < 0.0 || delta < 0.0) throw ConfigError("vae: loss weights must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("vae: learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("vae: batch_size must be >= 1");
  }
};

struct VaeParams {
  ParamSet visual_encoder, visual_decoder;
  ParamSet semantic_encoder, semantic_decoder;
  std::size_t visual_dim = 0;
  std::size_t semantic_dim = 0;
  std::size_t latent_width = 0;
  std::size_t hidden_width = 0;
};

namespace vae_detail {

inline void init_encoder(ParamSet& enc, std::size_t in, std::size_t hidden, std::size_t latent, const Rng& root,
                         const std::string& tag) {
  enc.add_uniform("W1", {hidden, in}, in, hidden, root.fork("init/" + tag + "/W1"));
  enc.add("b1", {hidden});
  enc.add_uniform("Wmu", {latent, hidden}, hidden, latent, root.fork("init/" + tag + "/Wmu"));
  enc.add("bmu", {latent});
  enc.add_uniform("Wlv", {latent, hidden}, hidden, latent, root.fork("init/" + tag + "/Wlv"));
  enc.add("blv", {latent});
}

inline void init_decoder(ParamSet& dec, std::size_t latent, std::size_t hidden, std::size_t out, const Rng& root,
                         const std::string& tag) {
  dec.add_uniform("W1", {hidden, latent}, latent, hidden, root.fork("init/" + tag + "/W1"));
  dec.add("b1", {hidden});
  dec.add_uniform("W2", {out, hidden}, hidden, out, root.fork("init/" + tag + "/W2"));
  dec.add("b2", {out});
}

}  // namespace vae_detail

inline VaeParams make_vae_params(std::size_t visual_dim, std::size_t semantic_dim, std::size_t latent_width,
                                 std::size_t hidden_width, std::uint64_t seed) {
  VaeParams p;
  p.visual_dim = visual_dim;
  p.semantic_dim = semantic_dim;
  p.latent_width = latent_width;
  p.hidden_width = hidden_width;
  const Rng root(seed);
  vae_detail::init_encoder(p.visual_encoder, visual_dim, hidden_width, latent_width, root, "venc");
  vae_detail::init_decoder(p.visual_decoder, latent_width, hidden_width, visual_dim, root, "vdec");
  vae_detail::init_encoder(p.semantic_encoder, semantic_dim, hidden_width, latent_width, root, "senc");
  vae_detail::init_decoder(p.semantic_decoder, latent_width, hidden_width, semantic_dim, root, "sdec");
  return p;
}

// Log-variances are squashed to (-kLogvarCap, kLogvarCap) so the variance
// exp(logvar) cannot run away during training.
inline constexpr double kLogvarCap = 8.0;

template <class Binder>
std::pair<Graph::NodeId, Graph::NodeId> encoder_forward(Graph& g, Binder&& bind, Graph::NodeId v) {
  const Graph::NodeId h = g.relu(g.affine(bind("W1"), bind("b1"), v));
  const Graph::NodeId mu = g.affine(bind("Wmu"), bind("bmu"), h);
  const Graph::NodeId raw = g.affine(bind("Wlv"), bind("blv"), h);
  const Graph::NodeId logvar = g.scale(g.tanh_elem(g.scale(raw, 1.0 / kLogvarCap)), kLogvarCap);
  return {mu, logvar};
}

template <class Binder>
Graph::NodeId decoder_forward(Graph& g, Binder&& bind, Graph::NodeId z) {
  const Graph::NodeId h = g.relu(g.affine(bind("W1"), bind("b1"), z));
  return g.affine(bind("W2"), bind("b2"), h);
}

// z = mu + exp(0.5 * logvar) * noise (reparameterization).
inline Graph::NodeId reparameterize(Graph& g, Graph::NodeId mu, Graph::NodeId logvar, Graph::NodeId noise) {
  return g.add(mu, g.mul(g.exp_elem(g.scale(logvar, 0.5)), noise));
}

struct LatentCode {
  Tensor mu;
  Tensor logvar;
  Tensor z;
};

// Pure forward encoding of a batch. `noise` is [batch x latent]; zero noise
// yields z = mu exactly.
inline LatentCode encode(const ParamSet& encoder, const Tensor& v, const Tensor& noise) {
  Graph g;
  const auto bind = [&](const char* n) { return g.constant(encoder.at(n).value); };
  const auto [mu, logvar] = encoder_forward(g, bind, g.constant(v));
  require_same_shape(g.value(mu), noise, "encode: noise");
  const Graph::NodeId z = reparameterize(g, mu, logvar, g.constant(noise));
  return LatentCode{g.value(mu), g.value(logvar), g.value(z)};
}

// One visual batch with the semantic vectors of the classes it contains.
// sem_row[i] is the row of `semantics` describing visual row i's class.
struct VaeBatch {
  Tensor visual;                    // [b x visual_dim]
  Tensor semantics;                 // [k x semantic_dim], one row per distinct class
  std::vector<std::size_t> sem_row; // size b, values in [0, k)
};

struct VaeLossRecord {
  double recon_visual = 0.0;
  double recon_semantic = 0.0;
  double kl = 0.0;
  double cross = 0.0;
  double align = 0.0;
  double total = 0.0;
};

struct VaeLossNodes {
  Graph::NodeId recon_v, recon_s, kl_v, kl_s, cross_v, cross_s, align, total;
};

// Builds the full loss
//   recon_v + recon_s + beta*KL + gamma*cross-recon + delta*align
// on the given graph, binding all four networks' parameters.
inline VaeLossNodes vae_loss_graph(Graph& g, VaeParams& p, const VaeBatch& batch, const VaeConfig& cfg,
                                   const Tensor& noise_v, const Tensor& noise_s) {
  if (batch.visual.rank() != 2 || batch.visual.shape[1] != p.visual_dim) {
    throw ShapeError("vae: visual batch " + shape_str(batch.visual) + " does not match visual width " +
                     std::to_string(p.visual_dim));
  }
  if (batch.semantics.rank() != 2 || batch.semantics.shape[1] != p.semantic_dim) {
    throw ShapeError("vae: semantic batch " + shape_str(batch.semantics) + " does not match semantic width " +
                     std::to_string(p.semantic_dim));
  }
  if (batch.sem_row.size() != batch.visual.shape[0]) {
    throw ShapeError("vae: sem_row must map every visual row to a semantic row");
  }
  const std::size_t n_classes = batch.semantics.shape[0];

  const auto bind = [&g](ParamSet& set) {
    return [&g, &set](const char* n) { return g.param(set.at(n)); };
  };
  const Graph::NodeId x = g.constant(batch.visual);
  const Graph::NodeId s = g.constant(batch.semantics);

  const auto [mu_v, lv_v] = encoder_forward(g, bind(p.visual_encoder), x);
  const auto [mu_s, lv_s] = encoder_forward(g, bind(p.semantic_encoder), s);
  const Graph::NodeId z_v = reparameterize(g, mu_v, lv_v, g.constant(noise_v));
  const Graph::NodeId z_s = reparameterize(g, mu_s, lv_s, g.constant(noise_s));

  // Every term is normalized per dimension so the 64-wide visual modality
  // does not drown the narrow semantic one.
  const double vd = static_cast<double>(p.visual_dim);
  const double sd = static_cast<double>(p.semantic_dim);
  const double ld = static_cast<double>(p.latent_width);

  VaeLossNodes n{};
  n.recon_v = g.scale(g.mean_row_sq_dist(decoder_forward(g, bind(p.visual_decoder), z_v), x), 1.0 / vd);
  n.recon_s = g.scale(g.mean_row_sq_dist(decoder_forward(g, bind(p.semantic_decoder), z_s), s), 1.0 / sd);

  n.kl_v = g.scale(g.kl_std_normal(mu_v, lv_v), 1.0 / ld);
  n.kl_s = g.scale(g.kl_std_normal(mu_s, lv_s), 1.0 / ld);

  // Cross-reconstruction: each modality decoded from the other's latent.
  n.cross_v = g.scale(
      g.mean_row_sq_dist(decoder_forward(g, bind(p.visual_decoder), g.gather_rows(z_s, batch.sem_row)), x),
      1.0 / vd);
  n.cross_s = g.scale(
      g.mean_row_sq_dist(decoder_forward(g, bind(p.semantic_decoder), z_v), g.gather_rows(s, batch.sem_row)),
      1.0 / sd);

  // Distribution alignment: per-class visual latent moments against the
  // semantic encoder's, squared distance of means plus of std vectors.
  const Graph::NodeId mu_v_bar = g.group_mean(mu_v, batch.sem_row, n_classes);
  const Graph::NodeId sd_v_bar = g.group_mean(g.exp_elem(g.scale(lv_v, 0.5)), batch.sem_row, n_classes);
  const Graph::NodeId sd_s = g.exp_elem(g.scale(lv_s, 0.5));
  n.align = g.weighted_sum(
      {{g.mean_row_sq_dist(mu_v_bar, mu_s), 1.0 / ld}, {g.mean_row_sq_dist(sd_v_bar, sd_s), 1.0 / ld}});

  n.total = g.weighted_sum({{n.recon_v, 1.0},
                            {n.recon_s, 1.0},
                            {n.kl_v, cfg.beta},
                            {n.kl_s, cfg.beta},
                            {n.cross_v, cfg.gamma},
                            {n.cross_s, cfg.gamma},
                            {n.align, cfg.delta}});
  return n;
}

// Backpropagates the full loss into all four networks, leaving gradients
// populated.
inline VaeLossRecord vae_backward(VaeParams& p, const VaeBatch& batch, const VaeConfig& cfg, const Tensor& noise_v,
                                  const Tensor& noise_s) {
  Graph g;
  const VaeLossNodes n = vae_loss_graph(g, p, batch, cfg, noise_v, noise_s);
  g.backward(n.total);

  VaeLossRecord rec;
  rec.recon_visual = g.value(n.recon_v).item();
  rec.recon_semantic = g.value(n.recon_s).item();
  rec.kl = g.value(n.kl_v).item() + g.value(n.kl_s).item();
  rec.cross = g.value(n.cross_v).item() + g.value(n.cross_s).item();
  rec.align = g.value(n.align).item();
  rec.total = g.value(n.total).item();
  return rec;
}

// One SGD step on all four networks.
inline VaeLossRecord vae_train_step(VaeParams& p, const VaeBatch& batch, const VaeConfig& cfg, Rng& noise_rng) {
  Tensor noise_v = Tensor::zeros({batch.visual.shape[0], p.latent_width});
  for (double& v : noise_v.values) v = noise_rng.normal();
  Tensor noise_s = Tensor::zeros({batch.semantics.shape[0], p.latent_width});
  for (double& v : noise_s.values) v = noise_rng.normal();
  const VaeLossRecord rec = vae_backward(p, batch, cfg, noise_v, noise_s);
  sgd_step({&p.visual_encoder, &p.visual_decoder, &p.semantic_encoder, &p.semantic_decoder}, cfg.learning_rate);
  return rec;
}

// Trains the VAE over feature rows labeled with dense class indices into
// `class_semantics` (one row per class).
inline std::vector<VaeLossRecord> train_vae(VaeParams& p, const Tensor& features, const std::vector<int>& class_idx,
                                            const Tensor& class_semantics, const VaeConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || features.shape[0] != class_idx.size()) {
    throw ShapeError("train_vae: one class index per feature row required");
  }
  for (int c : class_idx) {
    if (c < 0 || static_cast<std::size_t>(c) >= class_semantics.shape[0]) {
      throw CoverageError("train_vae: class index " + std::to_string(c) + " has no semantic vector");
    }
  }
  Rng shuffle_rng = Rng(cfg.seed).fork("vae/shuffle");
  Rng noise_rng = Rng(cfg.seed).fork("vae/noise");
  const std::size_t n = features.shape[0];
  const std::size_t dim = features.shape[1];
  const std::size_t sem_dim = class_semantics.shape[1];
  std::vector<VaeLossRecord> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffle_rng.permutation(n);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      VaeBatch batch;
      batch.visual = Tensor::zeros({end - begin, dim});
      // Distinct classes of the batch, ascending, each contributing one
      // semantic row.
      std::vector<int> present;
      for (std::size_t k = begin; k < end; ++k) present.push_back(class_idx[perm[k]]);
      std::sort(present.begin(), present.end());
      present.erase(std::unique(present.begin(), present.end()), present.end());
      std::map<int, std::size_t> sem_pos;
      for (std::size_t i = 0; i < present.size(); ++i) sem_pos[present[i]] = i;
      batch.semantics = Tensor::zeros({present.size(), sem_dim});
      for (std::size_t i = 0; i < present.size(); ++i) {
        const auto c = static_cast<std::size_t>(present[i]);
        for (std::size_t j = 0; j < sem_dim; ++j) {
          batch.semantics.values[i * sem_dim + j] = class_semantics.values[c * sem_dim + j];
        }
      }
      batch.sem_row.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t row = perm[k];
        for (std::size_t j = 0; j < dim; ++j) {
          batch.visual.values[(k - begin) * dim + j] = features.values[row * dim + j];
        }
        batch.sem_row.push_back(sem_pos[class_idx[row]]);
      }
      history.push_back(vae_train_step(p, batch, cfg, noise_rng));
    }
  }
  return history;
}

// Labeled latent codes used to train the final classifier.
struct LatentDataset {
  Tensor z;                           // [n x latent]
  std::vector<std::string> class_ids; // one per row
};

// Seen-class latents come from the visual encoder over real features (one
// sampled draw per feature); unseen-class latents from the semantic encoder
// over each class attribute vector, draws_per_item draws per class.
inline LatentDataset build_latent_trainset(const VaeParams& p, const Tensor& seen_features,
                                           const std::vector<std::string>& seen_ids,
                                           const std::vector<std::pair<std::string, std::vector<double>>>& unseen,
                                           std::size_t draws_per_item, std::uint64_t seed) {
  if (draws_per_item == 0) throw PreconditionError("build_latent_trainset: draws_per_item must be >= 1");
  if (seen_features.rank() != 2 || seen_features.shape[0] != seen_ids.size()) {
    throw ShapeError("build_latent_trainset: one id per seen feature row required");
  }
  const std::size_t n_seen = seen_features.shape[0];
  const std::size_t latent = p.latent_width;
  LatentDataset out;
  out.z = Tensor::zeros({n_seen + unseen.size() * draws_per_item, latent});

  Rng rng = Rng(seed).fork("latents");
  {
    Tensor noise = Tensor::zeros({n_seen, latent});
    for (double& v : noise.values) v = rng.normal();
    const LatentCode code = encode(p.visual_encoder, seen_features, noise);
    std::copy(code.z.values.begin(), code.z.values.end(), out.z.values.begin());
    out.class_ids.insert(out.class_ids.end(), seen_ids.begin(), seen_ids.end());
  }
  std::size_t row = n_seen;
  for (const auto& [id, attr] : unseen) {
    if (attr.size() != p.semantic_dim) {
      throw ShapeError("build_latent_trainset: attribute width " + std::to_string(attr.size()) +
                       " does not match semantic width " + std::to_string(p.semantic_dim));
    }
    Tensor tiled = Tensor::zeros({draws_per_item, p.semantic_dim});
    for (std::size_t k = 0; k < draws_per_item; ++k) {
      std::copy(attr.begin(), attr.end(), tiled.values.begin() + static_cast<std::ptrdiff_t>(k * p.semantic_dim));
    }
    Tensor noise = Tensor::zeros({draws_per_item, latent});
    for (double& v : noise.values) v = rng.normal();
    const LatentCode code = encode(p.semantic_encoder, tiled, noise);
    for (std::size_t k = 0; k < draws_per_item; ++k) {
      std::copy_n(&code.z.values[k * latent], latent, &out.z.values[row * latent]);
      out.class_ids.push_back(id);
      ++row;
    }
  }
  return out;
}

struct ClassifierConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 150;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("classifier: learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("classifier: batch_size must be >= 1");
  }
};

// Single affine layer over the latent space. `classes` is sorted ascending,
// so argmax ties resolve toward the lowest class id.
struct LatentClassifier {
  ParamSet net;  // W,b
  std::vector<std::string> classes;
};

inline LatentClassifier train_latent_classifier(const LatentDataset& latents, const ClassifierConfig& cfg,
                                                const std::vector<std::string>& expected_classes = {}) {
  cfg.validate();
  if (latents.class_ids.empty()) throw PreconditionError("train_latent_classifier: empty latent dataset");

  std::vector<std::string> classes = latents.class_ids;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (const std::string& c : expected_classes) {
    if (!std::binary_search(classes.begin(), classes.end(), c)) {
      throw CoverageError("train_latent_classifier: class '" + c + "' has no latents");
    }
  }

  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < classes.size(); ++i) label_of[classes[i]] = static_cast<int>(i);

  Dataset d;
  d.classes = classes;
  d.x = latents.z;
  d.y.reserve(latents.class_ids.size());
  for (const std::string& id : latents.class_ids) d.y.push_back(label_of[id]);

  const std::size_t latent = latents.z.shape[1];
  LatentClassifier clf;
  clf.classes = std::move(classes);
  clf.net.add_uniform("W", {clf.classes.size(), latent}, latent, clf.classes.size(),
                      Rng(cfg.seed).fork("init/latent_clf/W"));
  clf.net.add("b", {clf.classes.size()});

  Rng shuffle_rng = Rng(cfg.seed).fork("clf/shuffle");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffle_rng.permutation(d.size());
    for (std::size_t begin = 0; begin < d.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(d.size(), begin + cfg.batch_size);
      const Batch b = detail::take_batch(d, perm, begin, end);
      Graph g;
      const auto logits =
          g.affine(g.param(clf.net.at("W")), g.param(clf.net.at("b")), g.constant(b.x));
      g.backward(g.softmax_cross_entropy(logits, b.y));
      sgd_step(clf.net, cfg.learning_rate);
    }
  }
  return clf;
}

// Encodes test features at zero noise (z = mu) and applies the classifier.
// Ties break toward the lowest class id.
inline std::vector<std::string> predict(const VaeParams& p, const LatentClassifier& clf, const Tensor& features) {
  if (features.rank() != 2 || features.shape[1] != p.visual_dim) {
    throw ShapeError("predict: features " + shape_str(features) + " do not match visual width " +
                     std::to_string(p.visual_dim));
  }
  const Tensor zero_noise = Tensor::zeros({features.shape[0], p.latent_width});
  const LatentCode code = encode(p.visual_encoder, features, zero_noise);
  Graph g;
  const auto logits = g.affine(g.constant(clf.net.at("W").value), g.constant(clf.net.at("b").value),
                               g.constant(code.mu));
  const Tensor& lv = g.value(logits);
  const std::size_t n_classes = clf.classes.size();
  std::vector<std::string> out;
  out.reserve(features.shape[0]);
  for (std::size_t r = 0; r < features.shape[0]; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (lv.values[r * n_classes + c] > lv.values[r * n_classes + best]) best = c;
    }
    out.push_back(clf.classes[best]);
  }
  return out;
}

}  // namespace biozsl
