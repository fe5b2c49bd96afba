#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "biozsl/grad_check.hpp"
#include "biozsl/rng.hpp"
#include "biozsl/vae.hpp"

using namespace biozsl;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values) v = scale * rng.normal();
  return t;
}

VaeBatch random_vae_batch(Rng& rng, std::size_t batch, std::size_t classes, std::size_t vdim, std::size_t sdim) {
  VaeBatch b;
  b.visual = random_tensor(rng, {batch, vdim});
  b.semantics = random_tensor(rng, {classes, sdim});
  for (std::size_t i = 0; i < batch; ++i) b.sem_row.push_back(i % classes);
  // Every class must appear at least once.
  for (std::size_t c = 0; c < classes && c < batch; ++c) b.sem_row[c] = c;
  return b;
}

// Alignment metric recomputed outside the graph: per-class distance between
// the visual latent moments and the semantic encoder's.
double align_metric(const VaeParams& p, const Tensor& feats, const std::vector<int>& class_idx,
                    const Tensor& sems) {
  const std::size_t n = feats.shape[0];
  const std::size_t latent = p.latent_width;
  const Tensor zero_v = Tensor::zeros({n, latent});
  const LatentCode visual = encode(p.visual_encoder, feats, zero_v);
  const Tensor zero_s = Tensor::zeros({sems.shape[0], latent});
  const LatentCode semantic = encode(p.semantic_encoder, sems, zero_s);

  const std::size_t k = sems.shape[0];
  std::vector<std::vector<double>> mu_bar(k, std::vector<double>(latent, 0.0));
  std::vector<std::vector<double>> sd_bar(k, std::vector<double>(latent, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto c = static_cast<std::size_t>(class_idx[r]);
    ++counts[c];
    for (std::size_t j = 0; j < latent; ++j) {
      mu_bar[c][j] += visual.mu.at(r, j);
      sd_bar[c][j] += std::exp(0.5 * visual.logvar.at(r, j));
    }
  }
  double acc = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < latent; ++j) {
      const double dm = mu_bar[c][j] / static_cast<double>(counts[c]) - semantic.mu.at(c, j);
      const double ds =
          sd_bar[c][j] / static_cast<double>(counts[c]) - std::exp(0.5 * semantic.logvar.at(c, j));
      acc += dm * dm + ds * ds;
    }
  }
  return acc / static_cast<double>(k);
}

}  // namespace

TEST_CASE("encode at zero noise returns the mean exactly", "[vae]") {
  const VaeParams p = make_vae_params(5, 3, 4, 6, 1);
  Rng rng(1);
  const Tensor v = random_tensor(rng, {3, 5});
  const LatentCode code = encode(p.visual_encoder, v, Tensor::zeros({3, 4}));
  REQUIRE(code.z == code.mu);
}

TEST_CASE("encode with unit variance shifts the mean by the noise", "[vae]") {
  VaeParams p = make_vae_params(5, 3, 4, 6, 2);
  // Zero the logvar head so exp(0.5 * logvar) == 1.
  for (const char* n : {"Wlv", "blv"}) {
    Parameter& q = p.visual_encoder.at(n);
    q.value.values.assign(q.value.values.size(), 0.0);
  }
  Rng rng(2);
  const Tensor v = random_tensor(rng, {2, 5});
  const Tensor noise = random_tensor(rng, {2, 4});
  const LatentCode code = encode(p.visual_encoder, v, noise);
  for (std::size_t i = 0; i < code.z.values.size(); ++i) {
    REQUIRE_THAT(code.z.values[i], Catch::Matchers::WithinAbs(code.mu.values[i] + noise.values[i], 1e-15));
  }
}

TEST_CASE("gradients through the reparameterized sample match finite differences", "[vae][oracle]") {
  VaeParams p = make_vae_params(4, 3, 3, 4, 3);
  Rng rng(3);
  const Tensor v = random_tensor(rng, {2, 4});
  const Tensor noise = random_tensor(rng, {2, 3});
  const Tensor target = random_tensor(rng, {2, 3});
  const auto build = [&](Graph& g) {
    const auto bind = [&](const char* n) { return g.param(p.visual_encoder.at(n)); };
    const auto [mu, lv] = encoder_forward(g, bind, g.constant(v));
    const auto z = reparameterize(g, mu, lv, g.constant(noise));
    return g.mean_row_sq_dist(z, g.constant(target));
  };
  REQUIRE(grad_check(build, p.visual_encoder.all(), 1e-5) < 1e-4);
}

TEST_CASE("KL of a standard normal against itself is zero", "[vae]") {
  Graph g;
  const auto kl = g.kl_std_normal(g.constant(Tensor::zeros({3, 4})), g.constant(Tensor::zeros({3, 4})));
  REQUIRE(g.value(kl).item() == 0.0);
}

TEST_CASE("KL term is nonnegative", "[vae][property]") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    const auto kl = g.kl_std_normal(g.constant(random_tensor(rng, {3, 5}, 2.0)),
                                    g.constant(random_tensor(rng, {3, 5}, 1.5)));
    REQUIRE(g.value(kl).item() >= 0.0);
  }
}

TEST_CASE("align term vanishes when both encoders emit identical moments", "[vae]") {
  VaeParams p = make_vae_params(4, 4, 3, 5, 5);
  // Zero every encoder weight so mu and logvar equal the biases, then share
  // the biases across the two encoders.
  Rng rng(5);
  for (ParamSet* enc : {&p.visual_encoder, &p.semantic_encoder}) {
    for (const char* n : {"W1", "Wmu", "Wlv"}) {
      Parameter& q = enc->at(n);
      q.value.values.assign(q.value.values.size(), 0.0);
    }
  }
  const Tensor bmu = random_tensor(rng, {3});
  const Tensor blv = random_tensor(rng, {3}, 0.3);
  for (ParamSet* enc : {&p.visual_encoder, &p.semantic_encoder}) {
    enc->at("bmu").value = bmu;
    enc->at("blv").value = blv;
  }
  VaeBatch batch = random_vae_batch(rng, 4, 2, 4, 4);
  VaeConfig cfg;
  const VaeLossRecord rec = vae_backward(p, batch, cfg, Tensor::zeros({4, 3}), Tensor::zeros({2, 3}));
  REQUIRE(rec.align == 0.0);
}

TEST_CASE("the full VAE loss matches finite differences on a tiny model", "[vae][oracle]") {
  VaeParams p = make_vae_params(4, 3, 2, 3, 7);
  Rng rng(6);
  const VaeBatch batch = random_vae_batch(rng, 3, 2, 4, 3);
  const Tensor noise_v = random_tensor(rng, {3, 2});
  const Tensor noise_s = random_tensor(rng, {2, 2});
  VaeConfig cfg;
  cfg.beta = 0.5;
  cfg.gamma = 1.0;
  cfg.delta = 1.0;
  const auto build = [&](Graph& g) { return vae_loss_graph(g, p, batch, cfg, noise_v, noise_s).total; };
  std::vector<Parameter*> params;
  for (ParamSet* set : {&p.visual_encoder, &p.visual_decoder, &p.semantic_encoder, &p.semantic_decoder}) {
    for (Parameter* q : set->all()) params.push_back(q);
  }
  REQUIRE(grad_check(build, params, 1e-5) < 1e-4);
}

TEST_CASE("with gamma and delta at zero the two autoencoders are independent", "[vae][property]") {
  Rng rng(7);
  VaeConfig cfg;
  cfg.gamma = 0.0;
  cfg.delta = 0.0;

  VaeParams p1 = make_vae_params(4, 3, 2, 3, 11);
  VaeParams p2 = make_vae_params(4, 3, 2, 3, 11);

  VaeBatch batch1 = random_vae_batch(rng, 3, 2, 4, 3);
  VaeBatch batch2 = batch1;
  batch2.visual = random_tensor(rng, {3, 4});  // different visual inputs, same semantics

  const Tensor noise_v = random_tensor(rng, {3, 2});
  const Tensor noise_s = random_tensor(rng, {2, 2});
  vae_backward(p1, batch1, cfg, noise_v, noise_s);
  vae_backward(p2, batch2, cfg, noise_v, noise_s);

  for (const char* n : {"W1", "b1", "Wmu", "bmu", "Wlv", "blv"}) {
    REQUIRE(p1.semantic_encoder.at(n).grad == p2.semantic_encoder.at(n).grad);
  }
  for (const char* n : {"W1", "b1", "W2", "b2"}) {
    REQUIRE(p1.semantic_decoder.at(n).grad == p2.semantic_decoder.at(n).grad);
  }
  // The visual side does depend on its own batch.
  REQUIRE_FALSE(p1.visual_encoder.at("W1").grad == p2.visual_encoder.at("W1").grad);
}

TEST_CASE("vae training drives the alignment distance down", "[vae][oracle]") {
  // 5-seed median of (align after) vs (align before) on a small synthetic
  // two-modality task.
  std::vector<double> before, after;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(900 + seed);
    const std::size_t classes = 4, per_class = 12, vdim = 6, sdim = 4;
    Tensor feats = Tensor::zeros({classes * per_class, vdim});
    std::vector<int> class_idx;
    Tensor sems = random_tensor(rng, {classes, sdim}, 1.5);
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const Tensor proto = random_tensor(rng, {vdim}, 2.0);
      for (std::size_t k = 0; k < per_class; ++k) {
        for (std::size_t j = 0; j < vdim; ++j) feats.values[row * vdim + j] = proto.values[j] + 0.3 * rng.normal();
        class_idx.push_back(static_cast<int>(c));
        ++row;
      }
    }
    VaeParams p = make_vae_params(vdim, sdim, 3, 8, seed);
    VaeConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.01;
    cfg.seed = seed;
    before.push_back(align_metric(p, feats, class_idx, sems));
    train_vae(p, feats, class_idx, sems, cfg);
    after.push_back(align_metric(p, feats, class_idx, sems));
  }
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  REQUIRE(after[2] < before[2]);
}

TEST_CASE("build_latent_trainset counts and widths", "[vae]") {
  const VaeParams p = make_vae_params(5, 3, 4, 6, 13);
  Rng rng(8);
  const Tensor feats = random_tensor(rng, {7, 5});
  const std::vector<std::string> ids = {"a", "a", "b", "b", "b", "c", "c"};
  const std::vector<std::pair<std::string, std::vector<double>>> unseen = {
      {"u1", {0.1, 0.2, 0.3}}, {"u2", {1.0, -1.0, 0.5}}};

  const LatentDataset one = build_latent_trainset(p, feats, ids, unseen, 1, 99);
  REQUIRE(one.z.shape == std::vector<std::size_t>{7 + 2, 4});
  REQUIRE(one.class_ids.size() == 9);

  const LatentDataset many = build_latent_trainset(p, feats, ids, unseen, 5, 99);
  REQUIRE(many.z.shape == std::vector<std::size_t>{7 + 10, 4});
  REQUIRE(std::count(many.class_ids.begin(), many.class_ids.end(), "u1") == 5);
}

TEST_CASE("build_latent_trainset is deterministic and its class means recompute", "[vae][oracle]") {
  const VaeParams p = make_vae_params(5, 3, 4, 6, 17);
  Rng rng(9);
  const Tensor feats = random_tensor(rng, {8, 5});
  const std::vector<std::string> ids = {"a", "b", "a", "b", "a", "b", "a", "b"};
  const std::vector<std::pair<std::string, std::vector<double>>> unseen = {{"u", {0.4, 0.1, -0.2}}};

  const LatentDataset d1 = build_latent_trainset(p, feats, ids, unseen, 3, 1234);
  const LatentDataset d2 = build_latent_trainset(p, feats, ids, unseen, 3, 1234);
  REQUIRE(d1.z == d2.z);
  REQUIRE(d1.class_ids == d2.class_ids);

  // Independent route: reproduce the seen-side draws and average per class
  // with separate accumulation code.
  Rng noise_rng = Rng(1234).fork("latents");
  Tensor noise = Tensor::zeros({8, 4});
  for (double& v : noise.values) v = noise_rng.normal();
  const LatentCode code = encode(p.visual_encoder, feats, noise);
  for (const std::string& cls : {"a", "b"}) {
    std::vector<double> direct(4, 0.0), from_op(4, 0.0);
    std::size_t count = 0;
    for (std::size_t r = 0; r < 8; ++r) {
      if (ids[r] != cls) continue;
      ++count;
      for (std::size_t j = 0; j < 4; ++j) direct[j] += code.z.at(r, j);
    }
    std::size_t op_count = 0;
    for (std::size_t r = 0; r < d1.class_ids.size(); ++r) {
      if (d1.class_ids[r] != cls) continue;
      ++op_count;
      for (std::size_t j = 0; j < 4; ++j) from_op[j] += d1.z.at(r, j);
    }
    REQUIRE(count == op_count);
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE_THAT(direct[j] / count, Catch::Matchers::WithinAbs(from_op[j] / op_count, 1e-12));
    }
  }
}

TEST_CASE("build_latent_trainset validates attribute widths", "[vae]") {
  const VaeParams p = make_vae_params(5, 3, 4, 6, 19);
  Rng rng(10);
  const Tensor feats = random_tensor(rng, {2, 5});
  REQUIRE_THROWS_AS(build_latent_trainset(p, feats, {"a", "b"}, {{"u", {1.0, 2.0}}}, 1, 7), ShapeError);
}

TEST_CASE("latent classifier separates well-separated clusters", "[vae]") {
  Rng rng(11);
  LatentDataset latents;
  latents.z = Tensor::zeros({40, 3});
  for (std::size_t i = 0; i < 40; ++i) {
    const bool pos = i >= 20;
    latents.class_ids.push_back(pos ? "p" : "n");
    for (std::size_t j = 0; j < 3; ++j) latents.z.values[i * 3 + j] = (pos ? 4.0 : -4.0) + 0.3 * rng.normal();
  }
  ClassifierConfig cfg;
  cfg.epochs = 60;
  const LatentClassifier clf = train_latent_classifier(latents, cfg);
  REQUIRE(clf.classes == std::vector<std::string>{"n", "p"});

  std::size_t correct = 0;
  const Tensor& w = clf.net.at("W").value;
  const Tensor& b = clf.net.at("b").value;
  for (std::size_t i = 0; i < 40; ++i) {
    double best = -1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = b.values[c];
      for (std::size_t j = 0; j < 3; ++j) acc += w.at(c, j) * latents.z.at(i, j);
      if (acc > best) {
        best = acc;
        arg = c;
      }
    }
    if (clf.classes[arg] == latents.class_ids[i]) ++correct;
  }
  REQUIRE(correct == 40);
}

TEST_CASE("latent classifier training reduces the cross entropy and is deterministic", "[vae]") {
  Rng rng(12);
  LatentDataset latents;
  const std::size_t n = 30, latent = 4;
  latents.z = random_tensor(rng, {n, latent});
  for (std::size_t i = 0; i < n; ++i) latents.class_ids.push_back(i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "c"));
  for (std::size_t i = 0; i < n; ++i) {
    latents.z.values[i * latent] += (i % 3) * 2.5;  // make classes learnable
  }
  ClassifierConfig cfg;
  cfg.epochs = 30;
  const LatentClassifier clf1 = train_latent_classifier(latents, cfg);
  const LatentClassifier clf2 = train_latent_classifier(latents, cfg);
  REQUIRE(clf1.net.at("W").value == clf2.net.at("W").value);

  std::vector<int> labels;
  for (const std::string& id : latents.class_ids) labels.push_back(id == "a" ? 0 : (id == "b" ? 1 : 2));
  const auto ce_with = [&](const ParamSet& net) {
    Graph g;
    const auto logits = g.affine(g.constant(net.at("W").value), g.constant(net.at("b").value),
                                 g.constant(latents.z));
    return g.value(g.softmax_cross_entropy(logits, labels)).item();
  };
  LatentClassifier fresh;
  fresh.net.add_uniform("W", {3, latent}, latent, 3, Rng(cfg.seed).fork("init/latent_clf/W"));
  fresh.net.add("b", {3});
  REQUIRE(ce_with(clf1.net) < ce_with(fresh.net));
}

TEST_CASE("latent classifier reports classes without latents", "[vae]") {
  LatentDataset latents;
  latents.z = Tensor::zeros({2, 2});
  latents.class_ids = {"a", "a"};
  REQUIRE_THROWS_AS(train_latent_classifier(latents, ClassifierConfig{}, {"a", "missing"}), CoverageError);
}

TEST_CASE("predict maps a centroid feature to its class", "[vae]") {
  // Collapse the visual encoder so every feature lands on one latent point,
  // then check the classifier decides that point's class.
  VaeParams p = make_vae_params(4, 3, 2, 4, 23);
  for (const char* n : {"W1", "Wmu", "Wlv"}) {
    Parameter& q = p.visual_encoder.at(n);
    q.value.values.assign(q.value.values.size(), 0.0);
  }
  p.visual_encoder.at("bmu").value.values = {3.0, -2.0};

  Rng rng(13);
  LatentDataset latents;
  latents.z = Tensor::zeros({20, 2});
  for (std::size_t i = 0; i < 20; ++i) {
    const bool target = i < 10;
    latents.class_ids.push_back(target ? "target" : "other");
    latents.z.values[i * 2] = (target ? 3.0 : -3.0) + 0.1 * rng.normal();
    latents.z.values[i * 2 + 1] = (target ? -2.0 : 2.0) + 0.1 * rng.normal();
  }
  ClassifierConfig cfg;
  cfg.epochs = 80;
  const LatentClassifier clf = train_latent_classifier(latents, cfg);
  const std::vector<std::string> preds = predict(p, clf, random_tensor(rng, {5, 4}));
  for (const std::string& pr : preds) REQUIRE(pr == "target");
}

TEST_CASE("predict is deterministic, order-invariant, and matches a re-implementation", "[vae][oracle]") {
  const VaeParams p = make_vae_params(5, 3, 4, 6, 29);
  Rng rng(14);
  LatentDataset latents;
  latents.z = random_tensor(rng, {12, 4});
  for (std::size_t i = 0; i < 12; ++i) latents.class_ids.push_back("c" + std::to_string(i % 4));
  const LatentClassifier clf = train_latent_classifier(latents, ClassifierConfig{});

  const Tensor feats = random_tensor(rng, {6, 5});
  const std::vector<std::string> preds = predict(p, clf, feats);
  REQUIRE(predict(p, clf, feats) == preds);

  // Row permutation permutes predictions.
  Tensor reversed = feats;
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 5; ++j) reversed.values[r * 5 + j] = feats.values[(5 - r) * 5 + j];
  }
  const std::vector<std::string> rev_preds = predict(p, clf, reversed);
  for (std::size_t r = 0; r < 6; ++r) REQUIRE(rev_preds[r] == preds[5 - r]);

  // Independent encode-then-argmax pipeline.
  const LatentCode code = encode(p.visual_encoder, feats, Tensor::zeros({6, 4}));
  const Tensor& w = clf.net.at("W").value;
  const Tensor& b = clf.net.at("b").value;
  for (std::size_t r = 0; r < 6; ++r) {
    std::size_t arg = 0;
    double best = -1e300;
    for (std::size_t c = 0; c < clf.classes.size(); ++c) {
      double acc = b.values[c];
      for (std::size_t j = 0; j < 4; ++j) acc += w.at(c, j) * code.mu.at(r, j);
      if (acc > best) {
        best = acc;
        arg = c;
      }
    }
    REQUIRE(preds[r] == clf.classes[arg]);
  }
}

TEST_CASE("per-term VAE losses stay finite during training", "[vae][property]") {
  Rng rng(15);
  const std::size_t classes = 3, per_class = 8, vdim = 5, sdim = 3;
  Tensor feats = random_tensor(rng, {classes * per_class, vdim}, 2.0);
  std::vector<int> class_idx;
  for (std::size_t i = 0; i < classes * per_class; ++i) class_idx.push_back(static_cast<int>(i % classes));
  const Tensor sems = random_tensor(rng, {classes, sdim});
  VaeParams p = make_vae_params(vdim, sdim, 3, 6, 31);
  VaeConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  for (const VaeLossRecord& rec : train_vae(p, feats, class_idx, sems, cfg)) {
    for (double v : {rec.recon_visual, rec.recon_semantic, rec.kl, rec.cross, rec.align, rec.total}) {
      REQUIRE(std::isfinite(v));
    }
    REQUIRE(rec.kl >= 0.0);
  }
}
