#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "biozsl/dataset.hpp"
#include "biozsl/errors.hpp"
#include "biozsl/graph.hpp"
#include "biozsl/io.hpp"
#include "biozsl/params.hpp"
#include "biozsl/rng.hpp"

namespace biozsl {

struct TrainConfig {
  double lambda = 1.0;         // trade-off weight on the auxiliary loss
  double learning_rate = 0.001;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t feature_width = 64;
  std::size_t hidden_width = 32;

  void validate() const {
    if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (feature_width == 0 || hidden_width == 0) throw ConfigError("train: widths must be >= 1");
  }
};

struct StepRecord {
  std::size_t step = 0;
  double loss_aux = 0.0;
  double loss_cur = 0.0;
  double loss_total = 0.0;
};

using TrainHistory = std::vector<StepRecord>;

// Shared extractor plus the two task heads of the dual-channel framework.
struct ModelParams {
  ParamSet extractor;  // W1,b1,W2,b2: two affine+relu layers
  ParamSet aux_head;   // W,b: single affine layer to the auxiliary classes
  ParamSet cur_head;   // W,b: single affine layer to the seen classes
  std::size_t input_dim = 0;
  std::size_t hidden_width = 0;
  std::size_t feature_width = 0;
  std::size_t aux_classes = 0;
  std::size_t cur_classes = 0;
};

// Initialization draws one independent stream per tensor, so the extractor
// init does not depend on the head sizes.
inline ModelParams make_model_params(std::size_t input_dim, std::size_t hidden_width, std::size_t feature_width,
                                     std::size_t aux_classes, std::size_t cur_classes, std::uint64_t seed) {
  ModelParams m;
  m.input_dim = input_dim;
  m.hidden_width = hidden_width;
  m.feature_width = feature_width;
  m.aux_classes = aux_classes;
  m.cur_classes = cur_classes;
  const Rng root(seed);
  m.extractor.add_uniform("W1", {hidden_width, input_dim}, input_dim, hidden_width, root.fork("init/extractor/W1"));
  m.extractor.add("b1", {hidden_width});
  m.extractor.add_uniform("W2", {feature_width, hidden_width}, hidden_width, feature_width,
                          root.fork("init/extractor/W2"));
  m.extractor.add("b2", {feature_width});
  // Heads start at zero: logits then open at exactly uniform softmax, which
  // keeps the first training steps well conditioned.
  m.aux_head.add("W", {aux_classes, feature_width});
  m.aux_head.add("b", {aux_classes});
  m.cur_head.add("W", {cur_classes, feature_width});
  m.cur_head.add("b", {cur_classes});
  return m;
}

// Extractor topology, shared between the training graph (parameters bound)
// and pure inference (parameter values as constants).
template <class Binder>
Graph::NodeId extractor_forward(Graph& g, Binder&& bind, Graph::NodeId x) {
  const Graph::NodeId h = g.relu(g.affine(bind("W1"), bind("b1"), x));
  return g.affine(bind("W2"), bind("b2"), h);
}

template <class Binder>
Graph::NodeId head_forward(Graph& g, Binder&& bind, Graph::NodeId features) {
  return g.affine(bind("W"), bind("b"), features);
}

inline Graph::NodeId extract_graph(Graph& g, ParamSet& extractor, Graph::NodeId x) {
  return extractor_forward(g, [&](const char* n) { return g.param(extractor.at(n)); }, x);
}

// nu = f_F(x): deterministic forward pass through the extractor.
inline Tensor extract(const ParamSet& extractor, const Tensor& x) {
  Graph g;
  const Graph::NodeId out =
      extractor_forward(g, [&](const char* n) { return g.constant(extractor.at(n).value); }, g.constant(x));
  return g.value(out);
}

struct Batch {
  Tensor x;
  std::vector<int> y;
};

namespace detail {

inline void check_batch(const Batch& b, std::size_t input_dim, std::size_t classes, const char* channel) {
  if (b.y.empty()) throw PreconditionError(std::string(channel) + " batch is empty");
  if (b.x.rank() != 2 || b.x.shape[0] != b.y.size() || b.x.shape[1] != input_dim) {
    throw ShapeError(std::string(channel) + " batch: features " + shape_str(b.x) + " do not match input width " +
                     std::to_string(input_dim));
  }
  for (int y : b.y) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError(std::string(channel) + " label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

inline Batch take_batch(const Dataset& d, const std::vector<std::size_t>& perm, std::size_t begin, std::size_t end) {
  Batch b;
  const std::size_t dim = d.dim();
  b.x = Tensor::zeros({end - begin, dim});
  b.y.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t row = perm[k];
    for (std::size_t j = 0; j < dim; ++j) b.x.values[(k - begin) * dim + j] = d.x.values[row * dim + j];
    b.y.push_back(d.y[row]);
  }
  return b;
}

inline std::size_t batch_count(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

}  // namespace detail

// Computes lambda * L_aux + L_cur and backpropagates it through both heads
// into the shared extractor, leaving gradients populated. Does not update.
inline StepRecord joint_backward(ModelParams& m, const Batch& batch_aux, const Batch& batch_cur, double lambda) {
  detail::check_batch(batch_aux, m.input_dim, m.aux_classes, "auxiliary");
  detail::check_batch(batch_cur, m.input_dim, m.cur_classes, "current");
  Graph g;
  const auto nu_aux = extract_graph(g, m.extractor, g.constant(batch_aux.x));
  const auto nu_cur = extract_graph(g, m.extractor, g.constant(batch_cur.x));
  const auto loss_aux =
      g.softmax_cross_entropy(head_forward(g, [&](const char* n) { return g.param(m.aux_head.at(n)); }, nu_aux),
                              batch_aux.y);
  const auto loss_cur =
      g.softmax_cross_entropy(head_forward(g, [&](const char* n) { return g.param(m.cur_head.at(n)); }, nu_cur),
                              batch_cur.y);
  const auto total = g.weighted_sum({{loss_aux, lambda}, {loss_cur, 1.0}});
  g.backward(total);
  StepRecord rec;
  rec.loss_aux = g.value(loss_aux).item();
  rec.loss_cur = g.value(loss_cur).item();
  rec.loss_total = g.value(total).item();
  return rec;
}

// One simultaneous SGD update of theta_f, theta_a, theta_c.
inline StepRecord joint_step(ModelParams& m, const Batch& batch_aux, const Batch& batch_cur,
                             const TrainConfig& cfg) {
  StepRecord rec = joint_backward(m, batch_aux, batch_cur, cfg.lambda);
  sgd_step({&m.extractor, &m.aux_head, &m.cur_head}, cfg.learning_rate);
  return rec;
}

// Current-channel-only backward pass (no auxiliary term).
inline StepRecord baseline_backward(ModelParams& m, const Batch& batch_cur) {
  detail::check_batch(batch_cur, m.input_dim, m.cur_classes, "current");
  Graph g;
  const auto nu = extract_graph(g, m.extractor, g.constant(batch_cur.x));
  const auto loss =
      g.softmax_cross_entropy(head_forward(g, [&](const char* n) { return g.param(m.cur_head.at(n)); }, nu),
                              batch_cur.y);
  g.backward(loss);
  StepRecord rec;
  rec.loss_cur = g.value(loss).item();
  rec.loss_total = rec.loss_cur;
  return rec;
}

inline StepRecord baseline_step(ModelParams& m, const Batch& batch_cur, const TrainConfig& cfg) {
  StepRecord rec = baseline_backward(m, batch_cur);
  sgd_step({&m.extractor, &m.cur_head}, cfg.learning_rate);
  return rec;
}

namespace detail {

// Shared epoch loop. Each channel shuffles with its own seeded stream, so a
// baseline run visits the current-task batches in exactly the same order as a
// dual run with the same seed. When channel lengths differ, the shorter one
// cycles from its start within the epoch.
template <class StepFn>
TrainHistory epoch_loop(const Dataset& cur, const Dataset* aux, const TrainConfig& cfg, StepFn&& do_step) {
  cfg.validate();
  if (cur.size() == 0) throw PreconditionError("current dataset is empty");
  if (aux && aux->size() == 0) throw PreconditionError("auxiliary dataset is empty");

  Rng rng_cur = Rng(cfg.seed).fork("shuffle/cur");
  Rng rng_aux = Rng(cfg.seed).fork("shuffle/aux");

  TrainHistory history;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> perm_cur = rng_cur.permutation(cur.size());
    const std::size_t nb_cur = batch_count(cur.size(), cfg.batch_size);
    std::vector<std::size_t> perm_aux;
    std::size_t nb_aux = 0;
    if (aux) {
      perm_aux = rng_aux.permutation(aux->size());
      nb_aux = batch_count(aux->size(), cfg.batch_size);
    }
    const std::size_t steps = aux ? std::max(nb_cur, nb_aux) : nb_cur;
    for (std::size_t i = 0; i < steps; ++i) {
      const std::size_t ci = i % nb_cur;
      const Batch bc = take_batch(cur, perm_cur, ci * cfg.batch_size,
                                  std::min(cur.size(), (ci + 1) * cfg.batch_size));
      StepRecord rec;
      if (aux) {
        const std::size_t ai = i % nb_aux;
        const Batch ba = take_batch(*aux, perm_aux, ai * cfg.batch_size,
                                    std::min(aux->size(), (ai + 1) * cfg.batch_size));
        rec = do_step(ba, bc);
      } else {
        Batch none;
        rec = do_step(none, bc);
      }
      rec.step = step++;
      history.push_back(rec);
    }
  }
  return history;
}

}  // namespace detail

// Joint training of both channels: min over theta of lambda*L_aux + L_cur.
inline TrainHistory train_dual(ModelParams& m, const Dataset& aux, const Dataset& cur, const TrainConfig& cfg) {
  if (aux.dim() != m.input_dim || cur.dim() != m.input_dim) {
    throw ShapeError("train_dual: dataset width does not match model input width " + std::to_string(m.input_dim));
  }
  if (aux.class_count() != m.aux_classes || cur.class_count() != m.cur_classes) {
    throw ShapeError("train_dual: class counts do not match the heads");
  }
  return detail::epoch_loop(cur, &aux, cfg,
                            [&](const Batch& ba, const Batch& bc) { return joint_step(m, ba, bc, cfg); });
}

// Fine-tuning on the current task only (the paper's baseline regime).
inline TrainHistory train_baseline(ModelParams& m, const Dataset& cur, const TrainConfig& cfg) {
  if (cur.dim() != m.input_dim) {
    throw ShapeError("train_baseline: dataset width does not match model input width " +
                     std::to_string(m.input_dim));
  }
  if (cur.class_count() != m.cur_classes) {
    throw ShapeError("train_baseline: class count does not match the current head");
  }
  return detail::epoch_loop(cur, nullptr, cfg,
                            [&](const Batch&, const Batch& bc) { return baseline_step(m, bc, cfg); });
}

inline void save_history(const TrainHistory& h, std::ostream& out) {
  out << "step\tloss_aux\tloss_cur\tloss_total\n";
  for (const StepRecord& r : h) {
    out << r.step << '\t' << fmt_double(r.loss_aux) << '\t' << fmt_double(r.loss_cur) << '\t'
        << fmt_double(r.loss_total) << '\n';
  }
}

inline TrainHistory load_history(std::string_view text, std::string_view context) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != "step\tloss_aux\tloss_cur\tloss_total") {
    throw FormatError(std::string(context) + ": bad history header");
  }
  TrainHistory h;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split(lines[i], '\t');
    if (cols.size() != 4) throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": expected 4 columns");
    StepRecord r;
    r.step = static_cast<std::size_t>(parse_int(cols[0], context));
    r.loss_aux = parse_double(cols[1], context);
    r.loss_cur = parse_double(cols[2], context);
    r.loss_total = parse_double(cols[3], context);
    h.push_back(r);
  }
  return h;
}

}  // namespace biozsl
