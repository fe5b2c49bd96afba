#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/io.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

// Feature rows tagged with class ids (ids are strings, e.g. taxon ids).
struct LabeledSamples {
  std::vector<std::string> class_ids;  // one per row of features
  Tensor features;                     // [n x dim]

  std::size_t size() const { return class_ids.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.shape[1] : 0; }

  bool operator==(const LabeledSamples&) const = default;
};

// Training view: features plus dense labels under an explicit class order.
struct Dataset {
  Tensor x;                              // [n x dim]
  std::vector<int> y;                    // dense labels, y[i] in [0, classes.size())
  std::vector<std::string> classes;      // label -> class id

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.rank() == 2 ? x.shape[1] : 0; }
  std::size_t class_count() const { return classes.size(); }
};

// Builds a Dataset from the samples whose class is listed in `classes`,
// optionally capped at `per_class_cap` rows per class (0 = no cap). Row order
// follows the input sample order.
inline Dataset make_dataset(const LabeledSamples& samples, const std::vector<std::string>& classes,
                            std::size_t per_class_cap = 0) {
  std::unordered_map<std::string, int> label_of;
  for (std::size_t i = 0; i < classes.size(); ++i) label_of[classes[i]] = static_cast<int>(i);

  std::unordered_map<int, std::size_t> taken;
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = label_of.find(samples.class_ids[i]);
    if (it == label_of.end()) continue;
    if (per_class_cap > 0 && taken[it->second] >= per_class_cap) continue;
    ++taken[it->second];
    rows.push_back(i);
    labels.push_back(it->second);
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (taken.find(static_cast<int>(c)) == taken.end()) {
      throw CoverageError("class '" + classes[c] + "' has no samples");
    }
  }

  Dataset d;
  d.classes = classes;
  d.y = std::move(labels);
  const std::size_t dim = samples.dim();
  d.x = Tensor::zeros({rows.size(), dim});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t j = 0; j < dim; ++j) d.x.values[k * dim + j] = samples.features.values[rows[k] * dim + j];
  }
  return d;
}

// Samples file: first line "n<TAB>feature_dim", then one row per sample:
// class_id followed by the feature values.
inline void save_samples(const LabeledSamples& s, std::ostream& out) {
  out << s.size() << '\t' << s.dim() << '\n';
  const std::size_t dim = s.dim();
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << s.class_ids[i];
    for (std::size_t j = 0; j < dim; ++j) out << '\t' << fmt_double(s.features.values[i * dim + j]);
    out << '\n';
  }
}

inline LabeledSamples load_samples(std::string_view text, std::string_view context) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw FormatError(std::string(context) + ": empty samples file");
  const std::vector<std::string> head = split(lines[0], '\t');
  if (head.size() != 2) throw FormatError(std::string(context) + ": header must be 'n<TAB>feature_dim'");
  const auto n = static_cast<std::size_t>(parse_int(head[0], context));
  const auto dim = static_cast<std::size_t>(parse_int(head[1], context));
  LabeledSamples s;
  s.features = Tensor::zeros({n, dim});
  s.class_ids.reserve(n);
  std::size_t row = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split(lines[i], '\t');
    if (cols.size() != dim + 1) {
      throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": expected " +
                        std::to_string(dim + 1) + " columns, got " + std::to_string(cols.size()));
    }
    if (row >= n) throw FormatError(std::string(context) + ": more rows than the header announces");
    s.class_ids.push_back(cols[0]);
    for (std::size_t j = 0; j < dim; ++j) {
      s.features.values[row * dim + j] = parse_double(cols[j + 1], context);
    }
    ++row;
  }
  if (row != n) {
    throw FormatError(std::string(context) + ": header announces " + std::to_string(n) + " rows, found " +
                      std::to_string(row));
  }
  return s;
}

// Per-class vector table: "class_id<TAB>v_1<TAB>...<TAB>v_d", no header.
inline void save_class_vectors(const std::map<std::string, std::vector<double>>& table, std::ostream& out) {
  for (const auto& [id, vec] : table) {
    out << id;
    for (double v : vec) out << '\t' << fmt_double(v);
    out << '\n';
  }
}

inline std::map<std::string, std::vector<double>> load_class_vectors(std::string_view text,
                                                                     std::string_view context) {
  std::map<std::string, std::vector<double>> table;
  const std::vector<std::string> lines = split_lines(text);
  std::size_t dim = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split(lines[i], '\t');
    if (cols.size() < 2) {
      throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": expected id plus values");
    }
    if (dim == 0) dim = cols.size() - 1;
    if (cols.size() - 1 != dim) {
      throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": inconsistent vector width");
    }
    std::vector<double> vec(dim);
    for (std::size_t j = 0; j < dim; ++j) vec[j] = parse_double(cols[j + 1], context);
    if (!table.emplace(cols[0], std::move(vec)).second) {
      throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": duplicate id '" + cols[0] + "'");
    }
  }
  return table;
}

}  // namespace biozsl
