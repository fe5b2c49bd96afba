#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/io.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

struct ClassAccuracy {
  std::string class_id;
  std::size_t correct = 0;
  std::size_t total = 0;
  double percent = 0.0;
};

struct PerClassResult {
  std::vector<ClassAccuracy> rows;
  double mean_percent = 0.0;  // unweighted over classes
};

// Per-class accuracy over the given class set; the mean weights every class
// equally regardless of its sample count.
inline PerClassResult per_class_accuracy(std::span<const std::string> predictions,
                                         std::span<const std::string> truth,
                                         const std::vector<std::string>& class_set) {
  if (predictions.size() != truth.size()) {
    throw PreconditionError("per_class_accuracy: predictions and truth differ in length");
  }
  if (class_set.empty()) throw PreconditionError("per_class_accuracy: empty class set");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // class -> (correct, total)
  for (const std::string& c : class_set) tally[c] = {0, 0};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto it = tally.find(truth[i]);
    if (it == tally.end()) {
      throw PreconditionError("per_class_accuracy: truth label '" + truth[i] + "' not in the class set");
    }
    ++it->second.second;
    if (predictions[i] == truth[i]) ++it->second.first;
  }
  PerClassResult res;
  double acc_sum = 0.0;
  for (const std::string& c : class_set) {
    const auto [correct, total] = tally[c];
    if (total == 0) throw CoverageError("per_class_accuracy: class '" + c + "' has no test samples");
    ClassAccuracy row;
    row.class_id = c;
    row.correct = correct;
    row.total = total;
    row.percent = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    acc_sum += row.percent;
    res.rows.push_back(std::move(row));
  }
  res.mean_percent = acc_sum / static_cast<double>(class_set.size());
  return res;
}

// H = 2 * As * Au / (As + Au); 0 when both sides are 0.
inline double harmonic_mean(double a_s, double a_u) {
  if (a_s < 0.0 || a_u < 0.0) throw DomainError("harmonic_mean: accuracies must be >= 0");
  if (a_s + a_u == 0.0) return 0.0;
  return 2.0 * a_s * a_u / (a_s + a_u);
}

// (new - base) / base * 100.
inline double improvement_rate(double now, double base) {
  if (base <= 0.0) throw DomainError("improvement_rate: base must be > 0");
  return (now - base) / base * 100.0;
}

namespace eval_detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
// descending with matching eigenvectors (columns of v).
inline void jacobi_eigen_sym(std::vector<double>& a, std::size_t n, std::vector<double>& eigenvalues,
                             std::vector<double>& v) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i * n + i]));
  scale = std::max(scale, 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (std::sqrt(off) < 1e-14 * scale * static_cast<double>(n)) break;
    for (std::size_t pi = 0; pi < n; ++pi) {
      for (std::size_t qi = pi + 1; qi < n; ++qi) {
        const double apq = a[pi * n + qi];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[pi * n + pi];
        const double aqq = a[qi * n + qi];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + pi];
          const double akq = a[k * n + qi];
          a[k * n + pi] = c * akp - s * akq;
          a[k * n + qi] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[pi * n + k];
          const double aqk = a[qi * n + k];
          a[pi * n + k] = c * apk - s * aqk;
          a[qi * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + pi];
          const double vkq = v[k * n + qi];
          v[k * n + pi] = c * vkp - s * vkq;
          v[k * n + qi] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    eigenvalues[i] = a[i * n + i];
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return eigenvalues[x] > eigenvalues[y]; });
  std::vector<double> ev_sorted(n);
  std::vector<double> v_sorted(n * n);
  for (std::size_t c = 0; c < n; ++c) {
    ev_sorted[c] = eigenvalues[order[c]];
    for (std::size_t r = 0; r < n; ++r) v_sorted[r * n + c] = v[r * n + order[c]];
  }
  eigenvalues = std::move(ev_sorted);
  v = std::move(v_sorted);
}

}  // namespace eval_detail

struct Projection {
  std::vector<double> x, y;
  std::vector<std::string> labels;
  std::array<double, 2> eigenvalues = {0.0, 0.0};
  bool degenerate = false;  // fewer than 2 positive covariance eigenvalues
};

// Centers the features and projects onto the top-2 principal directions. Each
// direction's sign is fixed so its largest-magnitude coordinate is positive.
inline Projection project_2d(const Tensor& features, std::span<const std::string> labels) {
  if (features.rank() != 2) throw ShapeError("project_2d: features must be [n x d]");
  const std::size_t n = features.shape[0], d = features.shape[1];
  if (n < 3) throw PreconditionError("project_2d: need at least 3 samples");
  if (d < 2) throw PreconditionError("project_2d: need feature width >= 2");
  if (labels.size() != n) throw PreconditionError("project_2d: one label per row required");

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.values[r * d + j];
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = features.values[r * d + i] - mean[i];
      for (std::size_t j = i; j < d; ++j) {
        cov[i * d + j] += xi * (features.values[r * d + j] - mean[j]);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(n - 1);
      cov[j * d + i] = cov[i * d + j];
    }

  std::vector<double> eigenvalues, vecs;
  eval_detail::jacobi_eigen_sym(cov, d, eigenvalues, vecs);

  Projection proj;
  proj.labels.assign(labels.begin(), labels.end());
  proj.eigenvalues = {eigenvalues[0], eigenvalues[1]};
  const double positive_floor = 1e-12 * std::max(1.0, eigenvalues[0]);
  std::array<std::vector<double>, 2> axes;
  for (std::size_t k = 0; k < 2; ++k) {
    axes[k].assign(d, 0.0);
    if (eigenvalues[k] <= positive_floor) {
      proj.degenerate = true;
      proj.eigenvalues[k] = 0.0;
      continue;  // axis stays zero-filled
    }
    std::size_t arg = 0;
    for (std::size_t r = 0; r < d; ++r) {
      axes[k][r] = vecs[r * d + k];
      if (std::abs(axes[k][r]) > std::abs(axes[k][arg])) arg = r;
    }
    if (axes[k][arg] < 0.0) {
      for (double& c : axes[k]) c = -c;
    }
  }
  if (proj.degenerate) {
    std::cerr << "project_2d: covariance has fewer than 2 positive eigenvalues; degenerate axis zero-filled\n";
  }
  proj.x.resize(n);
  proj.y.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double px = 0.0, py = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features.values[r * d + j] - mean[j];
      px += c * axes[0][j];
      py += c * axes[1][j];
    }
    proj.x[r] = px;
    proj.y[r] = py;
  }
  return proj;
}

inline void save_projection(const Projection& p, std::ostream& out) {
  out << "x\ty\tclass_id\n";
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    out << fmt_double(p.x[i]) << '\t' << fmt_double(p.y[i]) << '\t' << p.labels[i] << '\n';
  }
}

// Fisher separability: trace of between-class scatter over trace of
// within-class scatter. Returns +inf (with a warning) when the within-class
// scatter vanishes.
inline double separability(const Tensor& features, std::span<const std::string> labels) {
  if (features.rank() != 2) throw ShapeError("separability: features must be [n x d]");
  const std::size_t n = features.shape[0], d = features.shape[1];
  if (labels.size() != n) throw PreconditionError("separability: one label per row required");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < n; ++r) by_class[std::string(labels[r])].push_back(r);
  if (by_class.size() < 2) throw PreconditionError("separability: need at least 2 classes");
  for (const auto& [c, rows] : by_class) {
    if (rows.size() < 2) throw PreconditionError("separability: class '" + c + "' has fewer than 2 samples");
  }

  std::vector<double> global_mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) global_mean[j] += features.values[r * d + j];
  for (double& m : global_mean) m /= static_cast<double>(n);

  double between = 0.0, within = 0.0;
  for (const auto& [c, rows] : by_class) {
    std::vector<double> mean(d, 0.0);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) mean[j] += features.values[r * d + j];
    for (double& m : mean) m /= static_cast<double>(rows.size());
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = mean[j] - global_mean[j];
      between += static_cast<double>(rows.size()) * diff * diff;
    }
    for (std::size_t r : rows) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = features.values[r * d + j] - mean[j];
        within += diff * diff;
      }
    }
  }
  if (within == 0.0) {
    std::cerr << "separability: zero within-class scatter, returning infinity\n";
    return std::numeric_limits<double>::infinity();
  }
  return between / within;
}

struct EvalReport {
  std::string method;
  PerClassResult seen;
  PerClassResult unseen;
  double accuracy_seen = 0.0;    // As, percent
  double accuracy_unseen = 0.0;  // Au, percent
  double harmonic = 0.0;         // H, percent
};

inline EvalReport make_report(std::string method, PerClassResult seen, PerClassResult unseen) {
  EvalReport r;
  r.method = std::move(method);
  r.accuracy_seen = seen.mean_percent;
  r.accuracy_unseen = unseen.mean_percent;
  r.harmonic = harmonic_mean(r.accuracy_seen, r.accuracy_unseen);
  r.seen = std::move(seen);
  r.unseen = std::move(unseen);
  return r;
}

// Human-readable table, one decimal place, max-H row marked with '*'.
inline std::string report_table(std::span<const EvalReport> reports) {
  if (reports.empty()) throw PreconditionError("report_table: no reports");
  std::size_t width = 6;
  for (const EvalReport& r : reports) width = std::max(width, r.method.size());
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].harmonic > reports[best].harmonic) best = i;
  }
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-*s %7s %7s %7s\n", static_cast<int>(width), "method", "As", "Au", "H");
  out << buf;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    std::snprintf(buf, sizeof(buf), "%-*s %7.1f %7.1f %7.1f%s\n", static_cast<int>(width), r.method.c_str(),
                  r.accuracy_seen, r.accuracy_unseen, r.harmonic, i == best ? " *" : "");
    out << buf;
  }
  return out.str();
}

// Machine-readable companion of report_table.
inline void save_report_tsv(std::span<const EvalReport> reports, std::ostream& out) {
  out << "method\tAs\tAu\tH\n";
  for (const EvalReport& r : reports) {
    out << r.method << '\t' << fmt_double(r.accuracy_seen) << '\t' << fmt_double(r.accuracy_unseen) << '\t'
        << fmt_double(r.harmonic) << '\n';
  }
}

inline std::vector<EvalReport> load_report_tsv(std::string_view text, std::string_view context) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != "method\tAs\tAu\tH") {
    throw FormatError(std::string(context) + ": bad report header");
  }
  std::vector<EvalReport> reports;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split(lines[i], '\t');
    if (cols.size() != 4) {
      throw FormatError(std::string(context) + " line " + std::to_string(i + 1) + ": expected 4 columns");
    }
    EvalReport r;
    r.method = cols[0];
    r.accuracy_seen = parse_double(cols[1], context);
    r.accuracy_unseen = parse_double(cols[2], context);
    r.harmonic = parse_double(cols[3], context);
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace biozsl
