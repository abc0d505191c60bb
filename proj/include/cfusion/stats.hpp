#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfusion/common.hpp"
#include "cfusion/io.hpp"

namespace cfusion {

struct ConfusionMatrix {
  std::vector<std::vector<long>> counts;  // rows = true class, cols = predicted
  std::vector<std::string> class_names;

  int classes() const { return static_cast<int>(counts.size()); }
  long total() const {
    long t = 0;
    for (const auto& r : counts) t = std::accumulate(r.begin(), r.end(), t);
    return t;
  }
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  long support = 0;
  long predicted = 0;
  // Set when the denominator was empty and the value defaulted to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool specificity_undefined = false;
};

struct MetricSet {
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double weighted_specificity = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  bool zero_division = false;  // any per-class metric fell back to 0
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy",        "weighted_precision", "weighted_recall",
                                              "weighted_f1",     "weighted_specificity", "macro_precision",
                                              "macro_recall",    "macro_f1"};
  return names;
}

inline double metric_value(const MetricSet& m, std::string_view name) {
  if (name == "accuracy") return m.accuracy;
  if (name == "weighted_precision") return m.weighted_precision;
  if (name == "weighted_recall") return m.weighted_recall;
  if (name == "weighted_f1") return m.weighted_f1;
  if (name == "weighted_specificity") return m.weighted_specificity;
  if (name == "macro_precision") return m.macro_precision;
  if (name == "macro_recall") return m.macro_recall;
  if (name == "macro_f1") return m.macro_f1;
  throw InvalidInput("unknown metric '" + std::string(name) + "'");
}

inline ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred, int classes) {
  if (y_true.size() != y_pred.size()) throw InvalidInput("prediction and label vectors differ in length");
  if (y_true.empty()) throw InvalidInput("evaluation needs at least one sample");
  if (classes < 1) throw InvalidInput("class count must be >= 1");
  ConfusionMatrix cm;
  cm.counts.assign(static_cast<std::size_t>(classes), std::vector<long>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= classes || y_pred[i] < 0 || y_pred[i] >= classes)
      throw InvalidInput("label out of range at index " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  for (int c = 0; c < classes; ++c) cm.class_names.push_back(std::to_string(c));
  return cm;
}

// Per-class and averaged metrics. Weighted averages use support weights;
// macro averages cover classes that occur in either truth or prediction.
inline MetricSet metrics_from(const ConfusionMatrix& cm) {
  const auto c = static_cast<std::size_t>(cm.classes());
  const double n = static_cast<double>(cm.total());
  MetricSet m;
  m.per_class.resize(c);
  long diag = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    auto& pc = m.per_class[k];
    const long tp = cm.counts[k][k];
    diag += tp;
    for (std::size_t j = 0; j < c; ++j) {
      pc.support += cm.counts[k][j];
      pc.predicted += cm.counts[j][k];
    }
    const long fp = pc.predicted - tp, fn = pc.support - tp;
    const long tn = cm.total() - tp - fp - fn;
    auto ratio = [](long num, long den, bool& undefined) {
      undefined = den == 0;
      return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    pc.precision = ratio(tp, tp + fp, pc.precision_undefined);
    pc.recall = ratio(tp, tp + fn, pc.recall_undefined);
    pc.specificity = ratio(tn, tn + fp, pc.specificity_undefined);
    pc.f1 = pc.precision + pc.recall > 0 ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
    m.zero_division |= pc.precision_undefined || pc.recall_undefined || pc.specificity_undefined;

    const double w = static_cast<double>(pc.support) / n;
    m.weighted_precision += w * pc.precision;
    m.weighted_recall += w * pc.recall;
    m.weighted_f1 += w * pc.f1;
    m.weighted_specificity += w * pc.specificity;
    if (pc.support > 0 || pc.predicted > 0) {
      ++present;
      m.macro_precision += pc.precision;
      m.macro_recall += pc.recall;
      m.macro_f1 += pc.f1;
    }
  }
  m.accuracy = static_cast<double>(diag) / n;
  m.macro_precision /= static_cast<double>(present);
  m.macro_recall /= static_cast<double>(present);
  m.macro_f1 /= static_cast<double>(present);
  return m;
}

// classes = 0 infers max label + 1.
inline std::pair<ConfusionMatrix, MetricSet> evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                                      int classes = 0) {
  if (classes == 0) {
    for (int v : y_true) classes = std::max(classes, v + 1);
    for (int v : y_pred) classes = std::max(classes, v + 1);
  }
  auto cm = confusion(y_true, y_pred, classes);
  auto m = metrics_from(cm);
  return {std::move(cm), std::move(m)};
}

// ---------------------------------------------------------------------------
// Resampling engine

// Linear interpolation between closest ranks; q in [0, 1]. Input is sorted.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw InvalidInput("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Iteration b draws its indices from Rng(mix64(stream ^ mix64(b))), so the
// output does not depend on how iterations are spread over threads.
inline std::vector<double> resample_statistic(std::size_t n, int iterations, std::uint64_t stream, int threads,
                                              const std::function<double(const std::vector<std::size_t>&)>& stat) {
  if (n == 0) throw InvalidInput("cannot resample an empty sample");
  if (iterations < 1) throw InvalidInput("iteration count must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(iterations));
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(n);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(mix64(stream ^ mix64(b)));
      for (auto& i : idx) i = rng.below(n);
      out[b] = stat(idx);
    }
  };
  const auto t = static_cast<std::size_t>(std::clamp(threads, 1, iterations));
  if (t == 1) {
    work(0, out.size());
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < t; ++k) pool.emplace_back(work, out.size() * k / t, out.size() * (k + 1) / t);
  for (auto& th : pool) th.join();
  return out;
}

struct DiffResult {
  std::string metric;
  std::string label;       // complementarity | redundancy | free text
  std::string comparison;  // "A vs B"
  double mean_diff = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_le0 = 0.0;  // share of samples <= 0
  double p_gt0 = 0.0;  // share of samples > 0; the posterior P(diff > 0)
  double p_eq0 = 0.0;
  std::vector<double> samples;  // in iteration order

  std::vector<double> sorted_samples() const {
    auto s = samples;
    std::sort(s.begin(), s.end());
    return s;
  }
};

inline DiffResult summarize(std::string metric, std::vector<double> samples) {
  DiffResult r;
  r.metric = std::move(metric);
  const double b = static_cast<double>(samples.size());
  std::size_t le = 0, eq = 0;
  for (double d : samples) {
    r.mean_diff += d;
    le += d <= 0;
    eq += d == 0;
  }
  r.mean_diff /= b;
  r.p_le0 = static_cast<double>(le) / b;
  r.p_eq0 = static_cast<double>(eq) / b;
  r.p_gt0 = 1.0 - r.p_le0;
  r.samples = std::move(samples);
  const auto sorted = r.sorted_samples();
  r.ci_lo = percentile_sorted(sorted, 0.025);
  r.ci_hi = percentile_sorted(sorted, 0.975);
  return r;
}

struct BootstrapConfig {
  int iterations = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  int classes = 0;  // 0 infers from all three vectors
};

namespace detail {

inline int infer_classes(const std::vector<int>& y, const std::vector<int>& a, const std::vector<int>& b) {
  int c = 0;
  for (const auto* v : {&y, &a, &b})
    for (int x : *v) c = std::max(c, x + 1);
  return c;
}

inline void check_aligned(const std::vector<int>& y, const std::vector<int>& a, const std::vector<int>& b) {
  if (y.size() != a.size() || y.size() != b.size())
    throw InvalidInput("prediction vectors are not aligned with the labels (" + std::to_string(y.size()) + ", " +
                       std::to_string(a.size()) + ", " + std::to_string(b.size()) + ")");
  if (y.empty()) throw InvalidInput("comparison needs at least one sample");
}

}  // namespace detail

// Distribution of metric(A) - metric(B) over resampled test indices. The
// stream for a metric is seeded from hash(seed, metric), so results for one
// metric do not depend on which other metrics are requested.
inline DiffResult bootstrap_diff(const std::vector<int>& y, const std::vector<int>& a, const std::vector<int>& b,
                                 const std::string& metric, const BootstrapConfig& cfg) {
  detail::check_aligned(y, a, b);
  if (cfg.iterations < 100) throw InvalidInput("bootstrap needs at least 100 iterations");
  metric_value(MetricSet{}, metric);  // rejects unknown names up front
  const int classes = cfg.classes > 0 ? cfg.classes : detail::infer_classes(y, a, b);
  auto samples = resample_statistic(y.size(), cfg.iterations, hash_combine(cfg.seed, metric), cfg.threads,
                                    [&](const std::vector<std::size_t>& idx) {
                                      std::vector<int> ys(idx.size()), as(idx.size()), bs(idx.size());
                                      for (std::size_t i = 0; i < idx.size(); ++i) {
                                        ys[i] = y[idx[i]];
                                        as[i] = a[idx[i]];
                                        bs[i] = b[idx[i]];
                                      }
                                      return metric_value(metrics_from(confusion(ys, as, classes)), metric) -
                                             metric_value(metrics_from(confusion(ys, bs, classes)), metric);
                                    });
  return summarize(metric, std::move(samples));
}

inline const std::vector<std::string>& default_comparison_metrics() {
  static const std::vector<std::string> m{"accuracy", "weighted_precision", "weighted_recall", "weighted_f1"};
  return m;
}

// Bootstrap-as-posterior comparison: the credible interval is the percentile
// interval and P(diff > 0) is p_gt0. Shares the bootstrap_diff engine.
inline std::vector<DiffResult> bayes_compare(const std::vector<int>& y, const std::vector<int>& a,
                                             const std::vector<int>& b, const std::vector<std::string>& metrics,
                                             const BootstrapConfig& cfg) {
  std::vector<DiffResult> out;
  for (const auto& m : metrics) out.push_back(bootstrap_diff(y, a, b, m, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct NamedPredictions {
  std::string name;
  std::vector<int> pred;
};

struct ComparisonSpec {
  std::string a;
  std::string b;
  std::string label;
};

struct AblationConfig {
  BootstrapConfig bootstrap;
  std::vector<std::string> metrics = default_comparison_metrics();
  std::vector<ComparisonSpec> pairs;
};

struct AblationRow {
  std::string model;
  MetricSet metrics;
  ConfusionMatrix confusion;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // by accuracy, descending; ties by name
  std::vector<DiffResult> diffs;
};

inline AblationTable run_ablation(const std::vector<NamedPredictions>& models, const std::vector<int>& y,
                                  const AblationConfig& cfg) {
  if (models.size() < 2) throw InvalidInput("ablation needs at least two models");
  int classes = cfg.bootstrap.classes;
  if (classes == 0)
    for (const auto& m : models) classes = std::max(classes, detail::infer_classes(y, m.pred, m.pred));
  AblationTable t;
  for (const auto& m : models) {
    auto [cm, ms] = evaluate(y, m.pred, classes);
    t.rows.push_back({m.name, std::move(ms), std::move(cm)});
  }
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const AblationRow& l, const AblationRow& r) {
    if (l.metrics.accuracy != r.metrics.accuracy) return l.metrics.accuracy > r.metrics.accuracy;
    return l.model < r.model;
  });
  auto find = [&](const std::string& name) -> const std::vector<int>& {
    for (const auto& m : models)
      if (m.name == name) return m.pred;
    throw InvalidInput("comparison references unknown model '" + name + "'");
  };
  BootstrapConfig bc = cfg.bootstrap;
  bc.classes = classes;
  for (const auto& p : cfg.pairs)
    for (auto& d : bayes_compare(y, find(p.a), find(p.b), cfg.metrics, bc)) {
      d.comparison = p.a + " vs " + p.b;
      d.label = p.label;
      t.diffs.push_back(std::move(d));
    }
  return t;
}

// ---------------------------------------------------------------------------
// Export

inline std::string diffs_to_csv(const std::vector<DiffResult>& diffs) {
  std::string out = "comparison,label,metric,mean_diff,ci_lo,ci_hi,p_le0,p_gt0\n";
  for (const auto& d : diffs)
    out += d.comparison + "," + d.label + "," + d.metric + "," + io::fmt(d.mean_diff) + "," + io::fmt(d.ci_lo) + "," +
           io::fmt(d.ci_hi) + "," + io::fmt(d.p_le0) + "," + io::fmt(d.p_gt0) + "\n";
  return out;
}

inline nlohmann::json to_json(const DiffResult& d, bool with_samples = true) {
  nlohmann::json j{{"comparison", d.comparison}, {"label", d.label},  {"metric", d.metric},
                   {"mean_diff", d.mean_diff},   {"ci_lo", d.ci_lo},  {"ci_hi", d.ci_hi},
                   {"p_le0", d.p_le0},           {"p_gt0", d.p_gt0}, {"p_eq0", d.p_eq0},
                   {"iterations", d.samples.size()}};
  if (with_samples) j["sorted_samples"] = d.sorted_samples();
  return j;
}

inline nlohmann::json to_json(const MetricSet& m) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : m.per_class)
    per.push_back({{"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"specificity", c.specificity},
                   {"support", c.support},
                   {"undefined",
                    {{"precision", c.precision_undefined},
                     {"recall", c.recall_undefined},
                     {"specificity", c.specificity_undefined}}}});
  nlohmann::json j;
  for (const auto& n : metric_names()) j[n] = metric_value(m, n);
  j["per_class"] = per;
  j["zero_division"] = m.zero_division;
  return j;
}

inline std::string ablation_to_csv(const AblationTable& t) {
  std::string out = "model";
  for (const auto& n : metric_names()) out += "," + n;
  out += "\n";
  for (const auto& r : t.rows) {
    out += r.model;
    for (const auto& n : metric_names()) out += "," + io::fmt(metric_value(r.metrics, n));
    out += "\n";
  }
  return out;
}

inline nlohmann::json to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array(), diffs = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"model", r.model}, {"metrics", to_json(r.metrics)}, {"confusion", r.confusion.counts}});
  for (const auto& d : t.diffs) diffs.push_back(to_json(d, false));
  return {{"rows", rows}, {"diffs", diffs}};
}

// Strip plot of the difference samples, one row per result.
inline std::string diffs_to_svg(const std::vector<DiffResult>& diffs, std::size_t max_points = 400) {
  const double w = 640, row_h = 36, left = 260, right = 20, top = 30;
  double lo = 0, hi = 0;
  for (const auto& d : diffs)
    for (double s : d.samples) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto x_of = [&](double v) { return left + (v - lo) / (hi - lo) * (w - left - right); };
  const double h = top + row_h * static_cast<double>(diffs.size()) + 30;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + io::fmt(w) + "\" height=\"" + io::fmt(h) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<line x1=\"" + io::fmt(x_of(0)) + "\" y1=\"" + io::fmt(top - 10) + "\" x2=\"" + io::fmt(x_of(0)) +
       "\" y2=\"" + io::fmt(h - 25) + "\" stroke=\"#999\" stroke-dasharray=\"3,3\"/>\n";
  for (std::size_t r = 0; r < diffs.size(); ++r) {
    const auto& d = diffs[r];
    const double y = top + row_h * (static_cast<double>(r) + 0.5);
    s += "<text x=\"4\" y=\"" + io::fmt(y + 4) + "\">" + d.comparison + " " + d.metric + "</text>\n";
    const auto sorted = d.sorted_samples();
    const std::size_t step = std::max<std::size_t>(1, sorted.size() / max_points);
    for (std::size_t i = 0; i < sorted.size(); i += step) {
      const double jitter = (static_cast<double>((i * 7919) % 17) - 8.0) * 1.2;
      s += "<circle cx=\"" + io::fmt(x_of(sorted[i])) + "\" cy=\"" + io::fmt(y + jitter) +
           "\" r=\"1.5\" fill=\"#3465a4\" fill-opacity=\"0.4\"/>\n";
    }
    s += "<line x1=\"" + io::fmt(x_of(d.ci_lo)) + "\" y1=\"" + io::fmt(y) + "\" x2=\"" + io::fmt(x_of(d.ci_hi)) +
         "\" y2=\"" + io::fmt(y) + "\" stroke=\"#cc0000\" stroke-width=\"2\"/>\n";
  }
  s += "<text x=\"" + io::fmt(left) + "\" y=\"" + io::fmt(h - 8) + "\">" + io::fmt(lo) + "</text>\n";
  s += "<text x=\"" + io::fmt(w - right - 40) + "\" y=\"" + io::fmt(h - 8) + "\">" + io::fmt(hi) + "</text>\n";
  return s + "</svg>\n";
}

}  // namespace cfusion
