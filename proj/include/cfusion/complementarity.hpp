#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cfusion/common.hpp"
#include "cfusion/dsp.hpp"
#include "cfusion/io.hpp"

namespace cfusion {

struct Thresholds {
  double eps = 0.15;       // |corr| below this: linearly independent
  double delta = 0.5;      // |corr| above this: linearly dependent
  double gamma = 0.25;     // corr below -gamma: conflicting
  double tau_mi = 0.42;    // nats
  double tau_ortho = 0.3;

  bool operator==(const Thresholds&) const = default;
};

inline void validate(const Thresholds& t) {
  for (double v : {t.eps, t.delta, t.gamma, t.tau_mi, t.tau_ortho})
    if (!(v > 0)) throw InvalidInput("thresholds must be positive");
  if (!(t.eps < t.delta)) throw InvalidInput("eps must be smaller than delta");
}

enum class Verdict { Complementary, Redundant, Conflicting, Neutral };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Complementary: return "complementary";
    case Verdict::Redundant: return "redundant";
    case Verdict::Conflicting: return "conflicting";
    case Verdict::Neutral: return "neutral";
  }
  return "?";
}

struct PairScore {
  std::string a, b;
  double corr = 0.0;
  double mi = 0.0;
  double ortho = 0.0;
  Verdict verdict = Verdict::Neutral;
};

namespace detail {

// Column-standardized copy (population sd) with constant columns dropped.
inline Eigen::MatrixXd standardized_columns(const Eigen::MatrixXd& f, const char* what) {
  const auto n = static_cast<double>(f.rows());
  const Eigen::RowVectorXd mean = f.colwise().mean();
  const Eigen::MatrixXd c = f.rowwise() - mean;
  const Eigen::RowVectorXd sd = (c.array().square().colwise().sum() / n).sqrt();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < f.cols(); ++j)
    if (sd(j) > 1e-12 * std::max(1.0, std::abs(mean(j)))) keep.push_back(j);
  if (keep.empty()) throw DegenerateInput(std::string(what) + ": every feature column is constant");
  Eigen::MatrixXd z(f.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) z.col(static_cast<Eigen::Index>(k)) = c.col(keep[k]) / sd(keep[k]);
  return z;
}

inline void check_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Eigen::Index min_rows) {
  if (a.rows() != b.rows())
    throw InvalidInput("domains have different row counts (" + std::to_string(a.rows()) + " vs " +
                       std::to_string(b.rows()) + ")");
  if (a.rows() < min_rows) throw InvalidInput("need at least " + std::to_string(min_rows) + " rows");
}

// Scores on the first principal component of the standardized columns.
inline Eigen::VectorXd first_pc_scores(const Eigen::MatrixXd& f) {
  const Eigen::MatrixXd z = standardized_columns(f, "principal component");
  if (z.cols() == 1) return z.col(0);
  const Eigen::MatrixXd cov = z.transpose() * z / static_cast<double>(z.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  if (!(es.eigenvalues()(cov.rows() - 1) > 1e-12)) throw DegenerateInput("first principal component has zero variance");
  return z * es.eigenvectors().col(cov.rows() - 1);
}

// Equal-frequency bin per entry: rank * bins / n, ties broken by index.
inline std::vector<int> quantile_bins(const Eigen::VectorXd& v, int bins) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return v(static_cast<Eigen::Index>(i)) < v(static_cast<Eigen::Index>(j));
  });
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) out[order[r]] = static_cast<int>(r * static_cast<std::size_t>(bins) / n);
  return out;
}

}  // namespace detail

// Plug-in mutual information (nats) of two discrete label vectors.
inline double discrete_mi(const std::vector<int>& a, const std::vector<int>& b, int bins) {
  const auto n = static_cast<double>(a.size());
  std::vector<double> joint(static_cast<std::size_t>(bins * bins), 0.0), pa(static_cast<std::size_t>(bins), 0.0),
      pb(static_cast<std::size_t>(bins), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[static_cast<std::size_t>(a[i] * bins + b[i])] += 1.0 / n;
    pa[static_cast<std::size_t>(a[i])] += 1.0 / n;
    pb[static_cast<std::size_t>(b[i])] += 1.0 / n;
  }
  double mi = 0.0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double p = joint[static_cast<std::size_t>(i * bins + j)];
      if (p > 0) mi += p * std::log(p / (pa[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(j)]));
    }
  return std::max(0.0, mi);
}

// Mean entry of the cross-correlation matrix between the two domains'
// non-constant columns.
inline double domain_correlation(const Eigen::MatrixXd& fi, const Eigen::MatrixXd& fj) {
  detail::check_rows(fi, fj, 8);
  const auto zi = detail::standardized_columns(fi, "correlation"), zj = detail::standardized_columns(fj, "correlation");
  const Eigen::MatrixXd r = zi.transpose() * zj / static_cast<double>(fi.rows());
  return std::clamp(r.mean(), -1.0, 1.0);
}

// MI between the first-principal-component scores of each domain, each
// discretized into `bins` equal-frequency bins.
inline double domain_mi(const Eigen::MatrixXd& fi, const Eigen::MatrixXd& fj, int bins = 16) {
  if (bins < 2) throw InvalidInput("MI needs at least 2 bins");
  detail::check_rows(fi, fj, 8 * bins);
  const auto a = detail::quantile_bins(detail::first_pc_scores(fi), bins);
  const auto b = detail::quantile_bins(detail::first_pc_scores(fj), bins);
  return discrete_mi(a, b, bins);
}

// ||Zi^T Zj||_F / (n sqrt(di dj)) over standardized non-constant columns;
// 1 for two identical single columns, 0 for orthogonal ones.
inline double domain_orthogonality(const Eigen::MatrixXd& fi, const Eigen::MatrixXd& fj) {
  detail::check_rows(fi, fj, 2);
  const auto zi = detail::standardized_columns(fi, "orthogonality"),
             zj = detail::standardized_columns(fj, "orthogonality");
  const double n = static_cast<double>(fi.rows());
  return (zi.transpose() * zj).norm() / (n * std::sqrt(static_cast<double>(zi.cols() * zj.cols())));
}

// Precedence: conflicting, then redundant, then complementary.
inline Verdict premise_verdict(const PairScore& s, const Thresholds& t) {
  if (s.corr < -t.gamma) return Verdict::Conflicting;
  if (std::abs(s.corr) > t.delta || s.mi > t.tau_mi) return Verdict::Redundant;
  if (std::abs(s.corr) < t.eps && s.mi < t.tau_mi && s.ortho < t.tau_ortho) return Verdict::Complementary;
  return Verdict::Neutral;
}

inline PairScore score_pair(const std::string& a, const FeatureMatrix& fa, const std::string& b,
                            const FeatureMatrix& fb, const Thresholds& t, int bins = 16) {
  PairScore s{a, b};
  s.corr = domain_correlation(fa.data, fb.data);
  s.mi = domain_mi(fa.data, fb.data, bins);
  s.ortho = domain_orthogonality(fa.data, fb.data);
  s.verdict = premise_verdict(s, t);
  return s;
}

struct ComplementarityReport {
  std::vector<std::string> domains;
  std::vector<PairScore> pairs;  // (i, j), i < j in domain order
  std::vector<PairScore> complementary_set;
  std::optional<std::pair<std::string, std::string>> best_pair;
  std::vector<std::string> excluded;  // domains not complementary to the best pair
  std::vector<std::string> notes;
  Thresholds thresholds;
  int bins = 16;
};

// Pair minimizing mi + ortho, then |corr|, then tag order.
inline std::pair<std::string, std::string> select_best_pair(const ComplementarityReport& r) {
  if (r.complementary_set.empty()) throw NoComplementaryPair();
  const auto key = [](const PairScore& s) { return std::make_tuple(s.mi + s.ortho, std::abs(s.corr), s.a, s.b); };
  const auto best = std::min_element(r.complementary_set.begin(), r.complementary_set.end(),
                                     [&](const PairScore& x, const PairScore& y) { return key(x) < key(y); });
  return {best->a, best->b};
}

inline const PairScore& find_pair(const ComplementarityReport& r, const std::string& a, const std::string& b) {
  for (const auto& p : r.pairs)
    if ((p.a == a && p.b == b) || (p.a == b && p.b == a)) return p;
  throw InvalidInput("no score for pair " + a + "/" + b);
}

inline ComplementarityReport assess(const std::vector<std::pair<std::string, FeatureMatrix>>& domains,
                                    const Thresholds& t = {}, int bins = 16) {
  validate(t);
  ComplementarityReport r;
  r.thresholds = t;
  r.bins = bins;
  for (const auto& d : domains) r.domains.push_back(d.first);
  for (std::size_t i = 0; i < domains.size(); ++i)
    for (std::size_t j = i + 1; j < domains.size(); ++j) {
      r.pairs.push_back(score_pair(domains[i].first, domains[i].second, domains[j].first, domains[j].second, t, bins));
      if (r.pairs.back().verdict == Verdict::Complementary) r.complementary_set.push_back(r.pairs.back());
    }
  if (r.complementary_set.empty()) {
    r.notes.push_back("no pair met the complementarity thresholds");
    return r;
  }
  r.best_pair = select_best_pair(r);
  for (const auto& d : r.domains) {
    if (d == r.best_pair->first || d == r.best_pair->second) continue;
    if (find_pair(r, d, r.best_pair->first).verdict != Verdict::Complementary ||
        find_pair(r, d, r.best_pair->second).verdict != Verdict::Complementary) {
      r.excluded.push_back(d);
      r.notes.push_back("adding " + d + " is expected to increase complexity without a matching gain");
    }
  }
  return r;
}

inline nlohmann::json to_json(const PairScore& p) {
  return {{"a", p.a}, {"b", p.b}, {"corr", p.corr}, {"mi", p.mi}, {"ortho", p.ortho}, {"verdict", to_string(p.verdict)}};
}

inline nlohmann::json to_json(const Thresholds& t) {
  return {{"eps", t.eps}, {"delta", t.delta}, {"gamma", t.gamma}, {"tau_mi", t.tau_mi}, {"tau_ortho", t.tau_ortho}};
}

// Report plus symmetric heatmap matrices (diagonal left null).
inline nlohmann::json to_json(const ComplementarityReport& r) {
  const auto n = r.domains.size();
  auto grid = [&](auto field) {
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < n; ++j)
        row.push_back(i == j ? nlohmann::json(nullptr) : nlohmann::json(field(find_pair(r, r.domains[i], r.domains[j]))));
      m.push_back(std::move(row));
    }
    return m;
  };
  nlohmann::json pairs = nlohmann::json::array(), comp = nlohmann::json::array();
  for (const auto& p : r.pairs) pairs.push_back(to_json(p));
  for (const auto& p : r.complementary_set) comp.push_back(to_json(p));
  nlohmann::json j{{"domains", r.domains},
                   {"pairs", pairs},
                   {"complementary_set", comp},
                   {"best_pair", nullptr},
                   {"excluded", r.excluded},
                   {"notes", r.notes},
                   {"thresholds", to_json(r.thresholds)},
                   {"mi_bins", r.bins},
                   {"heatmap",
                    {{"corr", grid([](const PairScore& p) { return p.corr; })},
                     {"mi", grid([](const PairScore& p) { return p.mi; })},
                     {"ortho", grid([](const PairScore& p) { return p.ortho; })}}}};
  if (r.best_pair) j["best_pair"] = {r.best_pair->first, r.best_pair->second};
  return j;
}

inline std::string to_csv(const ComplementarityReport& r) {
  std::string out = "a,b,corr,mi,ortho,verdict\n";
  for (const auto& p : r.pairs)
    out += p.a + "," + p.b + "," + io::fmt(p.corr) + "," + io::fmt(p.mi) + "," + io::fmt(p.ortho) + "," +
           std::string(to_string(p.verdict)) + "\n";
  return out;
}

}  // namespace cfusion
