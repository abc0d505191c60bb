#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cfusion/common.hpp"
#include "cfusion/dsp.hpp"

namespace cfusion {

struct AdasynConfig {
  int k = 5;
  double beta = 1.0;
  std::uint64_t seed = 0;
};

inline void validate(const AdasynConfig& c) {
  if (c.k < 1) throw InvalidInput("ADASYN k must be >= 1");
  if (!(c.beta > 0 && c.beta <= 1)) throw InvalidInput("ADASYN beta must be in (0, 1]");
}

// Where a synthetic row came from: row = x[base] + lambda * (x[neighbor] - x[base]).
struct Provenance {
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double lambda = 0.0;
};

struct AdasynResult {
  FeatureMatrix features;  // originals first, then synthetic rows
  std::vector<int> labels;
  std::vector<int> synth_counts;  // per class
  std::vector<Provenance> provenance;  // one per synthetic row, in row order
  std::vector<int> skipped_classes;    // minority classes with a single sample
  std::vector<double> hardness;        // normalized r_i per original row (0 for majority rows)
  std::size_t n_original = 0;

  bool is_synthetic(std::size_t row) const { return row >= n_original; }
};

namespace detail {

// Indices of the k nearest rows to `row` among `candidates` (excluding the row
// itself), by squared Euclidean distance; ties go to the lower index.
inline std::vector<std::size_t> nearest(const Eigen::MatrixXd& x, std::size_t row,
                                        const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(candidates.size());
  const auto r = static_cast<Eigen::Index>(row);
  for (auto c : candidates) {
    if (c == row) continue;
    d.emplace_back((x.row(static_cast<Eigen::Index>(c)) - x.row(r)).squaredNorm(), c);
  }
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<long>(k), d.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace detail

// Adaptive synthetic oversampling. Every class smaller than the majority is
// grown by (m_majority - m_class) * beta rows, distributed over its members in
// proportion to the share of other-class points among their k nearest
// neighbours. The random stream is consumed class by class, member by member.
inline AdasynResult adasyn(const FeatureMatrix& features, const std::vector<int>& labels, const AdasynConfig& cfg) {
  validate(cfg);
  validate(features);
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n) throw InvalidInput("labels and features differ in length");
  const int n_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) throw InvalidInput("negative label");
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::size_t present = 0, majority = 0;
  for (const auto& m : members) {
    if (!m.empty()) ++present;
    majority = std::max(majority, m.size());
  }
  if (present < 2) throw InvalidInput("ADASYN needs at least two classes");

  std::vector<std::size_t> everyone(n);
  std::iota(everyone.begin(), everyone.end(), 0);

  AdasynResult out;
  out.n_original = n;
  out.synth_counts.assign(static_cast<std::size_t>(n_classes), 0);
  out.hardness.assign(n, 0.0);
  out.labels = labels;
  std::vector<Eigen::RowVectorXd> synthetic;
  const Eigen::MatrixXd& x = features.data;
  Rng rng(cfg.seed);

  for (int cls = 0; cls < n_classes; ++cls) {
    const auto& own = members[static_cast<std::size_t>(cls)];
    if (own.empty() || own.size() >= majority) continue;
    if (own.size() < 2) {
      out.skipped_classes.push_back(cls);
      continue;
    }
    const double total = static_cast<double>(majority - own.size()) * cfg.beta;
    const auto k_all = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), n - 1);
    const auto k_own = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), own.size() - 1);

    std::vector<double> ratio(own.size());
    double ratio_sum = 0;
    for (std::size_t a = 0; a < own.size(); ++a) {
      const auto nn = detail::nearest(x, own[a], everyone, k_all);
      const auto foreign = std::count_if(nn.begin(), nn.end(), [&](std::size_t j) { return labels[j] != cls; });
      ratio[a] = static_cast<double>(foreign) / static_cast<double>(k_all);
      ratio_sum += ratio[a];
    }
    for (std::size_t a = 0; a < own.size(); ++a) {
      // A class with no foreign neighbours anywhere falls back to uniform weights.
      ratio[a] = ratio_sum > 0 ? ratio[a] / ratio_sum : 1.0 / static_cast<double>(own.size());
      out.hardness[own[a]] = ratio[a];
    }

    for (std::size_t a = 0; a < own.size(); ++a) {
      const auto g = static_cast<long>(std::round(ratio[a] * total));
      if (g <= 0) continue;
      const auto same = detail::nearest(x, own[a], own, k_own);
      const auto base = static_cast<Eigen::Index>(own[a]);
      for (long j = 0; j < g; ++j) {
        const std::size_t z = same[rng.below(same.size())];
        const double lambda = rng.uniform();
        synthetic.push_back(x.row(base) + lambda * (x.row(static_cast<Eigen::Index>(z)) - x.row(base)));
        out.provenance.push_back({own[a], z, lambda});
        out.labels.push_back(cls);
        ++out.synth_counts[static_cast<std::size_t>(cls)];
      }
    }
  }

  out.features = features;
  out.features.data.conservativeResize(static_cast<Eigen::Index>(n + synthetic.size()), Eigen::NoChange);
  for (std::size_t s = 0; s < synthetic.size(); ++s) out.features.data.row(static_cast<Eigen::Index>(n + s)) = synthetic[s];
  return out;
}

// ---------------------------------------------------------------------------
// Fidelity checks

struct ClassVariance {
  double real_variance = 0;
  double synthetic_variance = 0;
  bool real_undersized = false;       // fewer than 2 real members
  bool synthetic_undersized = false;  // fewer than 2 synthetic members
};

// Mean over feature dimensions of the per-dimension population variance,
// separately for real and synthetic members of each class.
inline std::vector<ClassVariance> intra_class_variance(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                                       const std::vector<bool>& synthetic, int n_classes) {
  if (labels.size() != static_cast<std::size_t>(x.rows()) || synthetic.size() != labels.size()) {
    throw InvalidInput("features, labels and synthetic mask differ in length");
  }
  auto subset_variance = [&](int cls, bool synth, bool& undersized) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls && synthetic[i] == synth) rows.push_back(static_cast<Eigen::Index>(i));
    }
    undersized = rows.size() < 2;
    if (undersized) return 0.0;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
    const Eigen::RowVectorXd mean = sub.colwise().mean();
    return (sub.rowwise() - mean).array().square().colwise().sum().mean() / static_cast<double>(rows.size());
  };
  std::vector<ClassVariance> out(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    auto& v = out[static_cast<std::size_t>(c)];
    v.real_variance = subset_variance(c, false, v.real_undersized);
    v.synthetic_variance = subset_variance(c, true, v.synthetic_undersized);
  }
  return out;
}

inline std::vector<ClassVariance> intra_class_variance(const AdasynResult& r, int n_classes) {
  std::vector<bool> mask(r.labels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = r.is_synthetic(i);
  return intra_class_variance(r.features.data, r.labels, mask, n_classes);
}

inline constexpr double kCovarianceRidge = 1e-6;

namespace detail {

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

// Principal square root of a symmetric PSD matrix; negative eigenvalues are clipped.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between Gaussian fits of two samples:
// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw InvalidInput("Frechet distance needs equal feature dimensions");
  if (a.rows() < 2 || b.rows() < 2) throw InvalidInput("Frechet distance needs at least 2 rows per sample");
  const Eigen::Index d = a.cols();
  const Eigen::MatrixXd ridge = kCovarianceRidge * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = detail::covariance(a) + ridge;
  const Eigen::MatrixXd sb = detail::covariance(b) + ridge;
  const Eigen::MatrixXd root_a = detail::sqrt_psd(sa);
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.colwise().mean() - b.colwise().mean()).squaredNorm();
  return std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * cross);
}

inline double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) { return frechet_distance(a.data, b.data); }

struct FidelityReport {
  std::vector<std::string> classes;
  std::vector<double> real_variance;
  std::vector<double> synthetic_variance;
  double fid = 0.0;
  std::vector<int> synth_counts;

  bool operator==(const FidelityReport&) const = default;
};

inline FidelityReport make_fidelity_report(const std::vector<std::string>& classes, const std::vector<ClassVariance>& vars,
                                           double fid, const std::vector<int>& synth_counts) {
  FidelityReport r;
  r.classes = classes;
  for (const auto& v : vars) {
    r.real_variance.push_back(v.real_variance);
    r.synthetic_variance.push_back(v.synthetic_variance);
  }
  r.fid = fid;
  r.synth_counts = synth_counts;
  r.synth_counts.resize(classes.size(), 0);
  return r;
}

// Radar-chart payload. Keys: `classes`, `real_variance`, `synthetic_variance`,
// `fid`, `synth_counts`, plus `axes`/`series` laid out for direct plotting.
inline nlohmann::json radar_export(const FidelityReport& r) {
  if (r.real_variance.size() != r.classes.size() || r.synthetic_variance.size() != r.classes.size()) {
    throw InvalidInput("fidelity report is incomplete");
  }
  nlohmann::json j;
  j["schema"] = "cfusion-radar/1";
  j["classes"] = r.classes;
  j["real_variance"] = r.real_variance;
  j["synthetic_variance"] = r.synthetic_variance;
  j["fid"] = r.fid;
  j["synth_counts"] = r.synth_counts;
  j["axes"] = r.classes;
  j["series"] = nlohmann::json::array({
      {{"name", "real"}, {"values", r.real_variance}},
      {{"name", "synthetic"}, {"values", r.synthetic_variance}},
  });
  return j;
}

inline FidelityReport radar_import(const nlohmann::json& j) {
  FidelityReport r;
  r.classes = j.at("classes").get<std::vector<std::string>>();
  r.real_variance = j.at("real_variance").get<std::vector<double>>();
  r.synthetic_variance = j.at("synthetic_variance").get<std::vector<double>>();
  r.fid = j.at("fid").get<double>();
  r.synth_counts = j.at("synth_counts").get<std::vector<int>>();
  return r;
}

}  // namespace cfusion
