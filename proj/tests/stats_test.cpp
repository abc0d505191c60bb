#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cfusion/stats.hpp"

using namespace cfusion;

namespace {

struct Cells {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

// Direct counting over samples, one class at a time.
Cells count_cells(const std::vector<int>& t, const std::vector<int>& p, int c) {
  Cells k;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool is_t = t[i] == c, is_p = p[i] == c;
    k.tp += is_t && is_p;
    k.fp += !is_t && is_p;
    k.fn += is_t && !is_p;
    k.tn += !is_t && !is_p;
  }
  return k;
}

double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

void expect_matches_oracle(const std::vector<int>& t, const std::vector<int>& p, int classes) {
  const auto [cm, m] = evaluate(t, p, classes);
  ASSERT_EQ(cm.total(), static_cast<long>(t.size()));
  double hits = 0, wp = 0, wr = 0, wf = 0;
  for (std::size_t i = 0; i < t.size(); ++i) hits += t[i] == p[i];
  for (int c = 0; c < classes; ++c) {
    const auto k = count_cells(t, p, c);
    const double pr = safe_div(k.tp, k.tp + k.fp), rc = safe_div(k.tp, k.tp + k.fn);
    const double f1 = safe_div(2 * pr * rc, pr + rc);
    const auto& pc = m.per_class[static_cast<std::size_t>(c)];
    ASSERT_DOUBLE_EQ(pc.precision, pr);
    ASSERT_DOUBLE_EQ(pc.recall, rc);
    ASSERT_DOUBLE_EQ(pc.f1, f1);
    ASSERT_DOUBLE_EQ(pc.specificity, safe_div(k.tn, k.tn + k.fp));
    ASSERT_EQ(pc.support, k.tp + k.fn);
    ASSERT_EQ(pc.precision_undefined, k.tp + k.fp == 0);
    const double w = static_cast<double>(k.tp + k.fn) / static_cast<double>(t.size());
    wp += w * pr;
    wr += w * rc;
    wf += w * f1;
  }
  ASSERT_DOUBLE_EQ(m.accuracy, hits / static_cast<double>(t.size()));
  ASSERT_NEAR(m.weighted_precision, wp, 1e-12);
  ASSERT_NEAR(m.weighted_recall, wr, 1e-12);
  ASSERT_NEAR(m.weighted_f1, wf, 1e-12);
}

std::vector<int> digits(long code, int len, int base) {
  std::vector<int> v(static_cast<std::size_t>(len));
  for (auto& d : v) {
    d = static_cast<int>(code % base);
    code /= base;
  }
  return v;
}

std::vector<int> random_labels(Rng& rng, int n, int classes) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return v;
}

}  // namespace

TEST(Evaluate, PerfectPredictions) {
  const std::vector<int> y{0, 1, 2, 2, 1, 0, 3};
  const auto [cm, m] = evaluate(y, y);
  EXPECT_EQ(cm.classes(), 4);
  for (const auto& n : metric_names()) EXPECT_EQ(metric_value(m, n), 1.0) << n;
  EXPECT_FALSE(m.zero_division);
}

TEST(Evaluate, ExhaustiveShortVectorsMatchCounting) {
  // every (truth, prediction) pair up to length 5 over 3 classes
  for (int len = 1; len <= 5; ++len) {
    long total = 1;
    for (int i = 0; i < 2 * len; ++i) total *= 3;
    for (long code = 0; code < total; ++code) {
      const auto both = digits(code, 2 * len, 3);
      const std::vector<int> t(both.begin(), both.begin() + len), p(both.begin() + len, both.end());
      expect_matches_oracle(t, p, 3);
    }
  }
}

TEST(Evaluate, WeightedRecallEqualsAccuracy) {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(60)), c = 2 + static_cast<int>(rng.below(5));
    const auto t = random_labels(rng, n, c), p = random_labels(rng, n, c);
    const auto m = evaluate(t, p, c).second;
    EXPECT_NEAR(m.weighted_recall, m.accuracy, 1e-12);
  }
}

TEST(Evaluate, ZeroDenominatorFlagged) {
  const auto m = evaluate({0, 0, 1}, {0, 0, 0}, 3).second;
  EXPECT_TRUE(m.per_class[1].precision_undefined);
  EXPECT_EQ(m.per_class[1].precision, 0.0);
  EXPECT_TRUE(m.per_class[2].recall_undefined);
  EXPECT_TRUE(m.zero_division);
  // class 2 never appears, so macro averages skip it
  EXPECT_NEAR(m.macro_recall, 0.5, 1e-15);
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate({0, 1}, {0}), InvalidInput);
  EXPECT_THROW(evaluate({}, {}), InvalidInput);
  EXPECT_THROW(evaluate({0, 3}, {0, 1}, 3), InvalidInput);
  EXPECT_THROW(evaluate({0, -1}, {0, 1}, 3), InvalidInput);
  EXPECT_THROW(metric_value(MetricSet{}, "auc"), InvalidInput);
}

TEST(Evaluate, ReferenceRowShape) {
  // 48 samples of one class, all recalled, two false positives from 152 others
  std::vector<int> t(200, 1), p(200, 1);
  for (int i = 0; i < 48; ++i) t[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] = 0;
  p[100] = p[101] = 0;
  const auto c = evaluate(t, p).second.per_class[0];
  EXPECT_EQ(c.support, 48);
  EXPECT_NEAR(c.precision, 0.96, 1e-12);
  EXPECT_EQ(c.recall, 1.0);
  EXPECT_NEAR(c.f1, 0.98, 0.001);
  EXPECT_NEAR(c.specificity, 0.99, 0.005);
}

// ---------------------------------------------------------------------------

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> s{1, 2, 3, 4, 5};
  EXPECT_EQ(percentile_sorted(s, 0.0), 1.0);
  EXPECT_EQ(percentile_sorted(s, 1.0), 5.0);
  EXPECT_EQ(percentile_sorted(s, 0.5), 3.0);
  EXPECT_NEAR(percentile_sorted(s, 0.025), 1.1, 1e-15);
  EXPECT_NEAR(percentile_sorted(s, 0.975), 4.9, 1e-15);
}

TEST(Bootstrap, IdenticalModelsGiveZero) {
  Rng rng(2);
  const auto y = random_labels(rng, 50, 3), a = random_labels(rng, 50, 3);
  for (const auto& m : metric_names()) {
    const auto d = bootstrap_diff(y, a, a, m, {200, 7});
    EXPECT_EQ(d.mean_diff, 0.0);
    EXPECT_EQ(d.ci_lo, 0.0);
    EXPECT_EQ(d.ci_hi, 0.0);
    EXPECT_EQ(d.p_gt0, 0.0);
    EXPECT_EQ(d.p_le0, 1.0);
    EXPECT_EQ(d.p_eq0, 1.0);
  }
}

TEST(Bootstrap, DominanceGivesCertainty) {
  std::vector<int> y(30), wrong(30);
  for (int i = 0; i < 30; ++i) {
    y[static_cast<std::size_t>(i)] = i % 3;
    wrong[static_cast<std::size_t>(i)] = (i + 1) % 3;
  }
  const auto d = bayes_compare(y, y, wrong, {"accuracy"}, {500, 3}).front();
  EXPECT_EQ(d.p_gt0, 1.0);
  EXPECT_EQ(d.mean_diff, 1.0);
  for (double s : d.samples) EXPECT_GT(s, 0.0);
}

TEST(Bootstrap, MatchesExhaustiveEnumerationAtNFour) {
  const std::vector<int> y{0, 1, 1, 0}, a{0, 1, 0, 0}, b{1, 1, 0, 1};
  for (const std::string metric : {"accuracy", "weighted_f1"}) {
    double mean = 0, sq = 0;
    for (long code = 0; code < 256; ++code) {
      const auto idx = digits(code, 4, 4);
      std::vector<int> ys, as, bs;
      for (int i : idx) {
        ys.push_back(y[static_cast<std::size_t>(i)]);
        as.push_back(a[static_cast<std::size_t>(i)]);
        bs.push_back(b[static_cast<std::size_t>(i)]);
      }
      const double d = metric_value(evaluate(ys, as, 2).second, metric) - metric_value(evaluate(ys, bs, 2).second, metric);
      mean += d / 256;
      sq += d * d / 256;
    }
    const double sd = std::sqrt(sq - mean * mean);
    const auto r = bootstrap_diff(y, a, b, metric, {10000, 11});
    EXPECT_NEAR(r.mean_diff, mean, 3 * sd / 100) << metric;
  }
}

TEST(Bootstrap, AntisymmetricUnderSwap) {
  Rng rng(4);
  const auto y = random_labels(rng, 80, 4), a = random_labels(rng, 80, 4), b = random_labels(rng, 80, 4);
  for (const auto& m : metric_names()) {
    const auto ab = bootstrap_diff(y, a, b, m, {300, 5}), ba = bootstrap_diff(y, b, a, m, {300, 5});
    for (std::size_t i = 0; i < ab.samples.size(); ++i) ASSERT_EQ(ab.samples[i], -ba.samples[i]);
    EXPECT_NEAR(ab.mean_diff, -ba.mean_diff, 1e-15);
    EXPECT_NEAR(ab.ci_lo, -ba.ci_hi, 1e-15);
    EXPECT_NEAR(ab.ci_hi, -ba.ci_lo, 1e-15);
    EXPECT_NEAR(ab.p_gt0, ba.p_le0 - ba.p_eq0, 1e-12);
  }
}

TEST(Bootstrap, DeterministicAndThreadIndependent) {
  Rng rng(6);
  const auto y = random_labels(rng, 120, 3), a = random_labels(rng, 120, 3), b = random_labels(rng, 120, 3);
  const auto one = bootstrap_diff(y, a, b, "weighted_f1", {400, 9, 1});
  const auto four = bootstrap_diff(y, a, b, "weighted_f1", {400, 9, 4});
  EXPECT_EQ(one.samples, four.samples);
  EXPECT_EQ(one.samples, bootstrap_diff(y, a, b, "weighted_f1", {400, 9, 1}).samples);
  EXPECT_NE(one.samples, bootstrap_diff(y, a, b, "weighted_f1", {400, 10, 1}).samples);
}

TEST(Bootstrap, BayesSharesEngine) {
  Rng rng(7);
  const auto y = random_labels(rng, 60, 3), a = random_labels(rng, 60, 3), b = random_labels(rng, 60, 3);
  const auto all = bayes_compare(y, a, b, default_comparison_metrics(), {250, 12});
  for (const auto& d : all) {
    const auto single = bootstrap_diff(y, a, b, d.metric, {250, 12});
    EXPECT_EQ(d.samples, single.samples);
    EXPECT_EQ(d.mean_diff, single.mean_diff);
  }
  // a metric's stream does not depend on the other requested metrics
  EXPECT_EQ(bayes_compare(y, a, b, {"weighted_f1"}, {250, 12}).front().samples, all.back().samples);
}

TEST(Bootstrap, SummaryInvariants) {
  Rng rng(8);
  const auto y = random_labels(rng, 100, 3), a = random_labels(rng, 100, 3), b = random_labels(rng, 100, 3);
  const auto d = bootstrap_diff(y, a, b, "accuracy", {1000, 1});
  EXPECT_LE(d.ci_lo, d.mean_diff);
  EXPECT_GE(d.ci_hi, d.mean_diff);
  EXPECT_NEAR(d.p_le0 + d.p_gt0, 1.0, 1e-15);
  EXPECT_LE(d.p_eq0, d.p_le0);
  EXPECT_EQ(d.samples.size(), 1000u);
}

TEST(Bootstrap, Errors) {
  EXPECT_THROW(bootstrap_diff({0, 1}, {0, 1}, {0}, "accuracy", {}), InvalidInput);
  EXPECT_THROW(bootstrap_diff({0, 1}, {0, 1}, {0, 1}, "accuracy", {99, 0}), InvalidInput);
  EXPECT_THROW(bootstrap_diff({0, 1}, {0, 1}, {0, 1}, "kappa", {}), InvalidInput);
}

TEST(Bootstrap, PercentileIntervalCoverage) {
  // Percentile interval for the mean of n Gaussian draws, over 500 replications.
  Rng rng(13);
  const int reps = 500, n = 100;
  int covered = 0;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal(0.3, 1.0);
    auto s = resample_statistic(x.size(), 1000, static_cast<std::uint64_t>(r), 1, [&](const std::vector<std::size_t>& idx) {
      double m = 0;
      for (auto i : idx) m += x[i];
      return m / static_cast<double>(idx.size());
    });
    std::sort(s.begin(), s.end());
    covered += percentile_sorted(s, 0.025) <= 0.3 && 0.3 <= percentile_sorted(s, 0.975);
  }
  EXPECT_NEAR(static_cast<double>(covered) / reps, 0.95, 0.03);
}

// ---------------------------------------------------------------------------

TEST(Ablation, TableShapeOrderingAndDuplicates) {
  Rng rng(20);
  const auto y = random_labels(rng, 90, 4);
  auto noisy = [&](double keep) {
    auto p = y;
    for (auto& v : p)
      if (rng.uniform() > keep) v = static_cast<int>(rng.below(4));
    return p;
  };
  std::vector<NamedPredictions> models{{"1dcnn", noisy(0.8)}, {"2dcnn", noisy(0.6)}, {"transformer", noisy(0.6)},
                                       {"hybrid1", noisy(0.95)}, {"hybrid2", noisy(0.8)}};
  models.push_back({"hybrid1_copy", models[3].pred});
  AblationConfig cfg;
  cfg.bootstrap = {200, 3};
  cfg.pairs = {{"hybrid1", "2dcnn", "complementarity"}, {"hybrid2", "hybrid1", "redundancy"},
               {"hybrid1_copy", "hybrid1", "duplicate"}};
  const auto t = run_ablation(models, y, cfg);
  ASSERT_EQ(t.rows.size(), 6u);
  for (std::size_t i = 1; i < t.rows.size(); ++i)
    EXPECT_GE(t.rows[i - 1].metrics.accuracy, t.rows[i].metrics.accuracy);
  EXPECT_EQ(t.diffs.size(), 3 * cfg.metrics.size());
  for (const auto& d : t.diffs) {
    if (d.label != "duplicate") continue;
    for (double s : d.samples) EXPECT_EQ(s, 0.0);
  }
  EXPECT_EQ(t.diffs.front().comparison, "hybrid1 vs 2dcnn");
  const auto csv = ablation_to_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Ablation, Errors) {
  EXPECT_THROW(run_ablation({{"a", {0, 1}}}, {0, 1}, {}), InvalidInput);
  AblationConfig cfg;
  cfg.pairs = {{"a", "zzz", "x"}};
  EXPECT_THROW(run_ablation({{"a", {0, 1}}, {"b", {1, 1}}}, {0, 1}, cfg), InvalidInput);
}

TEST(Export, CsvJsonSvg) {
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1}, a{0, 1, 2, 0, 1, 1, 0, 1}, b{0, 0, 2, 1, 1, 2, 2, 1};
  auto diffs = bayes_compare(y, a, b, {"accuracy", "weighted_f1"}, {100, 1});
  for (auto& d : diffs) d.comparison = "A vs B";
  const auto csv = diffs_to_csv(diffs);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "comparison,label,metric,mean_diff,ci_lo,ci_hi,p_le0,p_gt0");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const auto j = to_json(diffs[0]);
  EXPECT_EQ(j["sorted_samples"].size(), 100u);
  EXPECT_TRUE(std::is_sorted(j["sorted_samples"].begin(), j["sorted_samples"].end()));
  const auto svg = diffs_to_svg(diffs);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
