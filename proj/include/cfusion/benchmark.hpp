#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfusion/common.hpp"
#include "cfusion/complementarity.hpp"
#include "cfusion/models.hpp"
#include "cfusion/nn.hpp"
#include "cfusion/pipeline.hpp"
#include "cfusion/stats.hpp"

namespace cfusion {

// Three feature domains over a 4-class label y = 2 * b2 + b1:
//   A carries b1, B carries b2 independently of A,
//   C = A * R + noise, a noisy linear copy of A with no information of its own.
struct DomainBenchConfig {
  // 1500 training rows keep the 16-bin plug-in MI bias near 0.07 nats.
  int n_train = 1500;
  int n_val = 500;
  int n_test = 500;
  int dims = 8;
  double separation = 2.0;  // class-mean offset along the signal direction, in noise sd
  double copy_noise = 0.5;
  int hidden = 32;
  int fusion_units = 64;
  // complementarity-aware penalty weights for the fused models
  double lambda_mi = 0.1;
  double lambda_ortho = 0.1;
  nn::TrainConfig train{3e-3, 60, 32, 10};
  nn::TrainConfig fusion_train{3e-3, 60, 32, 10};
};

struct DomainPartition {
  Eigen::MatrixXd a, b, c;
  std::vector<int> labels;
};

struct DomainBenchData {
  DomainPartition train, val, test;
};

inline DomainBenchData generate_domain_benchmark(const DomainBenchConfig& cfg, std::uint64_t seed) {
  if (cfg.dims < 2 || cfg.n_train < 8 || cfg.n_val < 1 || cfg.n_test < 1)
    throw InvalidInput("domain benchmark sizes are too small");
  Rng rng(hash_combine(seed, "domain-bench"));
  const int d = cfg.dims;
  auto unit = [&] {
    Eigen::VectorXd u(d);
    for (int i = 0; i < d; ++i) u(i) = rng.normal();
    return Eigen::VectorXd(u.normalized());
  };
  const Eigen::VectorXd ua = unit(), ub = unit();
  Eigen::MatrixXd r(d, d);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.normal() / std::sqrt(static_cast<double>(d));
  r += Eigen::MatrixXd::Identity(d, d);

  auto make = [&](int n) {
    DomainPartition p;
    p.a.resize(n, d);
    p.b.resize(n, d);
    p.c.resize(n, d);
    for (int i = 0; i < n; ++i) {
      const int y = static_cast<int>(rng.below(4));
      p.labels.push_back(y);
      const double s1 = (y & 1) ? 1.0 : -1.0, s2 = (y & 2) ? 1.0 : -1.0;
      for (int j = 0; j < d; ++j) {
        p.a(i, j) = rng.normal() + s1 * cfg.separation * ua(j);
        p.b(i, j) = rng.normal() + s2 * cfg.separation * ub(j);
      }
    }
    p.c = p.a * r;
    for (Eigen::Index i = 0; i < p.c.size(); ++i) p.c.data()[i] += cfg.copy_noise * rng.normal();
    return p;
  };
  DomainBenchData out;
  out.train = make(cfg.n_train);
  out.val = make(cfg.n_val);
  out.test = make(cfg.n_test);
  return out;
}

struct DomainBenchOutcome {
  // test predictions, keyed A, B, C, AB, ABC
  std::vector<std::string> names;
  std::vector<std::vector<int>> predictions;
  std::vector<double> accuracy;
  std::vector<int> test_labels;
  ComplementarityReport report;  // on unimodal deep features of the training partition

  double acc(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return accuracy[i];
    throw InvalidInput("unknown model " + name);
  }
  const std::vector<int>& pred(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return predictions[i];
    throw InvalidInput("unknown model " + name);
  }
};

// Trains one MLP encoder per domain, the (A, B) and (A, B, C) intermediate
// fusions with frozen trunks, and assesses complementarity on the encoders'
// penultimate features.
inline DomainBenchOutcome run_domain_benchmark(const DomainBenchConfig& cfg, std::uint64_t seed,
                                               const Thresholds& th = {}, int bins = 16) {
  const auto data = generate_domain_benchmark(cfg, seed);
  auto t = [](const Eigen::MatrixXd& m) { return nn::from_matrix(m); };
  const char* tags[] = {"A", "B", "C"};
  auto pick = [](const DomainPartition& p, int k) -> const Eigen::MatrixXd& { return k == 0 ? p.a : k == 1 ? p.b : p.c; };

  DomainBenchOutcome out;
  out.test_labels = data.test.labels;
  std::vector<Model> enc;
  std::vector<std::pair<std::string, FeatureMatrix>> deep;
  for (int k = 0; k < 3; ++k) {
    enc.push_back(build_mlp(cfg.dims, 4, cfg.hidden, hash_combine(seed, std::string("enc-") + tags[k])));
    auto tc = cfg.train;
    tc.seed = hash_combine(seed, std::string("train-") + tags[k]);
    nn::train(enc.back().net, {t(pick(data.train, k))}, data.train.labels, {t(pick(data.val, k))}, data.val.labels, tc);
    const auto pred = nn::argmax_rows(enc.back().net.predict({t(pick(data.test, k))}));
    out.names.push_back(tags[k]);
    out.accuracy.push_back(nn::accuracy(pred, data.test.labels));
    out.predictions.push_back(pred);
    deep.emplace_back(tags[k], extract_deep_features(enc.back(), {t(pick(data.train, k))}));
  }
  out.report = assess(deep, th, bins);

  ArchScale s;
  s.fusion_units = cfg.fusion_units;
  auto fuse = [&](std::vector<int> ks, const std::string& name) {
    std::vector<const Model*> br;
    for (int k : ks) br.push_back(&enc[static_cast<std::size_t>(k)]);
    auto hy = build_hybrid(br, 4, s, hash_combine(seed, "hybrid-" + name));
    auto inputs = [&](const DomainPartition& p) {
      std::vector<nn::Tensor> v;
      for (int k : ks) v.push_back(t(pick(p, k)));
      return v;
    };
    auto tc = cfg.fusion_train;
    tc.seed = hash_combine(seed, "train-" + name);
    nn::train(hy.net, inputs(data.train), data.train.labels, inputs(data.val), data.val.labels, tc,
              complementarity_aux(hy, cfg.lambda_mi, cfg.lambda_ortho));
    const auto pred = nn::argmax_rows(hy.net.predict(inputs(data.test)));
    out.names.push_back(name);
    out.accuracy.push_back(nn::accuracy(pred, data.test.labels));
    out.predictions.push_back(pred);
  };
  fuse({0, 1}, "AB");
  fuse({0, 1, 2}, "ABC");
  return out;
}

// ---------------------------------------------------------------------------
// Imbalanced ECG benchmark: the 2D model trained with and without ADASYN on the
// same patient split, scored on an independent class-balanced test cohort so
// every minority class has support.

struct AdasynBenchConfig {
  RunConfig run = default_adasyn_bench_run();
  std::size_t test_patients = 40;
  std::size_t test_signals_per_patient = 4;

  static RunConfig default_adasyn_bench_run() {
    RunConfig c = default_run_config();
    c.synthetic.n_patients = 60;
    c.synthetic.signals_per_patient = 6;
    c.synthetic.class_weights = {0.70, 0.12, 0.10, 0.08};
    c.synthetic.noise_sd = 0.3;
    c.synthetic.patient_jitter = 0.1;
    return c;
  }
};

struct AdasynBenchOutcome {
  int majority = 0;                 // largest class in the training partition
  double minority_f1_without = 0;   // mean F1 over the other classes
  double minority_f1_with = 0;
  MetricSet without, with;
  std::size_t synthetic_rows = 0;
};

inline double minority_macro_f1(const MetricSet& m, int majority) {
  double s = 0;
  int n = 0;
  for (std::size_t k = 0; k < m.per_class.size(); ++k)
    if (static_cast<int>(k) != majority) {
      s += m.per_class[k].f1;
      ++n;
    }
  return n ? s / n : 0.0;
}

inline AdasynBenchOutcome run_adasyn_benchmark(const AdasynBenchConfig& cfg, std::uint64_t seed) {
  AdasynBenchOutcome out;
  auto test_cfg = cfg.run.synthetic;
  test_cfg.n_patients = cfg.test_patients;
  test_cfg.signals_per_patient = cfg.test_signals_per_patient;
  test_cfg.class_weights.clear();
  test_cfg.seed = hash_combine(seed, "adasyn-bench-test");
  auto test = generate_synthetic(test_cfg);
  if (cfg.run.normalize) test = minmax_normalize(std::move(test));
  if (cfg.run.bandpass_enabled)
    for (auto& s : test.signals) s = bandpass(s, cfg.run.bandpass);

  for (int with = 0; with < 2; ++with) {
    RunConfig rc = cfg.run;
    rc.seed = seed;
    rc.adasyn_enabled = with == 1;
    const auto p = prepare_data(rc);
    const auto counts = p.split.train.class_counts();
    std::vector<int> original(counts.size(), 0);
    for (std::size_t i = 0; i < p.n_train_original; ++i) ++original[static_cast<std::size_t>(p.split.train.signals[i].label)];
    out.majority = static_cast<int>(std::max_element(original.begin(), original.end()) - original.begin());
    const auto tv = build_domain_views(test, rc.views, &p.train.frequency_scaler);
    const auto model = train_unimodal(ModelKind::TwoD, p, static_cast<int>(counts.size()), rc);
    const auto pred = predict_labels(model.model.net, {view_tensor(tv, ViewKind::TimeFrequency)});
    const auto m = evaluate(test.labels(), pred, static_cast<int>(counts.size())).second;
    (with ? out.with : out.without) = m;
    (with ? out.minority_f1_with : out.minority_f1_without) = minority_macro_f1(m, out.majority);
    if (with) out.synthetic_rows = p.split.train.size() - p.n_train_original;
  }
  return out;
}

}  // namespace cfusion
