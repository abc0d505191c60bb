#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfusion/balance.hpp"
#include "cfusion/common.hpp"
#include "cfusion/complementarity.hpp"
#include "cfusion/dsp.hpp"
#include "cfusion/ingest.hpp"
#include "cfusion/io.hpp"
#include "cfusion/models.hpp"
#include "cfusion/nn.hpp"
#include "cfusion/stats.hpp"

namespace cfusion {

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string run_name;  // empty: run-<UTC timestamp>
  int threads = 1;

  std::string source = "synthetic";  // synthetic | directory
  std::string data_path;
  double sample_rate = 100.0;  // directory source, when no manifest gives one
  std::size_t image_len = 128;
  bool normalize = true;
  SynthConfig synthetic;

  SplitSpec split;
  bool bandpass_enabled = true;
  BandpassSpec bandpass;
  ViewConfig views;

  bool adasyn_enabled = true;
  int adasyn_k = 5;
  double adasyn_beta = 1.0;

  ArchScale scale;
  nn::TrainConfig train;
  nn::TrainConfig fusion_train;
  double lambda_mi = 0.1;
  double lambda_ortho = 0.1;
  bool finetune = false;

  Thresholds thresholds;
  int mi_bins = 0;  // 0: largest count <= 16 whose independence bias stays under 0.05 nats
  int bootstrap_iterations = 1000;
};

inline RunConfig default_run_config() {
  RunConfig c;
  c.synthetic.n_patients = 48;
  c.synthetic.signals_per_patient = 8;
  c.split.stratify = true;
  c.train = {2e-3, 25, 32, 6};
  c.fusion_train = {2e-3, 25, 32, 6};
  return c;
}

namespace detail {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + "has the wrong type");
    }
  }

  template <typename F>
  void object(const std::string& key, F&& read) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    ConfigReader sub(j_.at(key), path_.empty() ? key : path_ + "." + key);
    read(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + (path_.empty() ? "" : ".") + k + "'");
  }

 private:
  std::string where(const std::string& key) const {
    const std::string full = path_.empty() ? key : key.empty() ? path_ : path_ + "." + key;
    return "config key '" + full + "' ";
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_train(ConfigReader& r, nn::TrainConfig& t) {
  r.get("lr", t.lr);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("patience", t.patience);
}

inline nlohmann::json train_json(const nn::TrainConfig& t) {
  return {{"lr", t.lr}, {"epochs", t.epochs}, {"batch_size", t.batch_size}, {"patience", t.patience}};
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.source != "synthetic" && c.source != "directory") fail("data.source must be 'synthetic' or 'directory'");
  if (c.source == "directory" && c.data_path.empty()) fail("data.path is required for a directory source");
  if (c.threads < 1) fail("threads must be >= 1");
  if (c.mi_bins != 0 && c.mi_bins < 2) fail("complementarity.mi_bins must be 0 (auto) or >= 2");
  if (c.bootstrap_iterations < 100) fail("bootstrap.iterations must be >= 100");
  if (c.lambda_mi < 0 || c.lambda_ortho < 0) fail("penalty weights must be >= 0");
  try {
    validate(c.split);
    if (c.source == "synthetic") validate(c.synthetic);
    if (c.bandpass_enabled) validate(c.bandpass, c.source == "synthetic" ? c.synthetic.sample_rate : c.sample_rate);
    validate(AdasynConfig{c.adasyn_k, c.adasyn_beta, 0});
    validate(c.scale);
    validate(c.train);
    validate(c.fusion_train);
    validate(c.thresholds);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    fail(e.detail());
  }
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = default_run_config();
  detail::ConfigReader r(j, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("run_name", c.run_name);
  r.get("threads", c.threads);
  r.object("data", [&](detail::ConfigReader& d) {
    d.get("source", c.source);
    d.get("path", c.data_path);
    d.get("sample_rate", c.sample_rate);
    d.get("image_len", c.image_len);
    d.get("normalize", c.normalize);
    d.object("synthetic", [&](detail::ConfigReader& s) {
      s.get("n_patients", c.synthetic.n_patients);
      s.get("signals_per_patient", c.synthetic.signals_per_patient);
      s.get("length", c.synthetic.length);
      s.get("sample_rate", c.synthetic.sample_rate);
      s.get("beat_hz", c.synthetic.beat_hz);
      s.get("noise_sd", c.synthetic.noise_sd);
      s.get("patient_jitter", c.synthetic.patient_jitter);
      s.get("class_weights", c.synthetic.class_weights);
    });
  });
  r.object("split", [&](detail::ConfigReader& s) {
    s.get("train_frac", c.split.train_frac);
    s.get("val_frac", c.split.val_frac);
    s.get("test_frac", c.split.test_frac);
    s.get("group_by_patient", c.split.group_by_patient);
    s.get("stratify", c.split.stratify);
  });
  r.object("bandpass", [&](detail::ConfigReader& b) {
    b.get("enabled", c.bandpass_enabled);
    b.get("low_hz", c.bandpass.low_hz);
    b.get("high_hz", c.bandpass.high_hz);
    b.get("transition_hz", c.bandpass.transition_hz);
  });
  r.object("views", [&](detail::ConfigReader& v) {
    v.get("fft_bins", c.views.fft_bins);
    v.object("scalogram", [&](detail::ConfigReader& s) {
      s.get("n_scales", c.views.scalogram.n_scales);
      s.get("rows", c.views.scalogram.out_rows);
      s.get("cols", c.views.scalogram.out_cols);
      s.get("min_hz", c.views.scalogram.min_hz);
      s.get("max_hz", c.views.scalogram.max_hz);
      s.get("omega0", c.views.scalogram.omega0);
      s.get("normalize", c.views.scalogram.normalize);
    });
  });
  r.object("adasyn", [&](detail::ConfigReader& a) {
    a.get("enabled", c.adasyn_enabled);
    a.get("k", c.adasyn_k);
    a.get("beta", c.adasyn_beta);
  });
  r.object("models", [&](detail::ConfigReader& m) {
    m.object("scale", [&](detail::ConfigReader& s) {
      s.get("width_mult", c.scale.width_mult);
      s.get("heads", c.scale.heads);
      s.get("key_dim", c.scale.key_dim);
      s.get("ffn_units", c.scale.ffn_units);
      s.get("fusion_units", c.scale.fusion_units);
      s.get("batch_norm", c.scale.batch_norm);
    });
    m.object("train", [&](detail::ConfigReader& t) { detail::read_train(t, c.train); });
    m.object("fusion_train", [&](detail::ConfigReader& t) { detail::read_train(t, c.fusion_train); });
    m.get("lambda_mi", c.lambda_mi);
    m.get("lambda_ortho", c.lambda_ortho);
    m.get("finetune", c.finetune);
  });
  r.object("complementarity", [&](detail::ConfigReader& k) {
    k.object("thresholds", [&](detail::ConfigReader& t) {
      t.get("eps", c.thresholds.eps);
      t.get("delta", c.thresholds.delta);
      t.get("gamma", c.thresholds.gamma);
      t.get("tau_mi", c.thresholds.tau_mi);
      t.get("tau_ortho", c.thresholds.tau_ortho);
    });
    k.get("mi_bins", c.mi_bins);
  });
  r.object("bootstrap", [&](detail::ConfigReader& b) { b.get("iterations", c.bootstrap_iterations); });
  r.finish();
  validate(c);
  return c;
}

// Fully resolved config; run_config_from_json(to_json(c)) == c.
inline nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  const auto& sc = c.views.scalogram;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"run_name", c.run_name},
      {"threads", c.threads},
      {"data",
       {{"source", c.source},
        {"path", c.data_path},
        {"sample_rate", c.sample_rate},
        {"image_len", c.image_len},
        {"normalize", c.normalize},
        {"synthetic",
         {{"n_patients", s.n_patients},
          {"signals_per_patient", s.signals_per_patient},
          {"length", s.length},
          {"sample_rate", s.sample_rate},
          {"beat_hz", s.beat_hz},
          {"noise_sd", s.noise_sd},
          {"patient_jitter", s.patient_jitter},
          {"class_weights", s.class_weights}}}}},
      {"split",
       {{"train_frac", c.split.train_frac},
        {"val_frac", c.split.val_frac},
        {"test_frac", c.split.test_frac},
        {"group_by_patient", c.split.group_by_patient},
        {"stratify", c.split.stratify}}},
      {"bandpass",
       {{"enabled", c.bandpass_enabled},
        {"low_hz", c.bandpass.low_hz},
        {"high_hz", c.bandpass.high_hz},
        {"transition_hz", c.bandpass.transition_hz}}},
      {"views",
       {{"fft_bins", c.views.fft_bins},
        {"scalogram",
         {{"n_scales", sc.n_scales},
          {"rows", sc.out_rows},
          {"cols", sc.out_cols},
          {"min_hz", sc.min_hz},
          {"max_hz", sc.max_hz},
          {"omega0", sc.omega0},
          {"normalize", sc.normalize}}}}},
      {"adasyn", {{"enabled", c.adasyn_enabled}, {"k", c.adasyn_k}, {"beta", c.adasyn_beta}}},
      {"models",
       {{"scale",
         {{"width_mult", c.scale.width_mult},
          {"heads", c.scale.heads},
          {"key_dim", c.scale.key_dim},
          {"ffn_units", c.scale.ffn_units},
          {"fusion_units", c.scale.fusion_units},
          {"batch_norm", c.scale.batch_norm}}},
        {"train", detail::train_json(c.train)},
        {"fusion_train", detail::train_json(c.fusion_train)},
        {"lambda_mi", c.lambda_mi},
        {"lambda_ortho", c.lambda_ortho},
        {"finetune", c.finetune}}},
      {"complementarity", {{"thresholds", to_json(c.thresholds)}, {"mi_bins", c.mi_bins}}},
      {"bootstrap", {{"iterations", c.bootstrap_iterations}}},
  };
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(e.detail());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Stages

// Runs `f`, prefixing any library error with the stage name while keeping
// its type (the CLI maps types to exit codes).
template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  const auto msg = [&](const Error& e) { return "stage '" + stage + "': " + e.detail(); };
  try {
    return f();
  } catch (const NoComplementaryPair&) {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(msg(e));
  } catch (const ConfigError& e) {
    throw ConfigError(msg(e));
  } catch (const ShapeError& e) {
    throw ShapeError(msg(e));
  } catch (const DegenerateInput& e) {
    throw DegenerateInput(msg(e));
  } catch (const BuildError& e) {
    throw BuildError(msg(e));
  } catch (const StateError& e) {
    throw StateError(msg(e));
  } catch (const InvalidInput& e) {
    throw InvalidInput(msg(e));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("stage '" + stage + "': " + e.what());
  }
}

using Logger = std::function<void(const std::string&)>;

inline LabeledDataset load_dataset(const RunConfig& c) {
  LabeledDataset d;
  if (c.source == "synthetic") {
    auto s = c.synthetic;
    s.seed = hash_combine(c.seed, "synthetic");
    d = generate_synthetic(s);
  } else {
    d = read_dataset_dir(c.data_path, c.sample_rate, c.image_len);
  }
  validate(d);
  return c.normalize ? minmax_normalize(std::move(d)) : d;
}

struct PreparedData {
  Split split;                       // train holds originals first, then synthetic signals
  std::size_t n_train_original = 0;
  std::vector<Provenance> provenance;  // per synthetic training signal
  std::vector<int> synth_counts;
  std::optional<FidelityReport> fidelity;            // in signal space
  std::optional<FidelityReport> fidelity_scalogram;  // same rows, flattened scalograms
  DomainViews train, val, test;
};

// Load, split by patient, band-pass, oversample the training partition and
// build the three aligned domain views. Only training rows feed ADASYN and
// the frequency scaler.
inline PreparedData prepare_data(const RunConfig& c, const Logger& log = {}) {
  PreparedData p;
  const auto data = run_stage("ingest", [&] { return load_dataset(c); });
  p.split = run_stage("split", [&] {
    auto spec = c.split;
    spec.seed = hash_combine(c.seed, "split");
    return split_by_patient(data, spec);
  });
  if (c.bandpass_enabled)
    run_stage("bandpass", [&] {
      for (auto* part : {&p.split.train, &p.split.val, &p.split.test})
        for (auto& s : part->signals) s = bandpass(s, c.bandpass);
    });
  p.n_train_original = p.split.train.size();
  p.synth_counts.assign(static_cast<std::size_t>(data.num_classes()), 0);
  if (c.adasyn_enabled)
    run_stage("adasyn", [&] {
      auto& train = p.split.train;
      FeatureMatrix x;
      x.domain = Domain::Time;
      x.data.resize(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(train.signals.front().size()));
      for (std::size_t i = 0; i < train.size(); ++i)
        for (std::size_t k = 0; k < train.signals[i].size(); ++k)
          x.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = train.signals[i].samples[k];
      const auto res = adasyn(x, train.labels(), {c.adasyn_k, c.adasyn_beta, hash_combine(c.seed, "adasyn")});
      for (std::size_t r = res.n_original; r < res.labels.size(); ++r) {
        const auto& pr = res.provenance[r - res.n_original];
        Signal1D s;
        s.sample_rate = train.signals[pr.base].sample_rate;
        s.label = res.labels[r];
        s.patient_id = "synthetic";
        s.source_id = "syn" + std::to_string(r - res.n_original) + "<" + train.signals[pr.base].source_id + ">";
        const auto row = res.features.data.row(static_cast<Eigen::Index>(r));
        s.samples.assign(row.data(), row.data() + row.size());
        train.signals.push_back(std::move(s));
      }
      p.provenance = res.provenance;
      p.synth_counts = res.synth_counts;
      p.synth_counts.resize(static_cast<std::size_t>(data.num_classes()), 0);
      if (res.labels.size() > res.n_original) {
        const auto vars = intra_class_variance(res, data.num_classes());
        Eigen::MatrixXd real = res.features.data.topRows(static_cast<Eigen::Index>(res.n_original));
        Eigen::MatrixXd synth = res.features.data.bottomRows(static_cast<Eigen::Index>(res.labels.size() - res.n_original));
        const double fid = synth.rows() >= 2 ? frechet_distance(real, synth) : 0.0;
        p.fidelity = make_fidelity_report(data.class_names, vars, fid, p.synth_counts);
      }
    });
  if (log)
    log("data: " + std::to_string(p.n_train_original) + " train (+" + std::to_string(p.split.train.size() - p.n_train_original) +
        " synthetic), " + std::to_string(p.split.val.size()) + " val, " + std::to_string(p.split.test.size()) + " test");
  run_stage("views", [&] {
    p.train = build_domain_views(p.split.train, c.views);
    p.val = build_domain_views(p.split.val, c.views, &p.train.frequency_scaler);
    p.test = build_domain_views(p.split.test, c.views, &p.train.frequency_scaler);
  });
  if (p.fidelity)
    run_stage("fidelity", [&] {
      const auto& tf = p.train.time_frequency;
      const auto cells = tf.front().power.size();
      Eigen::MatrixXd x(static_cast<Eigen::Index>(tf.size()), cells);
      for (std::size_t i = 0; i < tf.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(tf[i].power.data(), cells);
      std::vector<bool> synth(tf.size());
      for (std::size_t i = p.n_train_original; i < synth.size(); ++i) synth[i] = true;
      const auto n_real = static_cast<Eigen::Index>(p.n_train_original);
      const auto vars = intra_class_variance(x, p.split.train.labels(), synth, data.num_classes());
      const double fid = x.rows() - n_real >= 2 ? frechet_distance(x.topRows(n_real), x.bottomRows(x.rows() - n_real)) : 0.0;
      p.fidelity_scalogram = make_fidelity_report(data.class_names, vars, fid, p.synth_counts);
    });
  return p;
}

// Which view feeds which architecture.
enum class ViewKind { Time, Frequency, TimeFrequency };

inline ViewKind view_of(ModelKind k) {
  switch (k) {
    case ModelKind::OneD: return ViewKind::Time;
    case ModelKind::Transformer: return ViewKind::Frequency;
    case ModelKind::TwoD: return ViewKind::TimeFrequency;
    case ModelKind::Mlp: break;
  }
  throw InvalidInput("no signal view for an MLP");
}

inline std::string domain_tag(ModelKind k) {
  switch (view_of(k)) {
    case ViewKind::Time: return "time";
    case ViewKind::Frequency: return "frequency";
    case ViewKind::TimeFrequency: return "time_frequency";
  }
  return "";
}

// Rows [begin, end) of a view as a network input tensor.
inline nn::Tensor view_tensor(const DomainViews& v, ViewKind kind, std::size_t begin = 0, std::size_t end = SIZE_MAX) {
  end = std::min(end, v.size());
  const auto n = static_cast<int>(end - begin);
  if (kind == ViewKind::TimeFrequency) {
    const auto& first = v.time_frequency.front().power;
    const int r = static_cast<int>(first.rows()), c = static_cast<int>(first.cols());
    nn::Tensor t{{n, r, c, 1}, std::vector<double>(static_cast<std::size_t>(n) * static_cast<std::size_t>(r * c))};
    for (std::size_t i = begin; i < end; ++i)
      std::copy(v.time_frequency[i].power.data(), v.time_frequency[i].power.data() + r * c,
                t.data.begin() + static_cast<std::ptrdiff_t>((i - begin) * static_cast<std::size_t>(r * c)));
    return t;
  }
  const auto& m = kind == ViewKind::Time ? v.time.data : v.frequency.data;
  const int d = static_cast<int>(m.cols());
  nn::Tensor t{{n, d, 1}, std::vector<double>(static_cast<std::size_t>(n) * static_cast<std::size_t>(d))};
  for (std::size_t i = begin; i < end; ++i)
    for (int k = 0; k < d; ++k)
      t.data[(i - begin) * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] = m(static_cast<Eigen::Index>(i), k);
  return t;
}

inline Model build_for_view(ModelKind kind, const DomainViews& v, int classes, const ArchScale& s, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::OneD: return build_1dcnn(static_cast<int>(v.time.cols()), classes, s, seed);
    case ModelKind::Transformer: return build_cnn_transformer(static_cast<int>(v.frequency.cols()), classes, s, seed);
    case ModelKind::TwoD: {
      const auto& g = v.time_frequency.front().power;
      return build_2dcnn(static_cast<int>(g.rows()), static_cast<int>(g.cols()), classes, s, seed);
    }
    case ModelKind::Mlp: break;
  }
  throw BuildError("MLP models are not built from signal views");
}

inline Model model_from_net(ModelKind kind, nn::Net net) {
  return Model{std::move(net), kind, "penultimate", kind == ModelKind::TwoD ? "trunk" : "penultimate"};
}

struct TrainedModel {
  std::string name;
  Model model;
  nn::History history;
};

inline const std::vector<ModelKind>& unimodal_kinds() {
  static const std::vector<ModelKind> k{ModelKind::OneD, ModelKind::TwoD, ModelKind::Transformer};
  return k;
}

inline ModelKind parse_model_kind(const std::string& name) {
  for (auto k : unimodal_kinds())
    if (to_string(k) == name) return k;
  throw ConfigError("unknown model '" + name + "' (expected 1dcnn, 2dcnn or transformer)");
}

inline TrainedModel train_unimodal(ModelKind kind, const PreparedData& p, int classes, const RunConfig& c) {
  const std::string name(to_string(kind));
  return run_stage("train-" + name, [&] {
    TrainedModel t{name, build_for_view(kind, p.train, classes, c.scale, hash_combine(c.seed, "model-" + name)), {}};
    auto tc = c.train;
    tc.seed = hash_combine(c.seed, "train-" + name);
    const auto v = view_of(kind);
    t.history = nn::train(t.model.net, {view_tensor(p.train, v)}, p.split.train.labels(), {view_tensor(p.val, v)},
                          p.split.val.labels(), tc);
    return t;
  });
}

inline std::vector<int> predict_labels(const nn::Net& net, const std::vector<nn::Tensor>& inputs) {
  return nn::argmax_rows(net.predict(inputs));
}

// MI bin count: `requested`, or with 0 the largest b <= 16 such that the
// plug-in bias under independence, about (b - 1)^2 / 2n, stays below 0.05
// nats. Always satisfies n >= 8 b when n >= 16.
inline int resolve_mi_bins(int requested, std::size_t n) {
  if (requested > 0) return requested;
  int b = 16;
  while (b > 2 && ((b - 1) * (b - 1) > 0.1 * static_cast<double>(n) || 8 * static_cast<std::size_t>(b) > n)) --b;
  return b;
}

struct FusionPlan {
  ComplementarityReport report;
  int bins = 0;
  std::vector<ModelKind> pair;  // empty: no complementary pair
};

// Scores the unimodal penultimate features on the original training rows
// and picks the hybrid-1 pair.
inline FusionPlan plan_fusion(const std::vector<TrainedModel>& unimodal, const PreparedData& p, const RunConfig& c) {
  return run_stage("complementarity", [&] {
    FusionPlan plan;
    std::vector<std::pair<std::string, FeatureMatrix>> deep;
    for (const auto& t : unimodal) {
      const auto v = view_of(t.model.kind);
      deep.emplace_back(domain_tag(t.model.kind),
                        extract_deep_features(t.model, {view_tensor(p.train, v, 0, p.n_train_original)}));
    }
    plan.bins = resolve_mi_bins(c.mi_bins, p.n_train_original);
    plan.report = assess(deep, c.thresholds, plan.bins);
    if (plan.report.best_pair)
      for (const auto& t : unimodal) {
        const auto tag = domain_tag(t.model.kind);
        if (tag == plan.report.best_pair->first || tag == plan.report.best_pair->second) plan.pair.push_back(t.model.kind);
      }
    return plan;
  });
}

struct TrainedHybrid {
  std::string name;
  Hybrid hybrid;
  std::vector<ModelKind> kinds;
  nn::History history;
};

inline std::vector<nn::Tensor> hybrid_inputs(const std::vector<ModelKind>& kinds, const DomainViews& v) {
  std::vector<nn::Tensor> in;
  for (auto k : kinds) in.push_back(view_tensor(v, view_of(k)));
  return in;
}

inline TrainedHybrid train_hybrid(const std::string& name, const std::vector<const TrainedModel*>& branches,
                                  const PreparedData& p, int classes, const RunConfig& c) {
  return run_stage("fuse-" + name, [&] {
    std::vector<const Model*> models;
    std::vector<ModelKind> kinds;
    for (const auto* b : branches) {
      models.push_back(&b->model);
      kinds.push_back(b->model.kind);
    }
    TrainedHybrid t{name, build_hybrid(models, classes, c.scale, hash_combine(c.seed, "model-" + name), c.finetune), kinds, {}};
    auto tc = c.fusion_train;
    tc.seed = hash_combine(c.seed, "train-" + name);
    t.history = nn::train(t.hybrid.net, hybrid_inputs(kinds, p.train), p.split.train.labels(), hybrid_inputs(kinds, p.val),
                          p.split.val.labels(), tc, complementarity_aux(t.hybrid, c.lambda_mi, c.lambda_ortho));
    return t;
  });
}

// ---------------------------------------------------------------------------
// Artifacts

// 64-bit FNV-1a, hex encoded; identifies artifact contents in the manifest.
inline std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string history_csv(const nn::History& h) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : h.epochs)
    out += std::to_string(e.epoch) + "," + io::fmt(e.train_loss) + "," + io::fmt(e.train_acc) + "," + io::fmt(e.val_loss) +
           "," + io::fmt(e.val_acc) + "\n";
  return out;
}

inline std::string utc_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "run-%Y%m%d-%H%M%S", &tm);
  return buf;
}

struct RunResult {
  std::filesystem::path dir;
  AblationTable ablation;
  FusionPlan plan;
  bool fallback = false;  // no complementary pair: hybrid1 is the best unimodal model
  nlohmann::json manifest;
};

// One complete experiment. Every artifact lands under <output_dir>/<run>;
// CSV and JSON contents depend only on the config.
inline RunResult run_pipeline(const RunConfig& cfg, const Logger& log = {}) {
  namespace fs = std::filesystem;
  validate(cfg);
  RunResult res;
  res.dir = fs::path(cfg.output_dir) / (cfg.run_name.empty() ? utc_stamp() : cfg.run_name);
  std::vector<std::string> written;
  auto put = [&](const std::string& rel, const std::string& content) {
    io::write_file(res.dir / rel, content);
    written.push_back(rel);
  };
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  try {
    fs::create_directories(res.dir);
  } catch (const fs::filesystem_error& e) {
    throw InvalidInput(std::string("cannot create run directory: ") + e.what());
  }
  {
    // placement keys are left out so reruns elsewhere stay byte-identical
    auto cj = to_json(cfg);
    cj.erase("output_dir");
    cj.erase("run_name");
    put("config.json", cj.dump(2) + "\n");
  }

  const auto p = prepare_data(cfg, log);
  const int classes = p.split.train.num_classes();

  // Partition and provenance record for leakage audits.
  {
    nlohmann::json split;
    for (const auto& [name, part] : {std::pair<std::string, const LabeledDataset*>{"train", &p.split.train},
                                     {"val", &p.split.val},
                                     {"test", &p.split.test}}) {
      std::set<std::string> patients;
      for (std::size_t i = 0; i < part->size(); ++i)
        if (name != "train" || i < p.n_train_original) patients.insert(part->signals[i].patient_id);
      split[name] = {{"rows", part->size()}, {"patients", patients}, {"class_counts", part->class_counts()}};
    }
    nlohmann::json synth = nlohmann::json::array();
    for (std::size_t s = 0; s < p.provenance.size(); ++s) {
      const auto& pr = p.provenance[s];
      synth.push_back({{"row", p.n_train_original + s},
                       {"base", p.split.train.signals[pr.base].source_id},
                       {"neighbor", p.split.train.signals[pr.neighbor].source_id},
                       {"lambda", pr.lambda}});
    }
    split["train"]["original_rows"] = p.n_train_original;
    split["synthetic"] = synth;
    split["synth_counts"] = p.synth_counts;
    put("data/split.json", split.dump(2) + "\n");
    if (p.fidelity)
      put("fidelity.json",
          nlohmann::json{{"signal", radar_export(*p.fidelity)}, {"scalogram", radar_export(*p.fidelity_scalogram)}}.dump(2) + "\n");
  }

  std::vector<TrainedModel> unimodal;
  for (auto k : unimodal_kinds()) {
    say("training " + std::string(to_string(k)));
    unimodal.push_back(train_unimodal(k, p, classes, cfg));
  }
  res.plan = plan_fusion(unimodal, p, cfg);
  put("complementarity.json", to_json(res.plan.report).dump(2) + "\n");
  put("complementarity.csv", to_csv(res.plan.report));

  std::vector<TrainedHybrid> hybrids;
  if (res.plan.pair.size() == 2) {
    std::vector<const TrainedModel*> br;
    for (const auto& t : unimodal)
      if (std::find(res.plan.pair.begin(), res.plan.pair.end(), t.model.kind) != res.plan.pair.end()) br.push_back(&t);
    say("training hybrid1 (" + domain_tag(br[0]->model.kind) + " + " + domain_tag(br[1]->model.kind) + ")");
    hybrids.push_back(train_hybrid("hybrid1", br, p, classes, cfg));
  } else {
    res.fallback = true;
    say("no complementary pair; hybrid1 falls back to the best unimodal model");
  }
  say("training hybrid2 (all domains)");
  hybrids.push_back(train_hybrid("hybrid2", {&unimodal[0], &unimodal[1], &unimodal[2]}, p, classes, cfg));

  // Test-set predictions.
  const auto y_test = p.split.test.labels();
  std::vector<NamedPredictions> preds;
  std::string fallback_source;
  run_stage("evaluate", [&] {
    for (const auto& t : unimodal)
      preds.push_back({t.name, predict_labels(t.model.net, {view_tensor(p.test, view_of(t.model.kind))})});
    std::string best = unimodal.front().name;
    double best_val = -1;
    for (const auto& t : unimodal)
      if (t.history.best_val_acc > best_val) {
        best_val = t.history.best_val_acc;
        best = t.name;
      }
    for (const auto& h : hybrids) preds.push_back({h.name, predict_labels(h.hybrid.net, hybrid_inputs(h.kinds, p.test))});
    if (res.fallback) {
      fallback_source = best;
      for (const auto& m : std::vector<NamedPredictions>(preds))
        if (m.name == best) preds.insert(preds.end() - 1, {"hybrid1", m.pred});
    }
    std::string csv = "source_id,label";
    for (const auto& m : preds) csv += "," + m.name;
    csv += "\n";
    for (std::size_t i = 0; i < y_test.size(); ++i) {
      csv += p.split.test.signals[i].source_id + "," + std::to_string(y_test[i]);
      for (const auto& m : preds) csv += "," + std::to_string(m.pred[i]);
      csv += "\n";
    }
    put("predictions.csv", csv);
  });

  run_stage("weights", [&] {
    for (const auto& t : unimodal) {
      nn::save_net(t.model.net, res.dir / "weights" / t.name);
      written.push_back("weights/" + t.name + ".json");
      written.push_back("weights/" + t.name + ".bin");
      put("training/" + t.name + ".csv", history_csv(t.history));
    }
    for (const auto& t : unimodal)
      if (t.name == fallback_source) {
        nn::save_net(t.model.net, res.dir / "weights" / "hybrid1");
        written.push_back("weights/hybrid1.json");
        written.push_back("weights/hybrid1.bin");
      }
    for (const auto& h : hybrids) {
      nn::save_net(h.hybrid.net, res.dir / "weights" / h.name);
      written.push_back("weights/" + h.name + ".json");
      written.push_back("weights/" + h.name + ".bin");
      put("training/" + h.name + ".csv", history_csv(h.history));
    }
  });

  // Adapter-space complementarity of the all-domain hybrid, for reference.
  run_stage("adapter-complementarity", [&] {
    const auto& h2 = hybrids.back();
    const auto in = hybrid_inputs(h2.kinds, p.train);
    std::vector<std::pair<std::string, FeatureMatrix>> feats;
    for (std::size_t b = 0; b < h2.kinds.size(); ++b) {
      std::vector<nn::Tensor> sub;
      for (const auto& t : in) sub.push_back(nn::slice_rows(t, 0, p.n_train_original));
      FeatureMatrix f;
      f.domain = Domain::Deep;
      f.data = nn::to_matrix(h2.hybrid.net.activations(sub, h2.hybrid.net.find(h2.hybrid.adapters[b])));
      feats.emplace_back(domain_tag(h2.kinds[b]), std::move(f));
    }
    try {
      put("complementarity_adapters.json", to_json(assess(feats, cfg.thresholds, res.plan.bins)).dump(2) + "\n");
    } catch (const DegenerateInput& e) {
      say(std::string("adapter complementarity skipped: ") + e.what());
    }
  });

  run_stage("statistics", [&] {
    AblationConfig ac;
    ac.bootstrap = {cfg.bootstrap_iterations, cfg.seed, cfg.threads, classes};
    if (!res.fallback)
      for (auto k : res.plan.pair) ac.pairs.push_back({"hybrid1", std::string(to_string(k)), "complementarity"});
    else
      ac.pairs.push_back({"hybrid2", "hybrid1", "complementarity"});
    if (!res.fallback) ac.pairs.push_back({"hybrid2", "hybrid1", "redundancy"});
    res.ablation = run_ablation(preds, y_test, ac);
    put("ablation.csv", ablation_to_csv(res.ablation));
    auto aj = to_json(res.ablation);
    aj["fallback"] = res.fallback;
    put("ablation.json", aj.dump(2) + "\n");
    put("diff_bootstrap.csv", diffs_to_csv(res.ablation.diffs));

    std::vector<DiffResult> bayes;
    nlohmann::json violin = nlohmann::json::array();
    for (const auto& pr : ac.pairs) {
      const std::vector<int>* a = nullptr;
      const std::vector<int>* b = nullptr;
      for (const auto& m : preds) {
        if (m.name == pr.a) a = &m.pred;
        if (m.name == pr.b) b = &m.pred;
      }
      for (auto& d : bayes_compare(y_test, *a, *b, {"accuracy", "weighted_f1"}, ac.bootstrap)) {
        d.comparison = pr.a + " vs " + pr.b;
        d.label = pr.label;
        violin.push_back(to_json(d));
        bayes.push_back(std::move(d));
      }
    }
    put("diff_bayes.csv", diffs_to_csv(bayes));
    put("diff_bayes.json", violin.dump(1) + "\n");
    put("diffs.svg", diffs_to_svg(bayes));
    nlohmann::json metrics;
    for (const auto& r : res.ablation.rows) metrics[r.model] = {{"metrics", to_json(r.metrics)}, {"confusion", r.confusion.counts}};
    put("metrics.json", metrics.dump(2) + "\n");
  });

  // Manifest with content hashes and leakage checks.
  std::set<std::string> train_p, eval_p;
  for (std::size_t i = 0; i < p.n_train_original; ++i) train_p.insert(p.split.train.signals[i].patient_id);
  for (const auto* part : {&p.split.val, &p.split.test})
    for (const auto& s : part->signals) eval_p.insert(s.patient_id);
  bool disjoint = true;
  for (const auto& id : eval_p) disjoint = disjoint && !train_p.count(id);
  bool bases_in_train = true;
  for (const auto& pr : p.provenance) bases_in_train = bases_in_train && pr.base < p.n_train_original && pr.neighbor < p.n_train_original;
  nlohmann::json arts = nlohmann::json::array();
  std::sort(written.begin(), written.end());
  for (const auto& rel : written) {
    const auto bytes = io::read_file(res.dir / rel);
    arts.push_back({{"path", rel}, {"bytes", bytes.size()}, {"fnv1a64", content_hash(bytes)}});
  }
  res.manifest = {{"format", "cfusion-run/1"},
                  {"seed", cfg.seed},
                  {"best_pair", res.plan.report.best_pair ? nlohmann::json{res.plan.report.best_pair->first,
                                                                           res.plan.report.best_pair->second}
                                                          : nlohmann::json(nullptr)},
                  {"fallback", res.fallback},
                  {"fallback_source", fallback_source},
                  {"mi_bins", res.plan.bins},
                  {"leakage",
                   {{"patients_disjoint", disjoint},
                    {"synthetic_sources_in_train", bases_in_train},
                    {"synthetic_rows", p.provenance.size()}}},
                  {"artifacts", arts}};
  io::write_file(res.dir / "manifest.json", res.manifest.dump(2) + "\n");
  say("run written to " + res.dir.string());
  return res;
}

// ---------------------------------------------------------------------------
// File helpers for the standalone subcommands

// Integer column from a CSV. `spec` is `path` (single column, optional
// non-numeric header) or `path:column` (named column of a headed table such
// as predictions.csv).
inline std::vector<int> read_label_column(const std::string& spec) {
  std::string path = spec, column;
  if (const auto colon = spec.rfind(':'); colon != std::string::npos && colon + 1 < spec.size() &&
                                          !std::filesystem::exists(spec)) {
    path = spec.substr(0, colon);
    column = spec.substr(colon + 1);
  }
  auto lines = io::read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw InvalidInput(path + " is empty");
  std::size_t col = 0, first = 0;
  const auto header = io::split(lines.front());
  if (!column.empty()) {
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) throw InvalidInput(path + " has no column '" + column + "'");
    col = static_cast<std::size_t>(it - header.begin());
    first = 1;
  } else {
    if (header.size() != 1) throw InvalidInput(path + " has several columns; name one as path:column");
    try {
      io::parse_int(header.front());
    } catch (const InvalidInput&) {
      first = 1;
    }
  }
  std::vector<int> out;
  for (std::size_t i = first; i < lines.size(); ++i) {
    const auto cells = io::split(lines[i]);
    if (col >= cells.size()) throw InvalidInput(path + " line " + std::to_string(i + 1) + " is short");
    out.push_back(static_cast<int>(io::parse_int(cells[col])));
  }
  return out;
}

inline std::string matrix_to_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += io::fmt(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Eigen::MatrixXd matrix_from_csv(const std::filesystem::path& path) {
  std::vector<std::vector<double>> rows;
  for (const auto& line : io::read_lines(path)) {
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& cell : io::split(line)) r.push_back(io::parse_double(cell));
    if (!rows.empty() && r.size() != rows.front().size()) throw ShapeError(path.string() + " has ragged rows");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InvalidInput(path.string() + " is empty");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

// Bootstrap and Bayes tables for one prediction pair, as written by the
// compare subcommand.
struct ComparisonTables {
  std::vector<DiffResult> bootstrap;
  std::vector<DiffResult> bayes;
};

inline ComparisonTables compare_predictions(const std::vector<int>& y, const std::vector<int>& a, const std::vector<int>& b,
                                            const BootstrapConfig& cfg, const std::string& label = "a vs b") {
  if (a.size() != y.size() || b.size() != y.size()) throw InvalidInput("prediction and label files differ in length");
  ComparisonTables t;
  for (const auto& m : metric_names()) t.bootstrap.push_back(bootstrap_diff(y, a, b, m, cfg));
  t.bayes = bayes_compare(y, a, b, default_comparison_metrics(), cfg);
  for (auto* v : {&t.bootstrap, &t.bayes})
    for (auto& d : *v) d.comparison = label;
  return t;
}

}  // namespace cfusion
