#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cfusion/common.hpp"
#include "cfusion/image.hpp"
#include "cfusion/io.hpp"

namespace cfusion {

struct Signal1D {
  std::vector<double> samples;
  double sample_rate = 1.0;
  int label = 0;
  std::string patient_id;
  std::string source_id;

  std::size_t size() const { return samples.size(); }
};

inline void validate(const Signal1D& s) {
  if (s.samples.empty()) throw InvalidInput("signal '" + s.source_id + "' is empty");
  for (double v : s.samples) {
    if (!std::isfinite(v)) throw InvalidInput("signal '" + s.source_id + "' has a non-finite sample");
  }
}

struct LabeledDataset {
  std::vector<Signal1D> signals;
  std::vector<std::string> class_names;

  std::size_t size() const { return signals.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(signals.size());
    for (const auto& s : signals) out.push_back(s.label);
    return out;
  }

  // n x C indicator matrix; each row has a single 1 at the signal's label.
  Eigen::MatrixXd one_hot() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(signals.size()), num_classes());
    for (std::size_t i = 0; i < signals.size(); ++i) m(static_cast<Eigen::Index>(i), signals[i].label) = 1.0;
    return m;
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(class_names.size(), 0);
    for (const auto& s : signals) ++counts.at(static_cast<std::size_t>(s.label));
    return counts;
  }

  LabeledDataset subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset out;
    out.class_names = class_names;
    out.signals.reserve(rows.size());
    for (auto r : rows) out.signals.push_back(signals.at(r));
    return out;
  }
};

inline void validate(const LabeledDataset& d) {
  for (const auto& s : d.signals) {
    validate(s);
    if (s.label < 0 || s.label >= d.num_classes()) {
      throw InvalidInput("label " + std::to_string(s.label) + " out of range for signal '" + s.source_id + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Image ingestion and normalization

// Resizes the grayscale image to target_len x target_len and emits the row means.
inline Signal1D image_to_signal(const Grid& gray, std::size_t target_len, double sample_rate = 1.0) {
  if (gray.rows() < 1 || gray.cols() < 1) throw InvalidInput("empty image");
  if (target_len < 1) throw InvalidInput("target_len must be positive");
  if (!gray.allFinite()) throw InvalidInput("image has non-finite intensities");
  const auto n = static_cast<Eigen::Index>(target_len);
  const Grid resized = resize_bilinear(gray, n, n);
  Signal1D s;
  s.sample_rate = sample_rate;
  s.samples.resize(target_len);
  for (Eigen::Index r = 0; r < n; ++r) s.samples[static_cast<std::size_t>(r)] = resized.row(r).mean();
  return s;
}

// Divides every sample by the dataset-wide maximum absolute value.
inline LabeledDataset minmax_normalize(LabeledDataset d) {
  double peak = 0.0;
  for (const auto& s : d.signals) {
    for (double v : s.samples) peak = std::max(peak, std::abs(v));
  }
  if (!(peak > 0.0)) throw DegenerateInput("all samples are zero");
  for (auto& s : d.signals) {
    for (double& v : s.samples) v /= peak;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Patient-level split

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 0;
  bool group_by_patient = true;
  // Apportion patients within each class instead of over the whole pool.
  bool stratify = false;
};

inline void validate(const SplitSpec& s) {
  if (!(s.train_frac > 0 && s.val_frac > 0 && s.test_frac > 0)) throw InvalidInput("split fractions must be positive");
  if (std::abs(s.train_frac + s.val_frac + s.test_frac - 1.0) > 1e-9) throw InvalidInput("split fractions must sum to 1");
}

struct Split {
  LabeledDataset train, val, test;
};

// Largest-remainder apportionment of `total` items over `fractions`.
// Ties in the remainder go to the earlier slot.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double quota = fractions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(quota - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

namespace detail {

// Moves one unit from the largest slot into every empty slot.
inline void ensure_nonempty(std::vector<std::size_t>& counts) {
  for (auto& c : counts) {
    if (c == 0) {
      auto largest = std::max_element(counts.begin(), counts.end());
      if (*largest <= 1) throw InvalidInput("not enough patients to fill every partition");
      --*largest;
      c = 1;
    }
  }
}

}  // namespace detail

inline Split split_by_patient(const LabeledDataset& d, const SplitSpec& spec) {
  validate(spec);
  const std::vector<double> fractions{spec.train_frac, spec.val_frac, spec.test_frac};

  // Group key per signal: the patient, or the signal itself when grouping is off.
  std::map<std::string, int> patient_label;
  std::vector<std::string> keys;
  keys.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.signals[i];
    std::string key = spec.group_by_patient ? s.patient_id : s.patient_id + "#" + std::to_string(i);
    patient_label.emplace(key, s.label);
    keys.push_back(std::move(key));
  }
  if (patient_label.size() < 3) throw InvalidInput("need at least 3 distinct patients to split three ways");

  std::vector<std::vector<std::string>> pools;
  if (spec.stratify) {
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& [p, label] : patient_label) by_class[label].push_back(p);
    for (auto& [label, ps] : by_class) pools.push_back(std::move(ps));
  } else {
    std::vector<std::string> all;
    for (const auto& [p, label] : patient_label) all.push_back(p);
    pools.push_back(std::move(all));
  }

  std::map<std::string, int> partition_of;
  Rng rng(spec.seed);
  std::vector<std::size_t> totals(3, 0);
  for (auto& pool : pools) {
    rng.shuffle(pool.begin(), pool.end());
    auto counts = apportion(pool.size(), fractions);
    if (!spec.stratify) detail::ensure_nonempty(counts);
    std::size_t pos = 0;
    for (int part = 0; part < 3; ++part) {
      for (std::size_t k = 0; k < counts[static_cast<std::size_t>(part)]; ++k) partition_of[pool[pos++]] = part;
      totals[static_cast<std::size_t>(part)] += counts[static_cast<std::size_t>(part)];
    }
  }
  if (std::find(totals.begin(), totals.end(), 0u) != totals.end()) {
    throw InvalidInput("a partition received no patients; reduce stratification or add patients");
  }

  Split out;
  out.train.class_names = out.val.class_names = out.test.class_names = d.class_names;
  for (std::size_t i = 0; i < d.size(); ++i) {
    switch (partition_of.at(keys[i])) {
      case 0: out.train.signals.push_back(d.signals[i]); break;
      case 1: out.val.signals.push_back(d.signals[i]); break;
      default: out.test.signals.push_back(d.signals[i]); break;
    }
  }
  return out;
}

inline std::set<std::string> patient_set(const LabeledDataset& d) {
  std::set<std::string> out;
  for (const auto& s : d.signals) out.insert(s.patient_id);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic ECG-like generator

// Gaussian bump parameters; offsets and widths are fractions of one beat.
struct WaveShape {
  double amplitude = 0.0;
  double width = 0.05;
  double offset = 0.5;
};

struct ClassShape {
  std::string name;
  double baseline = 0.5;
  WaveShape p, qrs, t;
};

inline std::vector<ClassShape> default_class_shapes() {
  return {
      {"Normal", 0.5, {0.15, 0.08, 0.20}, {1.00, 0.02, 0.40}, {0.30, 0.12, 0.65}},
      {"Abnormal", 0.5, {0.05, 0.08, 0.18}, {2.00, 0.03, 0.40}, {0.25, 0.12, 0.62}},
      {"MI", 0.5, {0.15, 0.08, 0.20}, {0.60, 0.02, 0.40}, {-0.25, 0.12, 0.65}},
      {"HistoryMI", 0.5, {0.12, 0.08, 0.20}, {0.80, 0.02, 0.40}, {0.08, 0.12, 0.68}},
  };
}

struct SynthConfig {
  std::size_t n_patients = 40;
  std::size_t signals_per_patient = 6;
  std::size_t length = 256;
  double sample_rate = 100.0;
  double beat_hz = 1.2;
  std::vector<ClassShape> class_params = default_class_shapes();
  // Relative share of patients per class; empty means equal shares.
  std::vector<double> class_weights;
  double noise_sd = 0.05;
  // Per-patient multiplicative jitter on heart rate and amplitude.
  double patient_jitter = 0.1;
  std::uint64_t seed = 0;
};

inline void validate(const SynthConfig& c) {
  if (c.length < 64) throw InvalidInput("synthetic length must be >= 64");
  if (c.noise_sd < 0) throw InvalidInput("noise_sd must be >= 0");
  if (c.class_params.size() < 2) throw InvalidInput("need at least 2 classes");
  if (c.n_patients < 1 || c.signals_per_patient < 1) throw InvalidInput("empty synthetic dataset");
  if (!(c.sample_rate > 0) || !(c.beat_hz > 0)) throw InvalidInput("rates must be positive");
  if (!c.class_weights.empty() && c.class_weights.size() != c.class_params.size()) {
    throw InvalidInput("class_weights must have one entry per class");
  }
  if (c.patient_jitter < 0 || c.patient_jitter >= 1) throw InvalidInput("patient_jitter must be in [0,1)");
}

namespace detail {

inline double wave_value(const WaveShape& w, double beat_pos) {
  if (w.amplitude == 0.0) return 0.0;
  double d = beat_pos - w.offset;
  d -= std::round(d);  // wrap into the current beat
  return w.amplitude * std::exp(-0.5 * (d / w.width) * (d / w.width));
}

inline std::string patient_name(std::size_t p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%04zu", p);
  return buf;
}

}  // namespace detail

// Each patient draws a class, heart rate, amplitude and phase from a stream
// keyed by (seed, patient); each signal adds white noise from a stream keyed
// by (seed, patient, index). Output is a pure function of the config.
inline LabeledDataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const std::size_t n_classes = cfg.class_params.size();
  std::vector<double> weights = cfg.class_weights;
  if (weights.empty()) weights.assign(n_classes, 1.0);
  double wsum = 0;
  for (double w : weights) {
    if (w < 0) throw InvalidInput("class weights must be nonnegative");
    wsum += w;
  }
  if (!(wsum > 0)) throw InvalidInput("class weights sum to zero");
  for (double& w : weights) w /= wsum;

  const auto per_class = apportion(cfg.n_patients, weights);
  std::vector<int> patient_class;
  for (std::size_t c = 0; c < n_classes; ++c) patient_class.insert(patient_class.end(), per_class[c], static_cast<int>(c));
  // Interleave classes so patient ids do not encode the label.
  Rng order(hash_combine(cfg.seed, "patient-order"));
  order.shuffle(patient_class.begin(), patient_class.end());

  LabeledDataset out;
  for (const auto& cp : cfg.class_params) out.class_names.push_back(cp.name);

  for (std::size_t p = 0; p < cfg.n_patients; ++p) {
    const int label = patient_class[p];
    const auto& shape = cfg.class_params[static_cast<std::size_t>(label)];
    Rng prng(hash_combine(cfg.seed, "patient-" + std::to_string(p)));
    const double rate = cfg.beat_hz * (1.0 + prng.uniform(-cfg.patient_jitter, cfg.patient_jitter));
    const double gain = 1.0 + prng.uniform(-cfg.patient_jitter, cfg.patient_jitter);
    const double phase = prng.uniform();

    std::vector<double> clean(cfg.length);
    for (std::size_t i = 0; i < cfg.length; ++i) {
      const double beat_pos = static_cast<double>(i) / cfg.sample_rate * rate + phase;
      clean[i] = shape.baseline + gain * (detail::wave_value(shape.p, beat_pos) + detail::wave_value(shape.qrs, beat_pos) +
                                          detail::wave_value(shape.t, beat_pos));
    }

    for (std::size_t k = 0; k < cfg.signals_per_patient; ++k) {
      Signal1D s;
      s.sample_rate = cfg.sample_rate;
      s.label = label;
      s.patient_id = detail::patient_name(p);
      s.source_id = s.patient_id + "_" + std::to_string(k);
      s.samples = clean;
      if (cfg.noise_sd > 0) {
        Rng nrng(hash_combine(cfg.seed, "noise-" + std::to_string(p) + "-" + std::to_string(k)));
        for (double& v : s.samples) v += cfg.noise_sd * nrng.normal();
      }
      out.signals.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout: <root>/<class_name>/<file>.csv with rows
// `patient_id,label,s0,s1,...`, plus optional 8-bit PGM images whose patient id
// is the file stem up to the first underscore.

inline std::string signals_to_csv(const std::vector<Signal1D>& signals) {
  std::string out;
  for (const auto& s : signals) {
    out += s.patient_id;
    out += ',';
    out += std::to_string(s.label);
    for (double v : s.samples) {
      out += ',';
      out += io::fmt(v);
    }
    out += '\n';
  }
  return out;
}

// Writes one CSV per class plus manifest.json; returns the manifest.
inline nlohmann::json write_dataset_dir(const LabeledDataset& d, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json manifest;
  manifest["format"] = "cfusion-dataset/1";
  manifest["class_names"] = d.class_names;
  manifest["sample_rate"] = d.signals.empty() ? 0.0 : d.signals.front().sample_rate;
  manifest["length"] = d.signals.empty() ? 0 : d.signals.front().size();
  nlohmann::json files = nlohmann::json::array();
  std::size_t total = 0;
  for (int c = 0; c < d.num_classes(); ++c) {
    std::vector<Signal1D> members;
    for (const auto& s : d.signals) {
      if (s.label == c) members.push_back(s);
    }
    const auto rel = fs::path(d.class_names[static_cast<std::size_t>(c)]) / "signals.csv";
    io::write_file(root / rel, signals_to_csv(members));
    files.push_back({{"class", d.class_names[static_cast<std::size_t>(c)]}, {"path", rel.generic_string()}, {"rows", members.size()}});
    total += members.size();
  }
  manifest["files"] = files;
  manifest["rows"] = total;
  io::write_file(root / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

// Reads the class-per-directory layout. Subdirectories are visited in sorted
// order and define the class ids; the CSV label column must agree with the
// directory. When a manifest.json is present its class order wins.
inline LabeledDataset read_dataset_dir(const std::filesystem::path& root, double sample_rate, std::size_t image_len = 128) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw InvalidInput("dataset directory not found: " + root.string());
  LabeledDataset d;
  const auto manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto m = nlohmann::json::parse(io::read_file(manifest_path));
    d.class_names = m.at("class_names").get<std::vector<std::string>>();
    if (m.contains("sample_rate") && m["sample_rate"].get<double>() > 0) sample_rate = m["sample_rate"].get<double>();
  } else {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) d.class_names.push_back(entry.path().filename().string());
    }
    std::sort(d.class_names.begin(), d.class_names.end());
  }
  if (d.class_names.empty()) throw InvalidInput("no class directories under " + root.string());

  for (int c = 0; c < d.num_classes(); ++c) {
    const auto dir = root / d.class_names[static_cast<std::size_t>(c)];
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto ext = f.extension().string();
      if (ext == ".csv") {
        std::size_t row = 0;
        for (const auto& line : io::read_lines(f)) {
          const auto cells = io::split(line);
          if (cells.size() < 3) throw InvalidInput(f.string() + ": row needs patient_id,label and samples");
          Signal1D s;
          s.patient_id = cells[0];
          s.label = static_cast<int>(io::parse_int(cells[1]));
          if (s.label != c) throw InvalidInput(f.string() + ": label column disagrees with class directory");
          s.sample_rate = sample_rate;
          s.source_id = d.class_names[static_cast<std::size_t>(c)] + "/" + f.filename().string() + ":" + std::to_string(row++);
          for (std::size_t k = 2; k < cells.size(); ++k) s.samples.push_back(io::parse_double(cells[k]));
          validate(s);
          d.signals.push_back(std::move(s));
        }
      } else if (ext == ".pgm") {
        auto s = image_to_signal(read_pgm(f), image_len, sample_rate);
        s.label = c;
        const auto stem = f.stem().string();
        s.patient_id = stem.substr(0, stem.find('_'));
        s.source_id = d.class_names[static_cast<std::size_t>(c)] + "/" + f.filename().string();
        d.signals.push_back(std::move(s));
      }
    }
  }
  if (d.signals.empty()) throw InvalidInput("no signals found under " + root.string());
  return d;
}

}  // namespace cfusion
