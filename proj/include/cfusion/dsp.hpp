#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfusion/common.hpp"
#include "cfusion/fft.hpp"
#include "cfusion/image.hpp"
#include "cfusion/ingest.hpp"
#include "cfusion/io.hpp"

namespace cfusion {

enum class Domain { Time, Frequency, TimeFrequency, Deep };

inline const char* to_string(Domain d) {
  switch (d) {
    case Domain::Time: return "time";
    case Domain::Frequency: return "frequency";
    case Domain::TimeFrequency: return "time_frequency";
    case Domain::Deep: return "deep";
  }
  return "?";
}

struct FeatureMatrix {
  Eigen::MatrixXd data;
  Domain domain = Domain::Time;
  std::vector<std::string> feature_names;  // empty or one per column

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
};

inline void validate(const FeatureMatrix& m) {
  if (m.rows() < 1 || m.cols() < 1) throw InvalidInput("feature matrix must be at least 1x1");
  if (!m.data.allFinite()) throw InvalidInput("feature matrix has non-finite entries");
  if (!m.feature_names.empty() && static_cast<Eigen::Index>(m.feature_names.size()) != m.cols()) {
    throw InvalidInput("feature_names length differs from column count");
  }
}

inline std::string to_csv(const FeatureMatrix& m) {
  std::string out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (c) out += ',';
    out += m.feature_names.empty() ? "f" + std::to_string(c) : m.feature_names[static_cast<std::size_t>(c)];
  }
  out += '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += io::fmt(m.data(r, c));
    }
    out += '\n';
  }
  return out;
}

inline FeatureMatrix feature_matrix_from_csv(const std::filesystem::path& path, Domain domain) {
  const auto lines = io::read_lines(path);
  if (lines.size() < 2) throw InvalidInput(path.string() + ": need a header and at least one row");
  FeatureMatrix m;
  m.domain = domain;
  m.feature_names = io::split(lines[0]);
  m.data.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(m.feature_names.size()));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = io::split(lines[r]);
    if (cells.size() != m.feature_names.size()) throw InvalidInput(path.string() + ": ragged row " + std::to_string(r));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      m.data(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = io::parse_double(cells[c]);
    }
  }
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Band-pass

struct BandpassSpec {
  double low_hz = 0.5;
  double high_hz = 45.0;
  double transition_hz = 0.25;
};

inline void validate(const BandpassSpec& b, double sample_rate) {
  if (!(b.low_hz > 0 && b.low_hz < b.high_hz)) throw InvalidInput("band-pass needs 0 < low < high");
  if (!(b.high_hz < sample_rate / 2)) throw InvalidInput("band-pass upper edge exceeds Nyquist");
  if (!(b.transition_hz > 0)) throw InvalidInput("transition width must be positive");
}

// Gain of the raised-cosine band mask at frequency f >= 0. Each edge ramps
// over [edge - tw/2, edge + tw/2].
inline double bandpass_gain(double f, const BandpassSpec& b) {
  const double half = b.transition_hz / 2;
  auto ramp = [&](double x) { return 0.5 * (1.0 - std::cos(std::numbers::pi * x / b.transition_hz)); };
  if (f <= 0.0) return 0.0;
  if (f < b.low_hz - half || f > b.high_hz + half) return 0.0;
  if (f < b.low_hz + half) return ramp(f - (b.low_hz - half));
  if (f <= b.high_hz - half) return 1.0;
  return ramp((b.high_hz + half) - f);
}

// Zero-phase spectral mask over an exact-length DFT of the signal.
inline Signal1D bandpass(const Signal1D& signal, const BandpassSpec& spec) {
  validate(signal);
  validate(spec, signal.sample_rate);
  const std::size_t n = signal.size();
  auto spectrum = fft::real_transform(signal.samples, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) * signal.sample_rate / static_cast<double>(n);
    spectrum[k] *= bandpass_gain(f, spec);
  }
  spectrum[0] = 0.0;
  const auto back = fft::inverse(std::move(spectrum));
  Signal1D out = signal;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = back[i].real();
  return out;
}

// ---------------------------------------------------------------------------
// Frequency features

// Magnitudes of the fft_bins-point DFT (zero-padded or truncated); the first
// ceil(fft_bins/2)+1 bins are kept.
inline std::vector<double> fft_features(const Signal1D& signal, std::size_t fft_bins) {
  if (fft_bins < 2) throw InvalidInput("fft_bins must be >= 2");
  const auto spectrum = fft::real_transform(signal.samples, fft_bins);
  const std::size_t keep = (fft_bins + 1) / 2 + 1;
  std::vector<double> mags(keep);
  for (std::size_t k = 0; k < keep; ++k) mags[k] = std::abs(spectrum[k]);
  return mags;
}

struct Scaler {
  Eigen::VectorXd means;
  Eigen::VectorXd sds;  // 0 marks a constant column

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != means.size()) throw ShapeError("scaler fitted on " + std::to_string(means.size()) + " columns");
    Eigen::MatrixXd out = x.rowwise() - means.transpose();
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      if (sds(c) > 0) out.col(c) /= sds(c);
    }
    return out;
  }
};

struct Standardized {
  FeatureMatrix matrix;
  Scaler scaler;
};

inline constexpr double kConstantColumnSd = 1e-12;

// Column-wise zero mean and unit population variance.
inline Standardized standardize(const FeatureMatrix& m) {
  if (m.rows() < 2) throw InvalidInput("standardize needs at least 2 rows");
  Scaler s;
  const auto n = static_cast<double>(m.rows());
  s.means = m.data.colwise().mean().transpose();
  s.sds.resize(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double var = (m.data.col(c).array() - s.means(c)).square().sum() / n;
    const double sd = std::sqrt(var);
    s.sds(c) = sd < kConstantColumnSd ? 0.0 : sd;
  }
  Standardized out{m, s};
  out.matrix.data = s.apply(m.data);
  return out;
}

// ---------------------------------------------------------------------------
// Time features

inline constexpr std::size_t kTimeFeaturesPerWindow = 5;

struct Moments {
  double mean = 0, variance = 0, peak_to_peak = 0, skewness = 0, kurtosis = 0;
};

// Population moments; skewness and excess kurtosis are 0 for a constant window.
inline Moments window_moments(const double* x, std::size_t n) {
  Moments m;
  double lo = x[0], hi = x[0], sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += x[i];
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  m.mean = sum / static_cast<double>(n);
  m.peak_to_peak = hi - lo;
  double m2 = 0, m3 = 0, m4 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - m.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  m.variance = m2;
  if (m2 > 1e-300 && m.peak_to_peak > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

// [mean, variance, peak-to-peak, skewness, excess kurtosis] per window,
// concatenated; a trailing partial window is dropped.
inline std::vector<double> time_features(const Signal1D& signal, std::size_t window_len, std::size_t hop) {
  if (hop < 1) throw InvalidInput("hop must be >= 1");
  if (window_len < 1 || window_len > signal.size()) throw InvalidInput("window_len must be in [1, signal length]");
  std::vector<double> out;
  for (std::size_t start = 0; start + window_len <= signal.size(); start += hop) {
    const auto m = window_moments(signal.samples.data() + start, window_len);
    out.insert(out.end(), {m.mean, m.variance, m.peak_to_peak, m.skewness, m.kurtosis});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Morlet scalogram

struct Scalogram {
  Grid power;                     // S x T magnitudes
  std::vector<double> scales_hz;  // pseudo-frequency of each row
  std::string signal_ref;
};

struct ScalogramConfig {
  std::size_t n_scales = 32;
  Eigen::Index out_rows = 32;
  Eigen::Index out_cols = 32;
  double min_hz = 0.5;
  double max_hz = 45.0;
  double omega0 = 6.0;
  bool normalize = true;
};

// Precomputed Morlet filters for one (length, sample rate) pair. Rows run
// from the highest pseudo-frequency to the lowest; the scale in samples for
// pseudo-frequency f is omega0 * fs / (2 pi f). Filters are L1-normalized
// (1/s) so a unit sinusoid peaks at the same height on every matched scale.
class CwtPlan {
 public:
  CwtPlan(std::size_t length, double sample_rate, const ScalogramConfig& cfg) : length_(length), cfg_(cfg) {
    if (cfg.n_scales < 2) throw InvalidInput("n_scales must be >= 2");
    if (length < 8) throw InvalidInput("scalogram needs at least 8 samples");
    const double top = std::min(cfg.max_hz, sample_rate / 2);
    if (!(cfg.min_hz > 0 && cfg.min_hz < top)) throw InvalidInput("scalogram frequency span is empty after Nyquist clipping");
    const double log_lo = std::log(cfg.min_hz), log_hi = std::log(top);
    const double norm = std::pow(std::numbers::pi, -0.25);
    for (std::size_t k = 0; k < cfg.n_scales; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(cfg.n_scales - 1);
      const double f = std::exp(log_hi + frac * (log_lo - log_hi));
      freqs_.push_back(f);
      const double s = cfg.omega0 * sample_rate / (2.0 * std::numbers::pi * f);
      const auto half = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(4.0 * s)), length - 1);
      std::vector<std::complex<double>> taps(2 * half + 1);
      for (std::size_t j = 0; j < taps.size(); ++j) {
        const double eta = (static_cast<double>(j) - static_cast<double>(half)) / s;
        // conjugated wavelet
        taps[j] = std::polar(norm * std::exp(-0.5 * eta * eta) / s, -cfg.omega0 * eta);
      }
      filters_.push_back(std::move(taps));
    }
  }

  const std::vector<double>& frequencies() const { return freqs_; }
  std::size_t length() const { return length_; }

  // Raw |CWT|, n_scales x length.
  Grid magnitude(const std::vector<double>& x) const {
    if (x.size() != length_) throw ShapeError("signal length differs from the CWT plan");
    const auto n = static_cast<std::ptrdiff_t>(length_);
    Grid out(static_cast<Eigen::Index>(filters_.size()), n);
    for (std::size_t k = 0; k < filters_.size(); ++k) {
      const auto& taps = filters_[k];
      const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        std::complex<double> acc = 0;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - half);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, t + half);
        for (std::ptrdiff_t tau = lo; tau <= hi; ++tau) acc += x[static_cast<std::size_t>(tau)] * taps[static_cast<std::size_t>(tau - t + half)];
        out(static_cast<Eigen::Index>(k), t) = std::abs(acc);
      }
    }
    return out;
  }

  Scalogram compute(const Signal1D& signal) const {
    Scalogram sc;
    sc.signal_ref = signal.source_id;
    sc.power = resize_bilinear(magnitude(signal.samples), cfg_.out_rows, cfg_.out_cols);
    // Row frequencies follow the same half-pixel map, interpolated in log space.
    Grid logf(static_cast<Eigen::Index>(freqs_.size()), 1);
    for (std::size_t k = 0; k < freqs_.size(); ++k) logf(static_cast<Eigen::Index>(k), 0) = std::log(freqs_[k]);
    const Grid rows = resize_bilinear(logf, cfg_.out_rows, 1);
    for (Eigen::Index r = 0; r < rows.rows(); ++r) sc.scales_hz.push_back(std::exp(rows(r, 0)));
    if (cfg_.normalize) {
      const double peak = sc.power.maxCoeff();
      if (peak > 0) sc.power /= peak;
    }
    return sc;
  }

 private:
  std::size_t length_;
  ScalogramConfig cfg_;
  std::vector<double> freqs_;
  std::vector<std::vector<std::complex<double>>> filters_;
};

inline Scalogram scalogram(const Signal1D& signal, const ScalogramConfig& cfg = {}) {
  if (cfg.out_rows < 2 || cfg.out_cols < 2) throw InvalidInput("scalogram output must be at least 2x2");
  return CwtPlan(signal.size(), signal.sample_rate, cfg).compute(signal);
}

inline std::string to_csv(const Scalogram& s) {
  std::string out;
  for (Eigen::Index r = 0; r < s.power.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.power.cols(); ++c) {
      if (c) out += ',';
      out += io::fmt(s.power(r, c));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aligned domain views

struct ViewConfig {
  std::size_t fft_bins = 0;  // 0: next power of two >= signal length
  ScalogramConfig scalogram;
};

struct DomainViews {
  FeatureMatrix time;
  FeatureMatrix frequency;
  std::vector<Scalogram> time_frequency;
  Scaler frequency_scaler;

  std::size_t size() const { return static_cast<std::size_t>(time.rows()); }
};

// Row i of every view comes from dataset.signals[i]. When `fitted` is given
// the frequency view reuses that scaler (for validation and test partitions).
inline DomainViews build_domain_views(const LabeledDataset& d, const ViewConfig& cfg, const Scaler* fitted = nullptr) {
  if (d.signals.empty()) throw InvalidInput("cannot build views of an empty dataset");
  const std::size_t len = d.signals.front().size();
  for (const auto& s : d.signals) {
    if (s.size() != len) throw ShapeError("all signals must share one length to build aligned views");
  }
  const std::size_t bins = cfg.fft_bins ? cfg.fft_bins : fft::next_pow2(len);
  const auto n = static_cast<Eigen::Index>(d.size());

  DomainViews v;
  v.time.domain = Domain::Time;
  v.time.data.resize(n, static_cast<Eigen::Index>(len));
  FeatureMatrix freq;
  freq.domain = Domain::Frequency;
  const CwtPlan plan(len, d.signals.front().sample_rate, cfg.scalogram);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = d.signals[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < len; ++k) v.time.data(i, static_cast<Eigen::Index>(k)) = s.samples[k];
    const auto mags = fft_features(s, bins);
    if (i == 0) freq.data.resize(n, static_cast<Eigen::Index>(mags.size()));
    for (std::size_t k = 0; k < mags.size(); ++k) freq.data(i, static_cast<Eigen::Index>(k)) = mags[k];
    v.time_frequency.push_back(plan.compute(s));
  }
  if (fitted) {
    v.frequency = freq;
    v.frequency.data = fitted->apply(freq.data);
    v.frequency_scaler = *fitted;
  } else {
    auto st = standardize(freq);
    v.frequency = std::move(st.matrix);
    v.frequency_scaler = std::move(st.scaler);
  }
  return v;
}

}  // namespace cfusion
