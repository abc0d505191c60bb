#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "cfusion/dsp.hpp"

using namespace cfusion;

namespace {

constexpr double kPi = std::numbers::pi;

Signal1D sinusoid(double hz, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  Signal1D s;
  s.sample_rate = fs;
  for (std::size_t i = 0; i < n; ++i) s.samples.push_back(amp * std::sin(2 * kPi * hz * static_cast<double>(i) / fs + phase));
  return s;
}

// Least-squares amplitude of a known-frequency component (exact for bin-aligned tones).
double tone_amplitude(const std::vector<double>& x, double hz, double fs) {
  double c = 0, s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = 2 * kPi * hz * static_cast<double>(i) / fs;
    c += x[i] * std::cos(t);
    s += x[i] * std::sin(t);
  }
  return 2.0 / static_cast<double>(x.size()) * std::hypot(c, s);
}

std::vector<double> direct_dft_magnitudes(const std::vector<double>& x, std::size_t n) {
  std::vector<double> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < std::min(n, x.size()); ++t) {
      acc += x[t] * std::polar(1.0, -2 * kPi * static_cast<double>(k * t % n) / static_cast<double>(n));
    }
    out.push_back(std::abs(acc));
  }
  return out;
}

double energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Fft, RoundTripArbitraryLengths) {
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 12u, 31u, 64u, 100u}) {
    std::vector<fft::cplx> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const auto back = fft::inverse(fft::transform(x));
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(std::abs(back[i] - x[i]), 0.0, 1e-10);
  }
}

TEST(Bandpass, PassbandToneKeepsAmplitude) {
  const auto in = sinusoid(10, 256, 1024);
  const auto out = bandpass(in, BandpassSpec{});
  EXPECT_NEAR(tone_amplitude(out.samples, 10, 256), 1.0, 0.01);
  EXPECT_EQ(out.size(), in.size());
}

TEST(Bandpass, StopbandToneIsRemoved) {
  const auto out = bandpass(sinusoid(60, 256, 1024), BandpassSpec{});
  double peak = 0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  EXPECT_LT(peak, 0.01);
}

TEST(Bandpass, ConstantSignalBecomesZero) {
  Signal1D s;
  s.sample_rate = 100;
  s.samples.assign(300, 2.5);
  for (double v : bandpass(s, BandpassSpec{}).samples) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Bandpass, NeverGainsEnergy) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Signal1D s;
    s.sample_rate = 100 + 50 * trial;
    const std::size_t n = 64 + rng.below(400);
    for (std::size_t i = 0; i < n; ++i) s.samples.push_back(rng.normal());
    EXPECT_LE(energy(bandpass(s, BandpassSpec{}).samples), energy(s.samples) + 1e-9);
  }
}

TEST(Bandpass, BandAboveNyquistIsRejected) {
  EXPECT_THROW(bandpass(sinusoid(1, 80, 128), BandpassSpec{}), InvalidInput);
  BandpassSpec inverted{10, 5, 0.25};
  EXPECT_THROW(bandpass(sinusoid(1, 200, 128), inverted), InvalidInput);
}

TEST(BandpassGain, RaisedCosineEdges) {
  const BandpassSpec b{};
  EXPECT_EQ(bandpass_gain(0.0, b), 0.0);
  EXPECT_EQ(bandpass_gain(0.3, b), 0.0);
  EXPECT_NEAR(bandpass_gain(0.5, b), 0.5, 1e-12);
  EXPECT_EQ(bandpass_gain(10, b), 1.0);
  EXPECT_NEAR(bandpass_gain(45, b), 0.5, 1e-12);
  EXPECT_EQ(bandpass_gain(45.2, b), 0.0);
}

// ---------------------------------------------------------------------------

TEST(FftFeatures, ImpulseIsFlat) {
  Signal1D s{{1, 0, 0, 0}};
  const auto m = fft_features(s, 4);
  ASSERT_EQ(m.size(), 3u);
  for (double v : m) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(FftFeatures, ConstantIsPureDc) {
  Signal1D s{{2.5, 2.5, 2.5, 2.5}};
  const auto m = fft_features(s, 4);
  EXPECT_NEAR(m[0], 10.0, 1e-12);
  EXPECT_NEAR(m[1], 0.0, 1e-12);
  EXPECT_NEAR(m[2], 0.0, 1e-12);
}

TEST(FftFeatures, BinAlignedToneHasHalfNAmplitude) {
  const std::size_t n = 128;
  const double amp = 0.7;
  for (std::size_t k : {3u, 17u, 40u}) {
    Signal1D s;
    for (std::size_t t = 0; t < n; ++t) s.samples.push_back(amp * std::cos(2 * kPi * static_cast<double>(k * t) / n + 0.3));
    const auto m = fft_features(s, n);
    const auto peak = std::max_element(m.begin(), m.end()) - m.begin();
    EXPECT_EQ(static_cast<std::size_t>(peak), k);
    EXPECT_NEAR(m[k], n / 2.0 * amp, 1e-9);
  }
}

TEST(FftFeatures, MatchesDirectDftOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    Signal1D s;
    const std::size_t len = 1 + rng.below(256);
    for (std::size_t i = 0; i < len; ++i) s.samples.push_back(rng.normal());
    const std::size_t bins = 2 + rng.below(255);
    const auto got = fft_features(s, bins);
    const auto want = direct_dft_magnitudes(s.samples, bins);
    ASSERT_EQ(got.size(), (bins + 1) / 2 + 1);
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_LE(std::abs(got[k] - want[k]), 1e-6 * std::max(1.0, want[k])) << "bins=" << bins << " k=" << k;
    }
  }
}

TEST(FftFeatures, TooFewBins) { EXPECT_THROW(fft_features(Signal1D{{1, 2}}, 1), InvalidInput); }

// ---------------------------------------------------------------------------

TEST(Standardize, TwoPointColumn) {
  FeatureMatrix m;
  m.data.resize(2, 1);
  m.data << 1, 3;
  const auto st = standardize(m);
  EXPECT_DOUBLE_EQ(st.matrix.data(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(st.matrix.data(1, 0), 1.0);
}

TEST(Standardize, ConstantColumnIsCenteredWithZeroSd) {
  FeatureMatrix m;
  m.data.resize(3, 2);
  m.data << 1, 5, 2, 5, 3, 5;
  const auto st = standardize(m);
  EXPECT_EQ(st.scaler.sds(1), 0.0);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(st.matrix.data(r, 1), 0.0);
}

TEST(Standardize, RandomMatrixHasZeroMeanUnitSd) {
  Rng rng(2);
  FeatureMatrix m;
  m.data.resize(50, 7);
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 7; ++c) m.data(r, c) = rng.normal(3 * c, 1 + c);
  const auto z = standardize(m).matrix.data;
  for (int c = 0; c < 7; ++c) {
    const double mu = z.col(c).mean();
    const double sd = std::sqrt((z.col(c).array() - mu).square().mean());
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_LT(std::abs(sd - 1), 1e-9);
  }
}

// ---------------------------------------------------------------------------

TEST(TimeFeatures, ConstantWindowUsesZeroMomentConvention) {
  Signal1D s{std::vector<double>(8, 1.5)};
  const auto f = time_features(s, 4, 4);
  ASSERT_EQ(f.size(), 10u);
  EXPECT_EQ(f[0], 1.5);
  for (int i = 1; i < 5; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)], 0.0);
}

TEST(TimeFeatures, HandArithmetic) {
  Signal1D s{{0, 1, 0, -1}};
  const auto f = time_features(s, 4, 1);
  ASSERT_EQ(f.size(), 5u);
  EXPECT_DOUBLE_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 0.5);
  EXPECT_DOUBLE_EQ(f[2], 2.0);
  EXPECT_NEAR(f[3], 0.0, 1e-12);
  EXPECT_NEAR(f[4], 0.5 / 0.25 - 3.0, 1e-12);
}

TEST(TimeFeatures, MatchesBruteForceMoments) {
  Rng rng(3);
  Signal1D s;
  for (int i = 0; i < 103; ++i) s.samples.push_back(rng.normal());
  const std::size_t win = 20, hop = 7;
  const auto f = time_features(s, win, hop);
  std::size_t w = 0;
  for (std::size_t start = 0; start + win <= s.size(); start += hop, ++w) {
    std::vector<double> x(s.samples.begin() + static_cast<long>(start), s.samples.begin() + static_cast<long>(start + win));
    double mean = 0;
    for (double v : x) mean += v / win;
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x) {
      m2 += std::pow(v - mean, 2) / win;
      m3 += std::pow(v - mean, 3) / win;
      m4 += std::pow(v - mean, 4) / win;
    }
    const double ptp = *std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end());
    const double* got = f.data() + w * 5;
    EXPECT_NEAR(got[0], mean, 1e-12);
    EXPECT_NEAR(got[1], m2, 1e-12);
    EXPECT_NEAR(got[2], ptp, 1e-12);
    EXPECT_NEAR(got[3], m3 / std::pow(m2, 1.5), 1e-10);
    EXPECT_NEAR(got[4], m4 / (m2 * m2) - 3, 1e-10);
  }
  EXPECT_EQ(f.size(), w * 5);
}

TEST(TimeFeatures, OffsetShiftsOnlyTheMean) {
  Rng rng(4);
  Signal1D s;
  for (int i = 0; i < 64; ++i) s.samples.push_back(rng.normal());
  Signal1D shifted = s;
  for (double& v : shifted.samples) v += 4.0;
  const auto a = time_features(s, 16, 8);
  const auto b = time_features(shifted, 16, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b[i] - a[i], i % 5 == 0 ? 4.0 : 0.0, 1e-9);
  }
}

TEST(TimeFeatures, WindowLongerThanSignal) {
  EXPECT_THROW(time_features(Signal1D{{1, 2, 3}}, 4, 1), InvalidInput);
}

// ---------------------------------------------------------------------------

TEST(Scalogram, ZeroSignalGivesZeroMatrix) {
  Signal1D s;
  s.sample_rate = 100;
  s.samples.assign(128, 0.0);
  const auto sc = scalogram(s);
  EXPECT_EQ(sc.power.rows(), 32);
  EXPECT_EQ(sc.power.cols(), 32);
  EXPECT_EQ(sc.power.maxCoeff(), 0.0);
  EXPECT_EQ(sc.power.minCoeff(), 0.0);
}

TEST(Scalogram, SinusoidPeaksAtNearestScale) {
  ScalogramConfig cfg;
  cfg.out_cols = 64;
  for (double hz : {3.0, 8.0, 20.0}) {
    const auto sc = scalogram(sinusoid(hz, 100, 512), cfg);
    Eigen::Index best_row = 0;
    (sc.power.array().square().rowwise().sum()).maxCoeff(&best_row);
    std::size_t nearest = 0;
    for (std::size_t k = 0; k < sc.scales_hz.size(); ++k) {
      if (std::abs(std::log(sc.scales_hz[k] / hz)) < std::abs(std::log(sc.scales_hz[nearest] / hz))) nearest = k;
    }
    EXPECT_EQ(static_cast<std::size_t>(best_row), nearest) << hz << " Hz";
  }
}

TEST(Scalogram, ChirpRidgeIsMonotone) {
  const double fs = 100;
  const std::size_t n = 1024;
  Signal1D s;
  s.sample_rate = fs;
  const double dur = n / fs, f0 = 5, f1 = 20;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / fs;
    s.samples.push_back(std::sin(2 * kPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)));
  }
  ScalogramConfig cfg;
  cfg.n_scales = 48;
  cfg.out_rows = 48;
  cfg.out_cols = 32;
  const auto sc = scalogram(s, cfg);
  double prev = 0;
  // Skip columns within the widest wavelet support of the edges.
  for (Eigen::Index c = 3; c < sc.power.cols() - 3; ++c) {
    Eigen::Index r;
    sc.power.col(c).maxCoeff(&r);
    const double f = sc.scales_hz[static_cast<std::size_t>(r)];
    EXPECT_GE(f, prev) << "column " << c;
    prev = f;
  }
}

TEST(Scalogram, LinearBeforeNormalization) {
  Rng rng(8);
  Signal1D s;
  s.sample_rate = 120;
  for (int i = 0; i < 200; ++i) s.samples.push_back(rng.normal());
  Signal1D scaled = s;
  for (double& v : scaled.samples) v *= 3.5;
  ScalogramConfig cfg;
  cfg.normalize = false;
  const auto a = scalogram(s, cfg);
  const auto b = scalogram(scaled, cfg);
  EXPECT_LT((b.power - 3.5 * a.power).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Scalogram, NormalizedToUnitPeakAndMonotoneScales) {
  const auto sc = scalogram(sinusoid(7, 100, 256));
  EXPECT_NEAR(sc.power.maxCoeff(), 1.0, 1e-12);
  EXPECT_GE(sc.power.minCoeff(), 0.0);
  for (std::size_t k = 1; k < sc.scales_hz.size(); ++k) EXPECT_LT(sc.scales_hz[k], sc.scales_hz[k - 1]);
  EXPECT_NEAR(sc.scales_hz.front(), 45.0, 1e-9);
  EXPECT_NEAR(sc.scales_hz.back(), 0.5, 1e-9);
}

TEST(Scalogram, ClipsToNyquist) {
  const auto sc = scalogram(sinusoid(7, 60, 256));
  EXPECT_NEAR(sc.scales_hz.front(), 30.0, 1e-9);
}

// ---------------------------------------------------------------------------

TEST(DomainViews, AlignedAndStandardized) {
  SynthConfig cfg;
  cfg.n_patients = 6;
  cfg.signals_per_patient = 2;
  cfg.length = 128;
  const auto d = generate_synthetic(cfg);
  ViewConfig vc;
  vc.scalogram.out_rows = vc.scalogram.out_cols = 16;
  const auto v = build_domain_views(d, vc);
  EXPECT_EQ(v.time.rows(), 12);
  EXPECT_EQ(v.frequency.rows(), 12);
  EXPECT_EQ(v.frequency.cols(), 65);
  ASSERT_EQ(v.time_frequency.size(), 12u);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(v.time.data(i, 5), d.signals[static_cast<std::size_t>(i)].samples[5]);
    EXPECT_EQ(v.time_frequency[static_cast<std::size_t>(i)].signal_ref, d.signals[static_cast<std::size_t>(i)].source_id);
  }
  for (Eigen::Index c = 0; c < v.frequency.cols(); ++c) {
    const double mu = v.frequency.data.col(c).mean();
    const double sd = std::sqrt((v.frequency.data.col(c).array() - mu).square().mean());
    EXPECT_LT(std::abs(mu), 1e-9);
    if (v.frequency_scaler.sds(c) > 0) {
      EXPECT_NEAR(sd, 1.0, 1e-9);
    }
  }
}

TEST(DomainViews, PermutationEquivariant) {
  SynthConfig cfg;
  cfg.n_patients = 5;
  cfg.signals_per_patient = 2;
  cfg.length = 96;
  const auto d = generate_synthetic(cfg);
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng(3).shuffle(perm.begin(), perm.end());
  ViewConfig vc;
  vc.scalogram.out_rows = vc.scalogram.out_cols = 8;
  const auto a = build_domain_views(d, vc);
  const auto b = build_domain_views(d.subset(perm), vc);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto p = static_cast<Eigen::Index>(perm[i]);
    EXPECT_EQ((b.time.data.row(r) - a.time.data.row(p)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((b.frequency.data.row(r) - a.frequency.data.row(p)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ((b.time_frequency[i].power - a.time_frequency[perm[i]].power).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(DomainViews, FittedScalerIsReused) {
  SynthConfig cfg;
  cfg.n_patients = 4;
  cfg.signals_per_patient = 2;
  cfg.length = 64;
  const auto d = generate_synthetic(cfg);
  ViewConfig vc;
  vc.scalogram.out_rows = vc.scalogram.out_cols = 8;
  const auto train = build_domain_views(d, vc);
  const auto again = build_domain_views(d.subset({0, 1}), vc, &train.frequency_scaler);
  EXPECT_LT((again.frequency.data.row(1) - train.frequency.data.row(1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FeatureMatrixCsv, WritesHeaderAndRows) {
  FeatureMatrix m;
  m.data.resize(2, 2);
  m.data << 1, 2.5, -3, 0.1;
  EXPECT_EQ(to_csv(m), "f0,f1\n1,2.5\n-3,0.1\n");
}
