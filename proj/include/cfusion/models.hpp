#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cfusion/common.hpp"
#include "cfusion/dsp.hpp"
#include "cfusion/nn.hpp"

namespace cfusion {

enum class ModelKind { OneD, TwoD, Transformer, Mlp };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::OneD: return "1dcnn";
    case ModelKind::TwoD: return "2dcnn";
    case ModelKind::Transformer: return "transformer";
    case ModelKind::Mlp: return "mlp";
  }
  return "?";
}

// Width knob over the reference architectures. Filter counts never drop
// below 4 and dense widths never below 8.
struct ArchScale {
  double width_mult = 0.125;
  int heads = 2;
  int key_dim = 16;
  int ffn_units = 0;     // transformer feed-forward inner width; 0 = 512 * width_mult
  int fusion_units = 0;  // hybrid adapter/fusion width; 0 = 256 * width_mult
  bool batch_norm = true;

  int filters(int base) const { return std::max(4, static_cast<int>(std::lround(base * width_mult))); }
  int units(int base) const { return std::max(8, static_cast<int>(std::lround(base * width_mult))); }
  int ffn() const { return ffn_units > 0 ? ffn_units : units(512); }
  int fusion() const { return fusion_units > 0 ? fusion_units : units(256); }
};

inline void validate(const ArchScale& s) {
  if (!(s.width_mult > 0 && s.width_mult <= 1)) throw BuildError("width_mult must be in (0, 1]");
  if (s.heads < 1 || s.key_dim < 1) throw BuildError("attention heads and key_dim must be positive");
  if (s.ffn_units < 0 || s.fusion_units < 0) throw BuildError("layer widths must be positive");
}

// A trained or trainable unimodal network plus the two layers other
// components read from: the penultimate Dense (feature extraction) and the
// end of the reusable trunk (hybrid branches).
struct Model {
  nn::Net net;
  ModelKind kind = ModelKind::OneD;
  std::string penultimate;
  std::string branch_tap;
};

namespace detail {

inline int conv_block(nn::Net& net, int h, nn::LayerSpec conv, const ArchScale& s, bool two_d) {
  h = net.add(std::move(conv), h);
  if (s.batch_norm) h = net.add(nn::simple(nn::LayerKind::BatchNorm), h);
  return net.add(two_d ? nn::maxpool2d(2) : nn::maxpool1d(2), h);
}

inline void classifier_head(nn::Net& net, int h, int classes) {
  net.add(nn::simple(nn::LayerKind::Softmax), net.add(nn::dense(classes), h, "logits"), "probs");
}

}  // namespace detail

// Three conv blocks over a (length, 1) signal.
inline Model build_1dcnn(int length, int classes, const ArchScale& s, std::uint64_t seed) {
  validate(s);
  Model m{nn::Net(seed), ModelKind::OneD, "penultimate", "penultimate"};
  auto& net = m.net;
  int h = net.input({length, 1}, "signal");
  h = detail::conv_block(net, h, nn::conv1d(s.filters(64), 7, true, 1e-3), s, false);
  h = detail::conv_block(net, h, nn::conv1d(s.filters(128), 7, true, 1e-3), s, false);
  h = detail::conv_block(net, h, nn::conv1d(s.filters(256), 5, true, 1e-3), s, false);
  h = net.add(nn::simple(nn::LayerKind::Flatten), h);
  h = net.add(nn::dense(s.units(512), true, 1e-3), h, "penultimate");
  detail::classifier_head(net, net.add(nn::dropout(0.5), h), classes);
  return m;
}

// Four conv blocks over a (size, size, 1) image; needs 16 | size at minimum.
inline Model build_2dcnn(int rows, int cols, int classes, const ArchScale& s, std::uint64_t seed) {
  validate(s);
  if (rows < 16 || cols < 16)
    throw ShapeError("2D-CNN input " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " is too small for four 2x2 poolings");
  Model m{nn::Net(seed), ModelKind::TwoD, "penultimate", "trunk"};
  auto& net = m.net;
  int h = net.input({rows, cols, 1}, "image");
  h = detail::conv_block(net, h, nn::conv2d(s.filters(32), 3), s, true);
  h = detail::conv_block(net, h, nn::conv2d(s.filters(64), 3), s, true);
  h = net.add(nn::dropout(0.2), h);
  h = detail::conv_block(net, h, nn::conv2d(s.filters(128), 3), s, true);
  h = detail::conv_block(net, h, nn::conv2d(s.filters(256), 3), s, true);
  h = net.add(nn::simple(nn::LayerKind::Flatten), h, "trunk");
  h = net.add(nn::dense(s.units(512), true), h, "penultimate");
  detail::classifier_head(net, net.add(nn::dropout(0.5), h), classes);
  return m;
}

// Conv front end, one post-norm encoder block, then the fusion head. The
// dropout and L2 live only in the head.
inline Model build_cnn_transformer(int length, int classes, const ArchScale& s, std::uint64_t seed) {
  validate(s);
  Model m{nn::Net(seed), ModelKind::Transformer, "penultimate", "penultimate"};
  auto& net = m.net;
  int x = net.input({length, 1}, "spectrum");
  x = net.add(nn::conv1d(s.filters(128), 5, true, 5e-5), x);
  x = net.add(nn::maxpool1d(2), x);
  const int width = net.node(x).out_shape.back();
  const int att = net.add(nn::attention(s.heads, s.key_dim), x);
  const int r1 = net.add(nn::simple(nn::LayerKind::LayerNorm), net.add(nn::simple(nn::LayerKind::Add), {x, att}));
  const int ff = net.add(nn::dense(width), net.add(nn::dense(s.ffn(), true), r1));
  const int r2 = net.add(nn::simple(nn::LayerKind::LayerNorm), net.add(nn::simple(nn::LayerKind::Add), {r1, ff}));
  int h = net.add(nn::simple(nn::LayerKind::Flatten), r2);
  h = net.add(nn::dense(s.units(1024), true, 5e-5), h, "penultimate");
  detail::classifier_head(net, net.add(nn::dropout(0.1), h), classes);
  return m;
}

// Two-layer perceptron over a flat feature vector; used for feature-level
// domains.
inline Model build_mlp(int dims, int classes, int hidden, std::uint64_t seed, double drop = 0.2) {
  if (dims < 1 || hidden < 1) throw BuildError("MLP dimensions must be positive");
  Model m{nn::Net(seed), ModelKind::Mlp, "penultimate", "penultimate"};
  auto& net = m.net;
  int h = net.input({dims}, "features");
  h = net.add(nn::dense(hidden, true), h);
  h = net.add(nn::dense(hidden, true), h, "penultimate");
  detail::classifier_head(net, net.add(nn::dropout(drop), h), classes);
  return m;
}

// Eval-mode activations at `tap` (default: the penultimate layer), one
// flattened row per input row.
inline FeatureMatrix extract_deep_features(const Model& m, const std::vector<nn::Tensor>& inputs,
                                           std::string tap = "") {
  if (tap.empty()) tap = m.penultimate;
  const auto act = m.net.activations(inputs, m.net.find(tap));
  FeatureMatrix f;
  f.data = nn::to_matrix(act);
  f.domain = Domain::Deep;
  return f;
}

struct Hybrid {
  nn::Net net;
  std::vector<std::string> adapters;  // one Dense per branch, in branch order
  std::vector<ModelKind> branches;
};

// Intermediate fusion. Each branch contributes a copy of its trunk up to the
// branch tap (frozen unless `finetune`), then Flatten -> Dropout(0.5) ->
// Dense(relu) adapter. Adapters are concatenated into Dense(relu, L1 0.01) ->
// Dropout(0.5) -> Dense -> Softmax. Inputs follow branch order.
inline Hybrid build_hybrid(const std::vector<const Model*>& branches, int classes, const ArchScale& s,
                           std::uint64_t seed, bool finetune = false) {
  validate(s);
  if (branches.size() < 2 || branches.size() > 3) throw BuildError("a hybrid needs 2 or 3 branches");
  Hybrid hy{nn::Net(seed), {}, {}};
  auto& net = hy.net;
  std::vector<int> adapters;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const auto& src = branches[b]->net;
    const std::string prefix = "b" + std::to_string(b) + "_" + std::string(to_string(branches[b]->kind)) + "/";
    const int tap = src.find(branches[b]->branch_tap);
    std::vector<char> keep(static_cast<std::size_t>(tap) + 1, 0);
    keep[static_cast<std::size_t>(tap)] = 1;
    for (int i = tap; i >= 0; --i)
      if (keep[static_cast<std::size_t>(i)])
        for (int j : src.node(i).inputs) keep[static_cast<std::size_t>(j)] = 1;
    std::vector<int> map(keep.size(), -1);
    for (int i = 0; i <= tap; ++i) {
      if (!keep[static_cast<std::size_t>(i)]) continue;
      const auto& n = src.node(i);
      auto spec = n.spec;
      spec.name = prefix + spec.name;
      std::vector<int> in;
      for (int j : n.inputs) in.push_back(map[static_cast<std::size_t>(j)]);
      const int id = net.add(spec, in);
      map[static_cast<std::size_t>(i)] = id;
      const auto& dst_params = net.node(id).params;
      for (std::size_t k = 0; k < n.params.size(); ++k)
        net.params()[static_cast<std::size_t>(dst_params[k])].value = src.params()[static_cast<std::size_t>(n.params[k])].value;
      if (!finetune) net.freeze(id);
    }
    int h = net.add(nn::simple(nn::LayerKind::Flatten), map[static_cast<std::size_t>(tap)], prefix + "flatten");
    h = net.add(nn::dropout(0.5), h, prefix + "dropout");
    const std::string name = "adapter_" + std::to_string(b);
    adapters.push_back(net.add(nn::dense(s.fusion(), true), h, name));
    hy.adapters.push_back(name);
    hy.branches.push_back(branches[b]->kind);
  }
  int h = net.add(nn::simple(nn::LayerKind::Concat), adapters);
  h = net.add(nn::dense(s.fusion(), true, 0.0, 0.01), h, "fusion");
  detail::classifier_head(net, net.add(nn::dropout(0.5), h), classes);
  return hy;
}

// Redundancy penalties between two batches of features. Columns are
// standardized within the batch (variance + 1e-10, so dead units give zero
// rows), R = Zi^T Zj / n, and
//   mi    = mean(R^2)
//   ortho = ||R||_F / sqrt(di * dj)
struct PairPenalty {
  double mi = 0.0;
  double ortho = 0.0;
  Eigen::MatrixXd grad_i;  // d(l1 * mi + l2 * ortho) / d(Fi)
  Eigen::MatrixXd grad_j;
};

namespace detail {

struct Standardized {
  Eigen::MatrixXd z;
  Eigen::RowVectorXd inv_sd;
};

inline Standardized standardize_batch(const Eigen::MatrixXd& f) {
  const Eigen::RowVectorXd mean = f.colwise().mean();
  Eigen::MatrixXd c = f.rowwise() - mean;
  const Eigen::RowVectorXd inv = (c.array().square().colwise().mean() + 1e-10).rsqrt();
  return {c.array().rowwise() * inv.array(), inv};
}

// Backward through per-column standardization.
inline Eigen::MatrixXd standardize_backward(const Standardized& s, const Eigen::MatrixXd& dz) {
  const Eigen::RowVectorXd m1 = dz.colwise().mean();
  const Eigen::RowVectorXd m2 = (dz.array() * s.z.array()).colwise().mean();
  return ((dz.rowwise() - m1).array() - s.z.array().rowwise() * m2.array()).rowwise() * s.inv_sd.array();
}

}  // namespace detail

inline PairPenalty pair_penalty(const Eigen::MatrixXd& fi, const Eigen::MatrixXd& fj, double l1, double l2) {
  const auto n = fi.rows();
  if (fj.rows() != n) throw ShapeError("penalty batches have different row counts");
  if (n < 4) throw InvalidInput("batch of " + std::to_string(n) + " is too small for correlation penalties (need 4)");
  const auto si = detail::standardize_batch(fi), sj = detail::standardize_batch(fj);
  const Eigen::MatrixXd r = si.z.transpose() * sj.z / static_cast<double>(n);
  const double dd = static_cast<double>(fi.cols() * fj.cols());
  const double norm = r.norm();
  PairPenalty p;
  p.mi = r.squaredNorm() / dd;
  p.ortho = norm / std::sqrt(dd);
  Eigen::MatrixXd g = (2 * l1 / dd) * r;
  if (norm > 0) g += (l2 / (norm * std::sqrt(dd))) * r;
  p.grad_i = detail::standardize_backward(si, sj.z * g.transpose() / static_cast<double>(n));
  p.grad_j = detail::standardize_backward(sj, si.z * g / static_cast<double>(n));
  return p;
}

struct ComplementaryLoss {
  double value = 0.0;
  double ce = 0.0;
  double mi = 0.0;
  double ortho = 0.0;
  nn::Tensor grad_logits;
  Eigen::MatrixXd grad_i, grad_j;
};

// CE + l1 * L_MI + l2 * L_Ortho for one pair of adapter activations.
inline ComplementaryLoss complementary_loss(const nn::Tensor& probs, const std::vector<int>& labels,
                                            const Eigen::MatrixXd& fi, const Eigen::MatrixXd& fj, double l1,
                                            double l2) {
  auto ce = nn::cross_entropy(probs, labels);
  auto pen = pair_penalty(fi, fj, l1, l2);
  ComplementaryLoss out;
  out.ce = ce.value;
  out.mi = pen.mi;
  out.ortho = pen.ortho;
  out.value = ce.value + l1 * pen.mi + l2 * pen.ortho;
  out.grad_logits = std::move(ce.grad_logits);
  out.grad_i = std::move(pen.grad_i);
  out.grad_j = std::move(pen.grad_j);
  return out;
}

// Training hook adding the penalty terms over every adapter pair. With
// l1 = l2 = 0 it contributes nothing, so training reduces to plain CE.
inline nn::AuxLossFn complementarity_aux(const Hybrid& hy, double l1, double l2) {
  std::vector<int> ids;
  for (const auto& a : hy.adapters) ids.push_back(hy.net.find(a));
  return [ids, l1, l2](const nn::Net&, const nn::Cache& cache) {
    nn::AuxLoss out;
    if (l1 == 0 && l2 == 0) return out;
    std::vector<Eigen::MatrixXd> f, g;
    for (int id : ids) {
      f.push_back(nn::to_matrix(cache.nodes[static_cast<std::size_t>(id)].out));
      g.push_back(Eigen::MatrixXd::Zero(f.back().rows(), f.back().cols()));
    }
    for (std::size_t i = 0; i < f.size(); ++i)
      for (std::size_t j = i + 1; j < f.size(); ++j) {
        const auto p = pair_penalty(f[i], f[j], l1, l2);
        out.value += l1 * p.mi + l2 * p.ortho;
        g[i] += p.grad_i;
        g[j] += p.grad_j;
      }
    for (std::size_t i = 0; i < ids.size(); ++i) out.grads[ids[i]] = nn::from_matrix(g[i]);
    return out;
  };
}

}  // namespace cfusion
