#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cfusion/common.hpp"
#include "cfusion/nn/tensor.hpp"

namespace cfusion::nn {

enum class LayerKind {
  Input,
  Conv1D,
  Conv2D,
  MaxPool1D,
  MaxPool2D,
  Dense,
  ReLU,
  Softmax,
  Flatten,
  Dropout,
  BatchNorm,
  MultiHeadAttention,
  Add,
  LayerNorm,
  Concat,
};

inline constexpr std::string_view kLayerNames[] = {
    "Input",   "Conv1D",  "Conv2D",    "MaxPool1D", "MaxPool2D",          "Dense", "ReLU",      "Softmax",
    "Flatten", "Dropout", "BatchNorm", "MultiHeadAttention", "Add", "LayerNorm", "Concat"};

inline std::string_view to_string(LayerKind k) { return kLayerNames[static_cast<int>(k)]; }

inline LayerKind layer_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kLayerNames); ++i)
    if (kLayerNames[i] == s) return static_cast<LayerKind>(i);
  throw InvalidInput("unknown layer kind '" + std::string(s) + "'");
}

enum class Padding { Same, Valid };

struct LayerSpec {
  LayerKind kind = LayerKind::Input;
  std::string name;
  Shape shape;  // Input only: per-sample shape
  int units = 0;  // Dense units or conv filters
  int kernel = 0;
  Padding padding = Padding::Same;
  int pool = 2;
  double rate = 0.0;
  int heads = 0;
  int key_dim = 0;
  bool relu = false;  // fused activation on Conv/Dense
  double l1 = 0.0;
  double l2 = 0.0;

  bool operator==(const LayerSpec&) const = default;
};

inline LayerSpec conv1d(int filters, int kernel, bool relu = true, double l2 = 0.0, Padding p = Padding::Same) {
  LayerSpec s{LayerKind::Conv1D};
  s.units = filters, s.kernel = kernel, s.relu = relu, s.l2 = l2, s.padding = p;
  return s;
}

inline LayerSpec conv2d(int filters, int kernel, bool relu = true, double l2 = 0.0, Padding p = Padding::Same) {
  auto s = conv1d(filters, kernel, relu, l2, p);
  s.kind = LayerKind::Conv2D;
  return s;
}

inline LayerSpec dense(int units, bool relu = false, double l2 = 0.0, double l1 = 0.0) {
  LayerSpec s{LayerKind::Dense};
  s.units = units, s.relu = relu, s.l2 = l2, s.l1 = l1;
  return s;
}

inline LayerSpec maxpool1d(int pool = 2) {
  LayerSpec s{LayerKind::MaxPool1D};
  s.pool = pool;
  return s;
}

inline LayerSpec maxpool2d(int pool = 2) {
  LayerSpec s{LayerKind::MaxPool2D};
  s.pool = pool;
  return s;
}

inline LayerSpec dropout(double rate) {
  LayerSpec s{LayerKind::Dropout};
  s.rate = rate;
  return s;
}

inline LayerSpec attention(int heads, int key_dim) {
  LayerSpec s{LayerKind::MultiHeadAttention};
  s.heads = heads, s.key_dim = key_dim;
  return s;
}

inline LayerSpec simple(LayerKind k) { return LayerSpec{k}; }

enum class ParamRole { Kernel, Bias, Gamma, Beta, RunningMean, RunningVar };

struct Param {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::Kernel;
  bool trainable = true;
  double l1 = 0.0;
  double l2 = 0.0;
  int node = -1;
  std::vector<double> value, grad, m, v;

  bool is_state() const { return role == ParamRole::RunningMean || role == ParamRole::RunningVar; }
};

struct Node {
  LayerSpec spec;
  std::vector<int> inputs;
  Shape out_shape;  // per sample
  std::vector<int> params;
  bool frozen = false;  // frozen nodes never learn and always run in inference mode
};

struct RunMode {
  bool training = false;
  bool dropout = false;

  static RunMode eval() { return {false, false}; }
  static RunMode train() { return {true, true}; }
  static RunMode train_no_dropout() { return {true, false}; }
};

struct NodeCache {
  Tensor out;
  std::vector<Tensor> aux;
  std::vector<std::size_t> idx;
  bool batch_stats = false;
};

struct Cache {
  std::vector<NodeCache> nodes;
  bool ready = false;
};

// 0.9 rather than 0.99: desk-scale runs see a few dozen updates per epoch, too
// few for a 0.99 average to track the batch statistics.
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kNormEps = 1e-3;

// A layer DAG with value semantics. Nodes are appended in topological order;
// inputs are fed positionally in creation order of the Input nodes.
//
// Init draws come from Rng(hash(seed, "init")), one parameter at a time in
// creation order.
class Net {
 public:
  explicit Net(std::uint64_t seed = 0) : seed_(seed), init_rng_(hash_combine(seed, "init")) {}

  std::uint64_t seed() const { return seed_; }

  int input(Shape sample_shape, std::string name = "") {
    LayerSpec s{LayerKind::Input};
    s.shape = std::move(sample_shape);
    s.name = std::move(name);
    return add(std::move(s), std::vector<int>{});
  }

  int add(LayerSpec spec, int input, std::string name = "") {
    if (!name.empty()) spec.name = std::move(name);
    return add(std::move(spec), std::vector<int>{input});
  }

  int add(LayerSpec spec, std::vector<int> inputs) {
    const int id = static_cast<int>(nodes_.size());
    if (spec.name.empty()) {
      std::string base(to_string(spec.kind));
      std::transform(base.begin(), base.end(), base.begin(), [](unsigned char c) { return std::tolower(c); });
      spec.name = base + "_" + std::to_string(id);
    }
    for (const auto& n : nodes_)
      if (n.spec.name == spec.name) throw BuildError("duplicate layer name '" + spec.name + "'");
    for (int i : inputs)
      if (i < 0 || i >= id) throw BuildError("layer '" + spec.name + "' references an unknown input");
    Node node{std::move(spec), std::move(inputs), {}, {}, false};
    node.out_shape = infer_shape(node);
    nodes_.push_back(std::move(node));
    create_params(id);
    if (nodes_[static_cast<std::size_t>(id)].spec.kind == LayerKind::Input) inputs_.push_back(id);
    output_ = id;
    cache_.ready = false;
    return id;
  }

  void set_output(int node) {
    check_node(node);
    output_ = node;
  }
  int output() const { return output_; }
  const std::vector<int>& inputs() const { return inputs_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  int find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].spec.name == name) return static_cast<int>(i);
    throw StateError("no layer named '" + std::string(name) + "'");
  }

  void freeze(int node, bool frozen = true) {
    check_node(node);
    auto& n = nodes_[static_cast<std::size_t>(node)];
    n.frozen = frozen;
    for (int p : n.params)
      if (!params_[static_cast<std::size_t>(p)].is_state()) params_[static_cast<std::size_t>(p)].trainable = !frozen;
  }

  std::size_t param_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) n += p.value.size();
    return n;
  }

  // Pure evaluation into a caller-owned cache. Batch statistics computed in
  // training mode are left in the cache; forward() folds them into the
  // running averages.
  Tensor run(const std::vector<Tensor>& inputs, RunMode mode, Cache& cache, Rng* rng) const {
    if (inputs.size() != inputs_.size())
      throw ShapeError("expected " + std::to_string(inputs_.size()) + " inputs, got " + std::to_string(inputs.size()));
    if (mode.dropout && rng == nullptr) throw StateError("dropout requested without a generator");
    cache.nodes.assign(nodes_.size(), NodeCache{});
    const int batch = inputs.empty() ? 0 : inputs[0].batch();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto& n = nodes_[static_cast<std::size_t>(inputs_[i])];
      if (inputs[i].sample_shape() != n.spec.shape || inputs[i].batch() != batch)
        throw ShapeError("layer '" + n.spec.name + "': expected (N," + shape_string(n.spec.shape).substr(1) +
                         " with shared N, got " + shape_string(inputs[i].shape));
      cache.nodes[static_cast<std::size_t>(inputs_[i])].out = inputs[i];
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].spec.kind != LayerKind::Input) forward_node(static_cast<int>(i), cache, mode, rng);
    cache.ready = true;
    const auto& out = cache.nodes[static_cast<std::size_t>(output_)].out;
    if (!out.all_finite()) {
      for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!cache.nodes[i].out.all_finite())
          throw NumericError("non-finite activation in layer '" + nodes_[i].spec.name + "'");
    }
    return out;
  }

  Tensor forward(const std::vector<Tensor>& inputs, RunMode mode, Rng* rng = nullptr) {
    Tensor out = run(inputs, mode, cache_, rng);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& c = cache_.nodes[i];
      if (!c.batch_stats) continue;
      const auto& n = nodes_[i];
      auto& rm = params_[static_cast<std::size_t>(n.params[2])].value;
      auto& rv = params_[static_cast<std::size_t>(n.params[3])].value;
      for (std::size_t k = 0; k < rm.size(); ++k) {
        rm[k] = kBatchNormMomentum * rm[k] + (1 - kBatchNormMomentum) * c.aux[2].data[k];
        rv[k] = kBatchNormMomentum * rv[k] + (1 - kBatchNormMomentum) * c.aux[3].data[k];
      }
    }
    return out;
  }

  const Cache& cache() const { return cache_; }

  // Eval-mode output of `node` (default: the net output), computed in chunks.
  Tensor activations(const std::vector<Tensor>& inputs, int node = -1, std::size_t chunk = 256) const {
    if (node < 0) node = output_;
    check_node(node);
    const auto n = static_cast<std::size_t>(inputs.empty() ? 0 : inputs[0].batch());
    Tensor out;
    Cache cache;
    for (std::size_t b = 0; b < n; b += chunk) {
      const std::size_t e = std::min(n, b + chunk);
      std::vector<Tensor> part;
      for (const auto& t : inputs) part.push_back(slice_rows(t, b, e));
      run(part, RunMode::eval(), cache, nullptr);
      const auto& a = cache.nodes[static_cast<std::size_t>(node)].out;
      if (out.empty()) {
        out.shape = a.shape;
        out.shape[0] = 0;
      }
      out.data.insert(out.data.end(), a.data.begin(), a.data.end());
      out.shape[0] += a.batch();
    }
    if (n == 0) throw InvalidInput("empty input batch");
    return out;
  }

  Tensor predict(const std::vector<Tensor>& inputs, std::size_t chunk = 256) const {
    return activations(inputs, output_, chunk);
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  // Accumulates parameter gradients for d(loss)/d(output) = grad_out plus any
  // gradients injected at intermediate nodes. Regularization terms of
  // trainable kernels are added once per call.
  void backward(const Tensor& grad_out, const std::map<int, Tensor>& extra = {}) {
    backward_from(output_, grad_out, extra);
  }

  // Seeds the gradient on the logits feeding a terminal Softmax; with
  // cross-entropy that gradient is (p - y) / N.
  void backward_logits(const Tensor& grad_logits, const std::map<int, Tensor>& extra = {}) {
    const auto& out = nodes_[static_cast<std::size_t>(output_)];
    if (out.spec.kind != LayerKind::Softmax) throw StateError("output layer is not a Softmax");
    backward_from(out.inputs[0], grad_logits, extra);
  }

  double regularization_loss() const {
    double r = 0.0;
    for (const auto& p : params_) {
      if (!p.trainable || (p.l1 == 0 && p.l2 == 0)) continue;
      for (double w : p.value) r += p.l2 * w * w + p.l1 * std::abs(w);
    }
    return r;
  }

  int adam_step = 0;

 private:
  std::uint64_t seed_;
  Rng init_rng_;
  std::vector<Node> nodes_;
  std::vector<Param> params_;
  std::vector<int> inputs_;
  int output_ = -1;
  Cache cache_;

  void check_node(int i) const {
    if (i < 0 || i >= static_cast<int>(nodes_.size())) throw StateError("node index out of range");
  }

  const Shape& in_shape(const Node& n, std::size_t k = 0) const {
    return nodes_[static_cast<std::size_t>(n.inputs.at(k))].out_shape;
  }

  Shape infer_shape(const Node& n) const {
    const auto& s = n.spec;
    const auto fail = [&](const std::string& why) -> Shape { throw ShapeError("layer '" + s.name + "': " + why); };
    const std::size_t want_inputs = s.kind == LayerKind::Input ? 0 : (s.kind == LayerKind::Add || s.kind == LayerKind::Concat) ? 2 : 1;
    if (s.kind == LayerKind::Concat ? n.inputs.size() < 2 : n.inputs.size() != want_inputs)
      return fail("wrong number of inputs");
    const auto positive = [&](int v, const char* what) {
      if (v < 1) fail(std::string(what) + " must be positive");
    };
    switch (s.kind) {
      case LayerKind::Input:
        if (s.shape.empty()) return fail("empty input shape");
        for (int d : s.shape) positive(d, "input dimension");
        return s.shape;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        const std::size_t rank = s.kind == LayerKind::Conv1D ? 2 : 3;
        const auto& in = in_shape(n);
        if (in.size() != rank) return fail("expected input rank " + std::to_string(rank) + ", got " + shape_string(in));
        positive(s.units, "filters");
        positive(s.kernel, "kernel_size");
        Shape out = in;
        for (std::size_t d = 0; d + 1 < rank; ++d) {
          if (s.padding == Padding::Valid) out[d] = in[d] - s.kernel + 1;
          if (out[d] < 1) return fail("input " + shape_string(in) + " smaller than kernel");
        }
        out.back() = s.units;
        return out;
      }
      case LayerKind::MaxPool1D:
      case LayerKind::MaxPool2D: {
        const std::size_t rank = s.kind == LayerKind::MaxPool1D ? 2 : 3;
        const auto& in = in_shape(n);
        if (in.size() != rank) return fail("expected input rank " + std::to_string(rank) + ", got " + shape_string(in));
        positive(s.pool, "pool size");
        Shape out = in;
        for (std::size_t d = 0; d + 1 < rank; ++d) {
          out[d] = in[d] / s.pool;
          if (out[d] < 1) return fail("input " + shape_string(in) + " too small to pool by " + std::to_string(s.pool));
        }
        return out;
      }
      case LayerKind::Dense: {
        positive(s.units, "units");
        Shape out = in_shape(n);
        out.back() = s.units;
        return out;
      }
      case LayerKind::Dropout:
        if (!(s.rate >= 0 && s.rate < 1)) return fail("dropout rate must be in [0, 1)");
        return in_shape(n);
      case LayerKind::ReLU:
      case LayerKind::Softmax:
      case LayerKind::BatchNorm:
      case LayerKind::LayerNorm:
        return in_shape(n);
      case LayerKind::Flatten:
        return {static_cast<int>(shape_size(in_shape(n)))};
      case LayerKind::MultiHeadAttention: {
        const auto& in = in_shape(n);
        if (in.size() != 2) return fail("expected (sequence, embedding) input, got " + shape_string(in));
        if (s.heads < 1 || s.key_dim < 1) throw BuildError("layer '" + s.name + "': heads and key_dim must be positive");
        return in;
      }
      case LayerKind::Add:
        if (in_shape(n, 0) != in_shape(n, 1))
          return fail("cannot add " + shape_string(in_shape(n, 0)) + " and " + shape_string(in_shape(n, 1)));
        return in_shape(n);
      case LayerKind::Concat: {
        Shape out = in_shape(n, 0);
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          const auto& o = in_shape(n, k);
          if (o.size() != out.size() || !std::equal(o.begin(), o.end() - 1, out.begin()))
            return fail("cannot concatenate " + shape_string(out) + " with " + shape_string(o));
          out.back() += o.back();
        }
        return out;
      }
    }
    return fail("unhandled layer kind");
  }

  int new_param(int node, const std::string& suffix, Shape shape, ParamRole role) {
    Param p;
    p.name = nodes_[static_cast<std::size_t>(node)].spec.name + "/" + suffix;
    p.shape = std::move(shape);
    p.role = role;
    p.node = node;
    p.trainable = !p.is_state();
    const auto sz = shape_size(p.shape);
    const double fill = role == ParamRole::Gamma || role == ParamRole::RunningVar ? 1.0 : 0.0;
    p.value.assign(sz, fill);
    p.grad.assign(sz, 0.0);
    p.m.assign(sz, 0.0);
    p.v.assign(sz, 0.0);
    params_.push_back(std::move(p));
    const int id = static_cast<int>(params_.size()) - 1;
    nodes_[static_cast<std::size_t>(node)].params.push_back(id);
    return id;
  }

  void init_uniform(int param, double limit) {
    for (double& w : params_[static_cast<std::size_t>(param)].value) w = init_rng_.uniform(-limit, limit);
  }

  void create_params(int id) {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    const auto& s = n.spec;
    const auto kernel = [&](Shape shape, int fan_in) {
      const int p = new_param(id, "kernel", std::move(shape), ParamRole::Kernel);
      params_[static_cast<std::size_t>(p)].l1 = s.l1;
      params_[static_cast<std::size_t>(p)].l2 = s.l2;
      init_uniform(p, std::sqrt(6.0 / fan_in));  // He-uniform
    };
    switch (s.kind) {
      case LayerKind::Dense: {
        const int din = in_shape(n).back();
        kernel({din, s.units}, din);
        new_param(id, "bias", {s.units}, ParamRole::Bias);
        break;
      }
      case LayerKind::Conv1D: {
        const int c = in_shape(n).back();
        kernel({s.kernel, c, s.units}, s.kernel * c);
        new_param(id, "bias", {s.units}, ParamRole::Bias);
        break;
      }
      case LayerKind::Conv2D: {
        const int c = in_shape(n).back();
        kernel({s.kernel, s.kernel, c, s.units}, s.kernel * s.kernel * c);
        new_param(id, "bias", {s.units}, ParamRole::Bias);
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::LayerNorm: {
        const int c = in_shape(n).back();
        new_param(id, "gamma", {c}, ParamRole::Gamma);
        new_param(id, "beta", {c}, ParamRole::Beta);
        if (s.kind == LayerKind::BatchNorm) {
          new_param(id, "moving_mean", {c}, ParamRole::RunningMean);
          new_param(id, "moving_variance", {c}, ParamRole::RunningVar);
        }
        break;
      }
      case LayerKind::MultiHeadAttention: {
        const int e = in_shape(n).back();
        const int hk = s.heads * s.key_dim;
        for (const char* w : {"query", "key", "value"}) {
          const int p = new_param(id, std::string(w) + "/kernel", {e, hk}, ParamRole::Kernel);
          init_uniform(p, std::sqrt(6.0 / (e + hk)));  // Xavier
          new_param(id, std::string(w) + "/bias", {hk}, ParamRole::Bias);
        }
        const int p = new_param(id, "output/kernel", {hk, e}, ParamRole::Kernel);
        init_uniform(p, std::sqrt(6.0 / (e + hk)));
        new_param(id, "output/bias", {e}, ParamRole::Bias);
        break;
      }
      default:
        break;
    }
  }

  const std::vector<double>& pv(const Node& n, std::size_t k) const {
    return params_[static_cast<std::size_t>(n.params[k])].value;
  }

  ConstMatMap pmat(const Node& n, std::size_t k, Eigen::Index rows) const {
    const auto& v = pv(n, k);
    return {v.data(), rows, static_cast<Eigen::Index>(v.size()) / rows};
  }

  static Eigen::Map<const Eigen::RowVectorXd> prow(const std::vector<double>& v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
  }

  // --- forward -------------------------------------------------------------

  // im2col for stride-1 convolution. Column order is (kernel offsets..., channel).
  static Tensor im2col_1d(const Tensor& x, int k, int lo, int pad) {
    const int n = x.shape[0], l = x.shape[1], c = x.shape[2];
    Tensor cols({n * lo, k * c});
    for (int b = 0; b < n; ++b)
      for (int t = 0; t < lo; ++t) {
        double* row = cols.data.data() + static_cast<std::size_t>((b * lo + t) * k * c);
        for (int j = 0; j < k; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= l) continue;
          std::copy_n(x.data.data() + static_cast<std::size_t>((b * l + src) * c), c, row + j * c);
        }
      }
    return cols;
  }

  static void col2im_1d(const RowMat& dcols, Tensor& dx, int k, int lo, int pad) {
    const int n = dx.shape[0], l = dx.shape[1], c = dx.shape[2];
    for (int b = 0; b < n; ++b)
      for (int t = 0; t < lo; ++t) {
        const double* row = dcols.data() + static_cast<std::size_t>((b * lo + t) * k * c);
        for (int j = 0; j < k; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= l) continue;
          double* dst = dx.data.data() + static_cast<std::size_t>((b * l + src) * c);
          for (int ch = 0; ch < c; ++ch) dst[ch] += row[j * c + ch];
        }
      }
  }

  static Tensor im2col_2d(const Tensor& x, int k, int ho, int wo, int pad) {
    const int n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    Tensor cols({n * ho * wo, k * k * c});
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double* row = cols.data.data() + static_cast<std::size_t>(((b * ho + i) * wo + j) * k * k * c);
          for (int di = 0; di < k; ++di) {
            const int si = i + di - pad;
            if (si < 0 || si >= h) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int sj = j + dj - pad;
              if (sj < 0 || sj >= w) continue;
              std::copy_n(x.data.data() + static_cast<std::size_t>(((b * h + si) * w + sj) * c), c,
                          row + (di * k + dj) * c);
            }
          }
        }
    return cols;
  }

  static void col2im_2d(const RowMat& dcols, Tensor& dx, int k, int ho, int wo, int pad) {
    const int n = dx.shape[0], h = dx.shape[1], w = dx.shape[2], c = dx.shape[3];
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const double* row = dcols.data() + static_cast<std::size_t>(((b * ho + i) * wo + j) * k * k * c);
          for (int di = 0; di < k; ++di) {
            const int si = i + di - pad;
            if (si < 0 || si >= h) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int sj = j + dj - pad;
              if (sj < 0 || sj >= w) continue;
              double* dst = dx.data.data() + static_cast<std::size_t>(((b * h + si) * w + sj) * c);
              const double* src = row + (di * k + dj) * c;
              for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
          }
        }
  }

  static void relu_inplace(Tensor& t) {
    for (double& v : t.data) v = v < 0 ? 0.0 : v;  // NaN propagates
  }

  static void softmax_rows(MatMap m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      auto r = m.row(i);
      r.array() -= r.maxCoeff();
      r = r.array().exp().matrix();
      r /= r.sum();
    }
  }

  void forward_node(int id, Cache& cache, RunMode mode, Rng* rng) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    const auto& s = n.spec;
    auto& c = cache.nodes[static_cast<std::size_t>(id)];
    const auto in = [&](std::size_t k) -> const Tensor& { return cache.nodes[static_cast<std::size_t>(n.inputs[k])].out; };
    const Tensor& x = in(0);
    const int batch = x.batch();
    Shape out_shape{batch};
    out_shape.insert(out_shape.end(), n.out_shape.begin(), n.out_shape.end());
    const bool training = mode.training && !n.frozen;

    switch (s.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Dense: {
        c.out = Tensor(out_shape);
        auto y = c.out.mat();
        y.noalias() = x.mat() * pmat(n, 0, x.last());
        y.rowwise() += prow(pv(n, 1));
        if (s.relu) relu_inplace(c.out);
        break;
      }
      case LayerKind::Conv1D: {
        const int lo = n.out_shape[0];
        const int pad = s.padding == Padding::Same ? (s.kernel - 1) / 2 : 0;
        c.aux = {im2col_1d(x, s.kernel, lo, pad)};
        c.out = Tensor(out_shape);
        auto y = c.out.mat();
        y.noalias() = c.aux[0].mat() * pmat(n, 0, s.kernel * x.last());
        y.rowwise() += prow(pv(n, 1));
        if (s.relu) relu_inplace(c.out);
        break;
      }
      case LayerKind::Conv2D: {
        const int pad = s.padding == Padding::Same ? (s.kernel - 1) / 2 : 0;
        c.aux = {im2col_2d(x, s.kernel, n.out_shape[0], n.out_shape[1], pad)};
        c.out = Tensor(out_shape);
        auto y = c.out.mat();
        y.noalias() = c.aux[0].mat() * pmat(n, 0, s.kernel * s.kernel * x.last());
        y.rowwise() += prow(pv(n, 1));
        if (s.relu) relu_inplace(c.out);
        break;
      }
      case LayerKind::MaxPool1D:
      case LayerKind::MaxPool2D: {
        // Windows are stride = pool, valid; ties go to the first element.
        c.out = Tensor(out_shape);
        c.idx.assign(c.out.size(), 0);
        const bool two = s.kind == LayerKind::MaxPool2D;
        const int ch = x.last();
        const int h = x.shape[1], w = two ? x.shape[2] : 1;
        const int ho = n.out_shape[0], wo = two ? n.out_shape[1] : 1;
        const int ph = s.pool, pw = two ? s.pool : 1;
        std::size_t o = 0;
        for (int b = 0; b < batch; ++b)
          for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
              for (int k = 0; k < ch; ++k, ++o) {
                std::size_t best = 0;
                double bv = -INFINITY;
                for (int di = 0; di < ph; ++di)
                  for (int dj = 0; dj < pw; ++dj) {
                    const auto src = static_cast<std::size_t>(((b * h + i * ph + di) * w + j * pw + dj) * ch + k);
                    if (x.data[src] > bv) bv = x.data[src], best = src;
                  }
                c.out.data[o] = bv;
                c.idx[o] = best;
              }
        break;
      }
      case LayerKind::ReLU:
        c.out = x;
        relu_inplace(c.out);
        break;
      case LayerKind::Softmax:
        c.out = x;
        softmax_rows(c.out.mat());
        break;
      case LayerKind::Flatten:
        c.out = Tensor(out_shape, x.data);
        break;
      case LayerKind::Dropout: {
        c.out = x;
        if (!(training && mode.dropout) || s.rate == 0) break;
        // Inverted dropout: one uniform draw per element, in buffer order.
        c.aux = {Tensor(x.shape)};
        const double keep = 1.0 - s.rate;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double m = rng->uniform() < s.rate ? 0.0 : 1.0 / keep;
          c.aux[0].data[i] = m;
          c.out.data[i] *= m;
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const int ch = x.last();
        const auto xm = x.mat();
        Eigen::RowVectorXd mean, var;
        if (training) {
          mean = xm.colwise().mean();
          var = (xm.rowwise() - mean).array().square().colwise().mean();
          c.batch_stats = true;
        } else {
          mean = prow(pv(n, 2));
          var = prow(pv(n, 3));
        }
        const Eigen::RowVectorXd inv = (var.array() + kNormEps).rsqrt();
        Tensor xhat(x.shape);
        xhat.mat() = (xm.rowwise() - mean).array().rowwise() * inv.array();
        c.out = Tensor(x.shape);
        c.out.mat() = (xhat.mat().array().rowwise() * prow(pv(n, 0)).array()).rowwise() + prow(pv(n, 1)).array();
        Tensor inv_t({ch}), mean_t({ch}), var_t({ch});
        Eigen::Map<Eigen::RowVectorXd>(inv_t.data.data(), ch) = inv;
        Eigen::Map<Eigen::RowVectorXd>(mean_t.data.data(), ch) = mean;
        Eigen::Map<Eigen::RowVectorXd>(var_t.data.data(), ch) = var;
        c.aux = {std::move(xhat), std::move(inv_t), std::move(mean_t), std::move(var_t)};
        break;
      }
      case LayerKind::LayerNorm: {
        const auto xm = x.mat();
        const Eigen::VectorXd mean = xm.rowwise().mean();
        const Eigen::VectorXd inv =
            ((xm.colwise() - mean).array().square().rowwise().mean() + kNormEps).rsqrt().matrix();
        Tensor xhat(x.shape), inv_t({static_cast<int>(inv.size())});
        xhat.mat() = (xm.colwise() - mean).array().colwise() * inv.array();
        Eigen::Map<Eigen::VectorXd>(inv_t.data.data(), inv.size()) = inv;
        c.out = Tensor(x.shape);
        c.out.mat() = (xhat.mat().array().rowwise() * prow(pv(n, 0)).array()).rowwise() + prow(pv(n, 1)).array();
        c.aux = {std::move(xhat), std::move(inv_t)};
        break;
      }
      case LayerKind::Add:
        c.out = x;
        for (std::size_t i = 0; i < c.out.size(); ++i) c.out.data[i] += in(1).data[i];
        break;
      case LayerKind::Concat: {
        c.out = Tensor(out_shape);
        auto y = c.out.mat();
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto a = in(k).mat();
          y.middleCols(col, a.cols()) = a;
          col += a.cols();
        }
        break;
      }
      case LayerKind::MultiHeadAttention:
        attention_forward(n, x, c);
        break;
    }
  }

  // Self-attention over (N, T, E). aux = {Q, K, V, A, O} with A laid out as
  // (N, heads, T, T).
  void attention_forward(const Node& n, const Tensor& x, NodeCache& c) const {
    const int batch = x.shape[0], t = x.shape[1], e = x.shape[2];
    const int h = n.spec.heads, k = n.spec.key_dim, hk = h * k;
    const double scale = 1.0 / std::sqrt(static_cast<double>(k));
    const auto xm = x.mat();
    Tensor q({batch, t, hk}), kk({batch, t, hk}), v({batch, t, hk}), a({batch, h, t, t}), o({batch, t, hk});
    q.mat().noalias() = xm * pmat(n, 0, e);
    q.mat().rowwise() += prow(pv(n, 1));
    kk.mat().noalias() = xm * pmat(n, 2, e);
    kk.mat().rowwise() += prow(pv(n, 3));
    v.mat().noalias() = xm * pmat(n, 4, e);
    v.mat().rowwise() += prow(pv(n, 5));
    const auto qm = q.mat(), km = kk.mat(), vm = v.mat();
    auto om = o.mat();
    for (int b = 0; b < batch; ++b)
      for (int hd = 0; hd < h; ++hd) {
        MatMap ab(a.data.data() + static_cast<std::size_t>((b * h + hd) * t * t), t, t);
        ab.noalias() = scale * qm.block(b * t, hd * k, t, k) * km.block(b * t, hd * k, t, k).transpose();
        softmax_rows(ab);
        om.block(b * t, hd * k, t, k).noalias() = ab * vm.block(b * t, hd * k, t, k);
      }
    c.out = Tensor(x.shape);
    c.out.mat().noalias() = om * pmat(n, 6, hk);
    c.out.mat().rowwise() += prow(pv(n, 7));
    c.aux = {std::move(q), std::move(kk), std::move(v), std::move(a), std::move(o)};
  }

  // --- backward ------------------------------------------------------------

  MatMap gmat(const Node& n, std::size_t k, Eigen::Index rows) {
    auto& g = params_[static_cast<std::size_t>(n.params[k])].grad;
    return {g.data(), rows, static_cast<Eigen::Index>(g.size()) / rows};
  }

  Eigen::Map<Eigen::RowVectorXd> grow(const Node& n, std::size_t k) {
    auto& g = params_[static_cast<std::size_t>(n.params[k])].grad;
    return {g.data(), static_cast<Eigen::Index>(g.size())};
  }

  bool learns(const Node& n) const {
    for (int p : n.params)
      if (params_[static_cast<std::size_t>(p)].trainable) return true;
    return false;
  }

  void backward_from(int start, const Tensor& seed, const std::map<int, Tensor>& extra) {
    if (!cache_.ready) throw StateError("backward called without a forward cache");
    const std::size_t nn = nodes_.size();
    // Only propagate into nodes with something trainable upstream.
    std::vector<char> upstream(nn, 0);
    for (std::size_t i = 0; i < nn; ++i) {
      upstream[i] = learns(nodes_[i]);
      for (int j : nodes_[i].inputs) upstream[i] |= upstream[static_cast<std::size_t>(j)];
    }
    std::vector<Tensor> grads(nn);
    const auto accumulate = [&](int node, const Tensor& g) {
      auto& dst = grads[static_cast<std::size_t>(node)];
      if (g.shape != cache_.nodes[static_cast<std::size_t>(node)].out.shape)
        throw ShapeError("gradient for layer '" + nodes_[static_cast<std::size_t>(node)].spec.name + "' has shape " +
                         shape_string(g.shape));
      if (dst.empty()) {
        dst = g;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
      }
    };
    accumulate(start, seed);
    for (const auto& [node, g] : extra) {
      check_node(node);
      accumulate(node, g);
    }
    for (int i = static_cast<int>(nn) - 1; i >= 0; --i) {
      if (grads[static_cast<std::size_t>(i)].empty() || !upstream[static_cast<std::size_t>(i)]) continue;
      backward_node(i, grads[static_cast<std::size_t>(i)], grads, upstream);
    }
    for (auto& p : params_) {
      if (!p.trainable || (p.l1 == 0 && p.l2 == 0)) continue;
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double w = p.value[k];
        p.grad[k] += 2 * p.l2 * w + p.l1 * static_cast<double>((w > 0) - (w < 0));
      }
    }
  }

  void backward_node(int id, Tensor& g, std::vector<Tensor>& grads, const std::vector<char>& upstream) {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    const auto& s = n.spec;
    const auto& c = cache_.nodes[static_cast<std::size_t>(id)];
    const auto in = [&](std::size_t k) -> const Tensor& { return cache_.nodes[static_cast<std::size_t>(n.inputs[k])].out; };
    const auto wants = [&](std::size_t k) { return upstream[static_cast<std::size_t>(n.inputs[k])] != 0; };
    const auto param_trainable = [&](std::size_t k) { return params_[static_cast<std::size_t>(n.params[k])].trainable; };
    const auto send = [&](std::size_t k, Tensor&& dx) {
      auto& dst = grads[static_cast<std::size_t>(n.inputs[k])];
      if (dst.empty()) {
        dst = std::move(dx);
      } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dst.data[i] += dx.data[i];
      }
    };
    const auto relu_mask = [&] {
      if (!s.relu) return;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (c.out.data[i] <= 0) g.data[i] = 0.0;
    };

    switch (s.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Dense: {
        relu_mask();
        const Tensor& x = in(0);
        const auto gm = g.mat();
        if (param_trainable(0)) {
          gmat(n, 0, x.last()).noalias() += x.mat().transpose() * gm;
          grow(n, 1) += gm.colwise().sum();
        }
        if (wants(0)) {
          Tensor dx(x.shape);
          dx.mat().noalias() = gm * pmat(n, 0, x.last()).transpose();
          send(0, std::move(dx));
        }
        break;
      }
      case LayerKind::Conv1D:
      case LayerKind::Conv2D: {
        relu_mask();
        const Tensor& x = in(0);
        const bool two = s.kind == LayerKind::Conv2D;
        const Eigen::Index rows = (two ? s.kernel * s.kernel : s.kernel) * x.last();
        const auto gm = g.mat();
        const auto& cols = c.aux[0];
        if (param_trainable(0)) {
          gmat(n, 0, rows).noalias() += cols.mat().transpose() * gm;
          grow(n, 1) += gm.colwise().sum();
        }
        if (wants(0)) {
          const RowMat dcols = gm * pmat(n, 0, rows).transpose();
          Tensor dx(x.shape);
          const int pad = s.padding == Padding::Same ? (s.kernel - 1) / 2 : 0;
          if (two) {
            col2im_2d(dcols, dx, s.kernel, n.out_shape[0], n.out_shape[1], pad);
          } else {
            col2im_1d(dcols, dx, s.kernel, n.out_shape[0], pad);
          }
          send(0, std::move(dx));
        }
        break;
      }
      case LayerKind::MaxPool1D:
      case LayerKind::MaxPool2D: {
        if (!wants(0)) break;
        Tensor dx(in(0).shape);
        for (std::size_t i = 0; i < g.size(); ++i) dx.data[c.idx[i]] += g.data[i];
        send(0, std::move(dx));
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t i = 0; i < g.size(); ++i)
          if (c.out.data[i] <= 0) g.data[i] = 0.0;
        send(0, std::move(g));
        break;
      case LayerKind::Softmax: {
        Tensor dx(g.shape);
        const auto p = c.out.mat();
        const auto gm = g.mat();
        const Eigen::VectorXd dot = (p.array() * gm.array()).rowwise().sum();
        dx.mat() = p.array() * (gm.colwise() - dot).array();
        send(0, std::move(dx));
        break;
      }
      case LayerKind::Flatten:
        send(0, Tensor(in(0).shape, std::move(g.data)));
        break;
      case LayerKind::Dropout:
        if (!c.aux.empty())
          for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= c.aux[0].data[i];
        send(0, std::move(g));
        break;
      case LayerKind::BatchNorm:
      case LayerKind::LayerNorm: {
        const auto& xhat = c.aux[0];
        const auto gm = g.mat();
        const auto xh = xhat.mat();
        if (param_trainable(0)) {
          grow(n, 0) += (gm.array() * xh.array()).colwise().sum().matrix();
          grow(n, 1) += gm.colwise().sum();
        }
        if (!wants(0)) break;
        const RowMat dxhat = gm.array().rowwise() * prow(pv(n, 0)).array();
        Tensor dx(g.shape);
        auto d = dx.mat();
        if (s.kind == LayerKind::LayerNorm) {
          const Eigen::Map<const Eigen::VectorXd> inv(c.aux[1].data.data(), static_cast<Eigen::Index>(c.aux[1].size()));
          const Eigen::VectorXd s1 = dxhat.rowwise().mean();
          const Eigen::VectorXd s2 = (dxhat.array() * xh.array()).rowwise().mean();
          d = ((dxhat.colwise() - s1).array() - xh.array().colwise() * s2.array()).colwise() * inv.array();
        } else {
          const Eigen::Map<const Eigen::RowVectorXd> inv(c.aux[1].data.data(), static_cast<Eigen::Index>(c.aux[1].size()));
          if (c.batch_stats) {
            const Eigen::RowVectorXd s1 = dxhat.colwise().mean();
            const Eigen::RowVectorXd s2 = (dxhat.array() * xh.array()).colwise().mean();
            d = ((dxhat.rowwise() - s1).array() - xh.array().rowwise() * s2.array()).rowwise() * inv.array();
          } else {
            d = dxhat.array().rowwise() * inv.array();
          }
        }
        send(0, std::move(dx));
        break;
      }
      case LayerKind::Add:
        if (wants(1)) send(1, Tensor(g));
        if (wants(0)) send(0, std::move(g));
        break;
      case LayerKind::Concat: {
        const auto gm = g.mat();
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& x = in(k);
          if (wants(k)) {
            Tensor dx(x.shape);
            dx.mat() = gm.middleCols(col, x.last());
            send(k, std::move(dx));
          }
          col += x.last();
        }
        break;
      }
      case LayerKind::MultiHeadAttention:
        attention_backward(n, c, in(0), g, wants(0) ? &grads[static_cast<std::size_t>(n.inputs[0])] : nullptr);
        break;
    }
  }

  void attention_backward(const Node& n, const NodeCache& c, const Tensor& x, const Tensor& g, Tensor* dx_acc) {
    const int batch = x.shape[0], t = x.shape[1], e = x.shape[2];
    const int h = n.spec.heads, k = n.spec.key_dim, hk = h * k;
    const double scale = 1.0 / std::sqrt(static_cast<double>(k));
    const auto qm = c.aux[0].mat(), km = c.aux[1].mat(), vm = c.aux[2].mat(), om = c.aux[4].mat();
    const auto gm = g.mat();
    const bool train_w = params_[static_cast<std::size_t>(n.params[0])].trainable;
    if (train_w) {
      gmat(n, 6, hk).noalias() += om.transpose() * gm;
      grow(n, 7) += gm.colwise().sum();
    }
    const RowMat d_o = gm * pmat(n, 6, hk).transpose();
    RowMat dq(batch * t, hk), dk(batch * t, hk), dv(batch * t, hk);
    RowMat da(t, t), ds(t, t);
    for (int b = 0; b < batch; ++b)
      for (int hd = 0; hd < h; ++hd) {
        const ConstMatMap a(c.aux[3].data.data() + static_cast<std::size_t>((b * h + hd) * t * t), t, t);
        const auto doh = d_o.block(b * t, hd * k, t, k);
        da.noalias() = doh * vm.block(b * t, hd * k, t, k).transpose();
        dv.block(b * t, hd * k, t, k).noalias() = a.transpose() * doh;
        const Eigen::VectorXd dot = (da.array() * a.array()).rowwise().sum();
        ds = scale * (a.array() * (da.colwise() - dot).array()).matrix();
        dq.block(b * t, hd * k, t, k).noalias() = ds * km.block(b * t, hd * k, t, k);
        dk.block(b * t, hd * k, t, k).noalias() = ds.transpose() * qm.block(b * t, hd * k, t, k);
      }
    const auto xm = x.mat();
    if (train_w) {
      gmat(n, 0, e).noalias() += xm.transpose() * dq;
      grow(n, 1) += dq.colwise().sum();
      gmat(n, 2, e).noalias() += xm.transpose() * dk;
      grow(n, 3) += dk.colwise().sum();
      gmat(n, 4, e).noalias() += xm.transpose() * dv;
      grow(n, 5) += dv.colwise().sum();
    }
    if (dx_acc == nullptr) return;
    Tensor dx(x.shape);
    auto d = dx.mat();
    d.noalias() = dq * pmat(n, 0, e).transpose();
    d.noalias() += dk * pmat(n, 2, e).transpose();
    d.noalias() += dv * pmat(n, 4, e).transpose();
    if (dx_acc->empty()) {
      *dx_acc = std::move(dx);
    } else {
      for (std::size_t i = 0; i < dx.size(); ++i) dx_acc->data[i] += dx.data[i];
    }
  }
};

}  // namespace cfusion::nn
