#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "cfusion/common.hpp"
#include "cfusion/nn/net.hpp"

namespace cfusion::nn {

struct LossValue {
  double value = 0.0;
  Tensor grad_logits;  // d(value)/d(logits) for a terminal Softmax
};

// Mean cross-entropy over the batch; the logit gradient is (p - y) / N.
inline LossValue cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.shape.size() != 2 || static_cast<std::size_t>(probs.batch()) != labels.size())
    throw ShapeError("cross-entropy expects (N, C) probabilities aligned with N labels");
  const int classes = probs.last();
  LossValue out{0.0, probs};
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto at = i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || labels[i] >= classes) throw InvalidInput("label out of range");
    out.value -= std::log(std::max(probs.data[at], std::numeric_limits<double>::min()));
    out.grad_logits.data[at] -= 1.0;
  }
  out.value *= inv_n;
  for (double& g : out.grad_logits.data) g *= inv_n;
  return out;
}

// Extra loss terms computed from intermediate activations, e.g. penalties on
// adapter outputs. Gradients are keyed by node id.
struct AuxLoss {
  double value = 0.0;
  std::map<int, Tensor> grads;
};
using AuxLossFn = std::function<AuxLoss(const Net&, const Cache&)>;

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  int patience = 5;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr >= 0) || !std::isfinite(c.lr)) throw InvalidInput("learning rate must be >= 0");
  if (c.epochs < 1) throw InvalidInput("epochs must be >= 1");
  if (c.batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (c.patience < 1) throw InvalidInput("patience must be >= 1");
}

// One Adam update with bias correction using the gradients held in `net`.
inline void adam_step(Net& net, const TrainConfig& cfg) {
  const int t = ++net.adam_step;
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : net.params()) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1 - cfg.beta2) * g * g;
      p.value[i] -= cfg.lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + cfg.eps);
    }
  }
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_acc = -1.0;
  bool early_stopped = false;
};

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace detail {

inline std::vector<std::vector<double>> snapshot(const Net& net) {
  std::vector<std::vector<double>> s;
  for (const auto& p : net.params()) s.push_back(p.value);
  return s;
}

inline void restore(Net& net, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) net.params()[i].value = s[i];
}

// Batch boundaries; a trailing remainder smaller than min(4, batch) joins the
// previous batch so batch statistics stay defined.
inline std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batch) {
  std::vector<std::size_t> b;
  for (std::size_t s = 0; s < n; s += batch) b.push_back(s);
  b.push_back(n);
  if (b.size() > 2 && n - b[b.size() - 2] < std::min<std::size_t>(4, batch)) b.erase(b.end() - 2);
  return b;
}

}  // namespace detail

// Mini-batch Adam on cross-entropy (+ regularization, + aux). One generator,
// Rng(hash(seed, "train")), drives the per-epoch shuffle followed by the
// dropout masks of each batch. With a validation set, the parameters of the
// best validation-accuracy epoch are restored and training stops after
// `patience` epochs without improvement.
inline History train(Net& net, const std::vector<Tensor>& x, const std::vector<int>& y,
                     const std::vector<Tensor>& x_val, const std::vector<int>& y_val, const TrainConfig& cfg,
                     const AuxLossFn& aux = {}) {
  validate(cfg);
  if (x.empty() || static_cast<std::size_t>(x[0].batch()) != y.size() || y.empty())
    throw InvalidInput("training inputs and labels are misaligned");
  const bool has_val = !y_val.empty();
  if (has_val && (x_val.empty() || static_cast<std::size_t>(x_val[0].batch()) != y_val.size()))
    throw InvalidInput("validation inputs and labels are misaligned");
  const int classes = net.node(net.output()).out_shape.back();

  Rng rng(hash_combine(cfg.seed, "train"));
  History h;
  std::vector<std::vector<double>> best;
  int stale = 0;
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bounds = detail::batch_bounds(y.size(), static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(bounds[b]),
                                         order.begin() + static_cast<std::ptrdiff_t>(bounds[b + 1]));
      std::vector<Tensor> xb;
      for (const auto& t : x) xb.push_back(gather_rows(t, idx));
      std::vector<int> yb;
      for (auto i : idx) yb.push_back(y[i]);

      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
      Tensor probs;
      try {
        probs = net.forward(xb, RunMode::train(), &rng);
      } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
      }
      if (probs.last() != classes) throw ShapeError("output width does not match class count");
      auto ce = cross_entropy(probs, yb);
      double loss = ce.value + net.regularization_loss();
      AuxLoss extra;
      if (aux) {
        extra = aux(net, net.cache());
        loss += extra.value;
      }
      if (!std::isfinite(loss)) throw NumericError(where + ": loss is " + std::to_string(loss));
      net.zero_grad();
      net.backward_logits(ce.grad_logits, extra.grads);
      adam_step(net, cfg);
      loss_sum += loss * static_cast<double>(idx.size());
      const auto pred = argmax_rows(probs);
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == yb[i];
    }
    EpochStats e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(y.size());
    e.train_acc = static_cast<double>(hits) / static_cast<double>(y.size());
    if (has_val) {
      const Tensor pv = net.predict(x_val);
      e.val_loss = cross_entropy(pv, y_val).value;
      e.val_acc = accuracy(argmax_rows(pv), y_val);
    }
    h.epochs.push_back(e);
    if (!has_val) continue;
    if (e.val_acc > h.best_val_acc) {
      h.best_val_acc = e.val_acc;
      h.best_epoch = epoch;
      best = detail::snapshot(net);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      h.early_stopped = true;
      break;
    }
  }
  if (has_val) {
    detail::restore(net, best);
  } else {
    h.best_epoch = static_cast<int>(h.epochs.size());
  }
  return h;
}

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Compares analytic gradients of CE + regularization (+ aux) with central
// differences. Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor
// keeps near-zero gradients from reporting rounding noise as failure. At
// most `max_entries` entries per parameter are probed, evenly strided.
inline GradCheckReport grad_check(const Net& original, const std::vector<Tensor>& inputs,
                                  const std::vector<int>& labels, double eps = 1e-5, double tol = 1e-4,
                                  const AuxLossFn& aux = {}, std::size_t max_entries = 64,
                                  RunMode mode = RunMode::train_no_dropout()) {
  if (mode.dropout) throw InvalidInput("gradient checks need a deterministic forward pass");
  Net net = original;
  const auto loss_at = [&]() {
    const Tensor probs = net.forward(inputs, mode);
    double l = cross_entropy(probs, labels).value + net.regularization_loss();
    if (aux) l += aux(net, net.cache()).value;
    return l;
  };
  const Tensor probs = net.forward(inputs, mode);
  const auto ce = cross_entropy(probs, labels);
  AuxLoss extra;
  if (aux) extra = aux(net, net.cache());
  net.zero_grad();
  net.backward_logits(ce.grad_logits, extra.grads);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : net.params()) analytic.push_back(p.grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
    if (!net.params()[pi].trainable) continue;
    ParamCheck pc{net.params()[pi].name};
    const std::size_t n = net.params()[pi].value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    for (std::size_t i = 0; i < n; i += stride) {
      double& w = net.params()[pi].value[i];
      const double saved = w;
      w = saved + eps;
      const double up = loss_at();
      w = saved - eps;
      const double down = loss_at();
      w = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      pc.max_rel_error = std::max(pc.max_rel_error, rel);
      ++pc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace cfusion::nn
