#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfusion/common.hpp"

namespace cfusion::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

// Dense row-major buffer; axis 0 is the batch.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape)) throw ShapeError("tensor buffer does not match " + shape_string(shape));
  }

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }
  int batch() const { return shape.empty() ? 0 : shape[0]; }
  int last() const { return shape.empty() ? 0 : shape.back(); }
  std::size_t row_size() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }

  Shape sample_shape() const { return Shape(shape.begin() + (shape.empty() ? 0 : 1), shape.end()); }

  // View as (size / last) x last.
  MatMap mat() { return {data.data(), static_cast<Eigen::Index>(data.size() / static_cast<std::size_t>(last())), last()}; }
  ConstMatMap mat() const {
    return {data.data(), static_cast<Eigen::Index>(data.size() / static_cast<std::size_t>(last())), last()};
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

inline Tensor from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  t.mat() = m;
  return t;
}

inline Eigen::MatrixXd to_matrix(const Tensor& t) {
  return ConstMatMap(t.data.data(), t.batch(), static_cast<Eigen::Index>(t.row_size()));
}

// Rows `idx` of t, in that order.
inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  Shape s = t.shape;
  s[0] = static_cast<int>(idx.size());
  Tensor out(s);
  const std::size_t r = t.row_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<std::size_t>(t.batch())) throw InvalidInput("row index out of range");
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * r), r,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * r));
  }
  return out;
}

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(t, idx);
}

inline Tensor one_hot(const std::vector<int>& labels, int classes) {
  Tensor t({static_cast<int>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw InvalidInput("label out of range");
    t.data[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.batch()));
  const auto m = probs.mat();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j;
    m.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

}  // namespace cfusion::nn
