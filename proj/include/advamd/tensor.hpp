#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advamd/error.hpp"

namespace advamd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles with a gradient buffer of the same length.
// A rank-0 shape (empty) is a scalar.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() : values(1, 0.0), grad(1, 0.0) {}

  Tensor(Shape s, std::vector<double> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), grad(values.size(), 0.0), requires_grad(rg) {
    for (std::size_t d : shape) require(d > 0, ErrorCode::ShapeMismatch, "zero-sized dimension");
    require(shape_size(shape) == values.size(), ErrorCode::ShapeMismatch,
            "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                " values");
  }

  static Tensor zeros(Shape s, bool rg = false) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
  }

  static Tensor filled(Shape s, double v, bool rg = false) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, v), rg);
  }

  static Tensor scalar(double v, bool rg = false) { return Tensor({}, {v}, rg); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v, bool rg = false) {
    return Tensor({rows, cols}, std::move(v), rg);
  }

  static Tensor vector(std::vector<double> v, bool rg = false) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), rg);
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return values.size() == 1; }

  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : values.size() / shape[0]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  double item() const {
    require(is_scalar(), ErrorCode::ShapeMismatch, "item() on non-scalar tensor");
    return values[0];
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  // Copy of rows [begin, begin + count) for a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t count) const {
    require(rank() == 2 && begin + count <= rows() && count > 0, ErrorCode::ShapeMismatch,
            "slice_rows out of range");
    const std::size_t c = cols();
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          values.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
    return Tensor({count, c}, std::move(v));
  }

  Tensor gather_rows(const std::vector<std::size_t>& idx) const {
    require(rank() == 2 && !idx.empty(), ErrorCode::ShapeMismatch, "gather_rows needs rank-2");
    const std::size_t c = cols();
    std::vector<double> v;
    v.reserve(idx.size() * c);
    for (std::size_t r : idx) {
      require(r < rows(), ErrorCode::ShapeMismatch, "gather_rows index out of range");
      v.insert(v.end(), values.begin() + static_cast<std::ptrdiff_t>(r * c),
               values.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }
    return Tensor({idx.size(), c}, std::move(v));
  }

  // Value equality (shape and every bit pattern of values); gradients ignored.
  friend bool same_values(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.values == b.values;
  }
};

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          "concat_rows needs matching widths");
  std::vector<double> v = a.values;
  v.insert(v.end(), b.values.begin(), b.values.end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(v));
}

}  // namespace advamd
