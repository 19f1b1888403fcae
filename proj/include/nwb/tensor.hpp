#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nwb {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Dense row-major tensor of rank <= 2. Scalars are 1x1, vectors of
/// length n are n x 1 unless stated otherwise. Batches of points are
/// stored one point per row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols, double fill = 0.0) : m_(Matrix::Constant(rows, cols, fill)) {}
  explicit Tensor(Matrix m) : m_(std::move(m)) {}

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
    Tensor t(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw ShapeError("from_rows: ragged rows");
      Index j = 0;
      for (double v : row) t.m_(i, j++) = v;
      ++i;
    }
    return t;
  }

  /// n x 1 column from values.
  static Tensor column(std::span<const double> v) {
    Tensor t(static_cast<Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) t.m_(static_cast<Index>(i), 0) = v[i];
    return t;
  }
  static Tensor column(std::initializer_list<double> v) { return column(std::span<const double>(v.begin(), v.size())); }

  /// 1 x n row from values.
  static Tensor row(std::span<const double> v) {
    Tensor t(1, static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) t.m_(0, static_cast<Index>(i)) = v[i];
    return t;
  }
  static Tensor row(std::initializer_list<double> v) { return row(std::span<const double>(v.begin(), v.size())); }

  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  Index size() const { return m_.size(); }
  std::array<Index, 2> shape() const { return {m_.rows(), m_.cols()}; }
  bool is_scalar() const { return m_.rows() == 1 && m_.cols() == 1; }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  Matrix& mat() { return m_; }
  const Matrix& mat() const { return m_; }

  double& operator()(Index i, Index j) { return m_(i, j); }
  double operator()(Index i, Index j) const { return m_(i, j); }

  double item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor of shape " + shape_str());
    return m_(0, 0);
  }

  std::span<const double> data() const { return {m_.data(), static_cast<std::size_t>(m_.size())}; }
  std::span<double> data() { return {m_.data(), static_cast<std::size_t>(m_.size())}; }

  bool all_finite() const { return m_.allFinite(); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << rows() << "x" << cols() << "]";
    return os.str();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.same_shape(b) && a.m_ == b.m_; }

 private:
  Matrix m_;
};

}  // namespace nwb
