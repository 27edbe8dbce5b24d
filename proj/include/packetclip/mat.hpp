#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "packetclip/error.hpp"
#include "packetclip/rng.hpp"

namespace packetclip {

// Dense row-major matrix of doubles. Row vectors are 1xN.
class Mat {
public:
  Mat() = default;
  Mat(int rows, int cols) : rows_(rows), cols_(cols), a_(size_t(rows) * size_t(cols), 0.0) {}
  Mat(int rows, int cols, std::vector<double> vals) : rows_(rows), cols_(cols), a_(std::move(vals)) {
    if (a_.size() != size_t(rows) * size_t(cols)) fail(Err::shape, "matrix init size mismatch");
  }

  static Mat row_vec(std::vector<double> vals) {
    int n = int(vals.size());
    return Mat(1, n, std::move(vals));
  }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  static Mat random_uniform(int rows, int cols, double lo, double hi, Rng& rng) {
    Mat m(rows, cols);
    for (auto& v : m.a_) v = rng.uniform(lo, hi);
    return m;
  }

  static Mat random_normal(int rows, int cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (auto& v : m.a_) v = stddev * rng.normal();
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return a_.size(); }
  bool empty() const { return a_.empty(); }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }
  double* row(int r) { return a_.data() + size_t(r) * cols_; }
  const double* row(int r) const { return a_.data() + size_t(r) * cols_; }
  double& at(int r, int c) { return a_[size_t(r) * cols_ + c]; }
  double at(int r, int c) const { return a_[size_t(r) * cols_ + c]; }

  const std::vector<double>& values() const { return a_; }
  std::vector<double>& values() { return a_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) {
    for (auto& x : a_) x = v;
  }

  bool all_finite() const {
    for (double v : a_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double frob_norm() const {
    double s = 0;
    for (double v : a_) s += v * v;
    return std::sqrt(s);
  }

private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

// c = a * b, shapes (m x k)(k x n)
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) fail(Err::shape, "matmul shape mismatch");
  Mat c(a.rows(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      const double* br = b.row(k);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

// c = a^T * b, a (m x k), b (m x n) -> (k x n)
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) fail(Err::shape, "matmul_tn shape mismatch");
  Mat c(a.cols(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    const double* br = b.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      double* cr = c.row(k);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

// c = a * b^T, a (m x k), b (n x k) -> (m x n)
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) fail(Err::shape, "matmul_nt shape mismatch");
  Mat c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j);
      double s = 0;
      for (int k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      cr[j] = s;
    }
  }
  return c;
}

inline void axpy(Mat& y, double alpha, const Mat& x) {
  if (!y.same_shape(x)) fail(Err::shape, "axpy shape mismatch");
  double* yp = y.data();
  const double* xp = x.data();
  for (size_t i = 0; i < y.size(); ++i) yp[i] += alpha * xp[i];
}

inline double dot(const Mat& a, const Mat& b) {
  if (a.size() != b.size()) fail(Err::shape, "dot size mismatch");
  double s = 0;
  const double* ap = a.data();
  const double* bp = b.data();
  for (size_t i = 0; i < a.size(); ++i) s += ap[i] * bp[i];
  return s;
}

}  // namespace packetclip
