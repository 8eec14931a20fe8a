#include "mrsgd/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " + t.shape_string());
  }
}

void require_same_size(const Tensor& a, const Tensor& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": size mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

void count(CostCounters* counters, std::size_t m, std::size_t n, std::size_t p) {
  if (counters != nullptr) counters->flops += 2ULL * m * n * p;
}

}  // namespace

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string() + " does not match buffer length " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on tensor of shape " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on tensor of shape " + shape_string());
  return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b, CostCounters* counters) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " * " + b.shape_string());
  }
  Tensor out({a.rows(), b.cols()});
  if (out.size() > 0 && a.cols() > 0) as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  count(counters, a.rows(), a.cols(), b.cols());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b, CostCounters* counters) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions disagree " + a.shape_string() + "^T * " + b.shape_string());
  }
  Tensor out({a.cols(), b.cols()});
  if (out.size() > 0 && a.rows() > 0) as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  count(counters, a.cols(), a.rows(), b.cols());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, CostCounters* counters) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  if (out.size() > 0 && a.cols() > 0) as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  count(counters, a.rows(), a.cols(), b.rows());
  return out;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_size(x, y, "axpy");
  const double* xs = x.data();
  double* ys = y.data();
  for (std::size_t i = 0, n = y.size(); i < n; ++i) ys[i] += alpha * xs[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return acc;
}

void add_row_broadcast(Tensor& m, const Tensor& row) {
  require_rank2(m, "add_row_broadcast");
  if (row.size() != m.cols()) throw DimensionError("add_row_broadcast: row length " + row.shape_string());
  const std::size_t cols = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* dst = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

Tensor column_sums(const Tensor& m) {
  require_rank2(m, "column_sums");
  Tensor out({m.cols()});
  const std::size_t cols = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* src = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += src[c];
  }
  return out;
}

double max_relative_difference(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "max_relative_difference");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
    if (scale == 0.0) continue;
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace mrsgd
