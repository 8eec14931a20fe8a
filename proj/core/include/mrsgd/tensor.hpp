#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mrsgd {

/// Exact work counters. Layer visits feed the backward-cost model; flops are
/// a by-product of the kernels below.
struct CostCounters {
  std::uint64_t forward_layer_visits = 0;
  std::uint64_t backward_layer_visits = 0;
  std::uint64_t flops = 0;

  CostCounters& operator+=(const CostCounters& o) {
    forward_layer_visits += o.forward_layer_visits;
    backward_layer_visits += o.backward_layer_visits;
    flops += o.flops;
    return *this;
  }
  friend CostCounters operator+(CostCounters a, const CostCounters& b) { return a += b; }
  friend CostCounters operator-(const CostCounters& a, const CostCounters& b) {
    return {a.forward_layer_visits - b.forward_layer_visits,
            a.backward_layer_visits - b.backward_layer_visits, a.flops - b.flops};
  }
  bool operator==(const CostCounters&) const = default;
};

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  /// Same buffer under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;

  std::string shape_string() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Tensor::Shape& shape);

/// a (m x n) times b (n x p). Adds 2*m*n*p to counters->flops when given.
Tensor matmul(const Tensor& a, const Tensor& b, CostCounters* counters = nullptr);
/// a^T b for a (n x m), b (n x p).
Tensor matmul_tn(const Tensor& a, const Tensor& b, CostCounters* counters = nullptr);
/// a b^T for a (m x n), b (p x n).
Tensor matmul_nt(const Tensor& a, const Tensor& b, CostCounters* counters = nullptr);

/// y := y + alpha * x, elementwise on equal sizes.
void axpy(double alpha, const Tensor& x, Tensor& y);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double sum(const Tensor& a);

/// Add a length-cols row vector to every row of a rank-2 tensor.
void add_row_broadcast(Tensor& m, const Tensor& row);
/// Column sums of a rank-2 tensor into a length-cols vector.
Tensor column_sums(const Tensor& m);

/// Max |a_i - b_i| / max(|a_i|, |b_i|, tiny); zero when both are zero.
double max_relative_difference(const Tensor& a, const Tensor& b);

}  // namespace mrsgd
