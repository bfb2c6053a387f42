#pragma once

#include <cstdint>
#include <vector>

#include "dlfs/errors.hpp"

namespace dlfs {

// Dense row-major tensor of doubles; the single value carrier of the
// library. Feature maps are [C,H,W], conv weights [Cout,Cin,k,k], vectors
// [N]. All core math is 64-bit.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<int64_t> shape);

  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-index access; row-major flat offset. Slow path, meant for tests
  // and cold code.
  double& at(const std::vector<int64_t>& index);
  double at(const std::vector<int64_t>& index) const;
  int64_t flat_index(const std::vector<int64_t>& index) const;

  // Same data, new shape (element counts must agree).
  Tensor reshaped(std::vector<int64_t> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
inline Tensor max0(const Tensor& a) { return relu(a); }
Tensor abs_elem(const Tensor& a);

// ---- reductions ----
double sum_all(const Tensor& a);
double mean_all(const Tensor& a);
struct MaxEntry {
  double value;
  int64_t index;  // row-major flat index of the (first) maximum
};
MaxEntry max_all(const Tensor& a);

struct AxisReduce {
  Tensor values;
  std::vector<int64_t> argmax;  // filled for max reductions, else empty
};
Tensor reduce_sum(const Tensor& a, int axis);
Tensor reduce_mean(const Tensor& a, int axis);
AxisReduce reduce_max(const Tensor& a, int axis);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N] -> [M,N]
double dot(const double* a, const double* b, int64_t n);

// Cosine similarity of two equal-length vectors. Returns 0 when either norm
// is below 1e-12 so downstream correlation losses stay finite on all-zero
// feature rows.
double cosine_similarity(const Tensor& a, const Tensor& b);
double cosine_similarity(const double* a, const double* b, int64_t n);

}  // namespace dlfs
