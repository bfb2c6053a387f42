#include "dlfs/tensor.hpp"

#include <cmath>
#include <string>

namespace dlfs {

namespace {

int64_t checked_count(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeMismatch("dimension sizes must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_count(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_count(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeMismatch("shape " + shape_str(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

int64_t Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) throw AxisOutOfRange("axis " + std::to_string(axis));
  return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::flat_index(const std::vector<int64_t>& index) const {
  if (index.size() != shape_.size()) throw AxisOutOfRange("index rank mismatch");
  int64_t flat = 0;
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= shape_[i]) throw AxisOutOfRange("index out of bounds");
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

double& Tensor::at(const std::vector<int64_t>& index) { return data_[static_cast<size_t>(flat_index(index))]; }
double Tensor::at(const std::vector<int64_t>& index) const { return data_[static_cast<size_t>(flat_index(index))]; }

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (checked_count(shape) != size()) throw ShapeMismatch("reshape changes element count");
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return out;
}

Tensor abs_elem(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return out;
}

double sum_all(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

double mean_all(const Tensor& a) {
  if (a.size() == 0) throw ShapeMismatch("mean of empty tensor");
  return sum_all(a) / static_cast<double>(a.size());
}

MaxEntry max_all(const Tensor& a) {
  if (a.size() == 0) throw ShapeMismatch("max of empty tensor");
  MaxEntry best{a[0], 0};
  for (int64_t i = 1; i < a.size(); ++i)
    if (a[i] > best.value) best = {a[i], i};
  return best;
}

namespace {

// Collapses shape to (outer, axis, inner) so any-rank axis reductions walk
// the data with three loops.
struct AxisSplit {
  int64_t outer, axis, inner;
  std::vector<int64_t> reduced_shape;
};

AxisSplit split_axis(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw AxisOutOfRange("reduce axis " + std::to_string(axis));
  AxisSplit s{1, a.shape()[static_cast<size_t>(axis)], 1, {}};
  for (int i = 0; i < a.rank(); ++i) {
    if (i < axis)
      s.outer *= a.shape()[static_cast<size_t>(i)];
    else if (i > axis)
      s.inner *= a.shape()[static_cast<size_t>(i)];
    if (i != axis) s.reduced_shape.push_back(a.shape()[static_cast<size_t>(i)]);
  }
  if (s.reduced_shape.empty()) s.reduced_shape.push_back(1);
  return s;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, int axis) {
  AxisSplit s = split_axis(a, axis);
  Tensor out(s.reduced_shape);
  const double* src = a.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t k = 0; k < s.axis; ++k) {
      const double* row = src + (o * s.axis + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (int64_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  return out;
}

Tensor reduce_mean(const Tensor& a, int axis) {
  AxisSplit s = split_axis(a, axis);
  return scale(reduce_sum(a, axis), 1.0 / static_cast<double>(s.axis));
}

AxisReduce reduce_max(const Tensor& a, int axis) {
  AxisSplit s = split_axis(a, axis);
  AxisReduce r;
  r.values = Tensor(s.reduced_shape);
  r.argmax.assign(static_cast<size_t>(s.outer * s.inner), 0);
  const double* src = a.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      int64_t best_k = 0;
      double best = src[(o * s.axis) * s.inner + i];
      for (int64_t k = 1; k < s.axis; ++k) {
        double v = src[(o * s.axis + k) * s.inner + i];
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      r.values[o * s.inner + i] = best;
      // flat index into the original tensor, first-maximum tie-break
      r.argmax[static_cast<size_t>(o * s.inner + i)] = (o * s.axis + best_k) * s.inner + i;
    }
  return r;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("matmul expects rank-2 tensors");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw ShapeMismatch("matmul inner dimensions differ");
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t l = 0; l < k; ++l) {
      const double aij = pa[i * k + l];
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aij * brow[j];
    }
  return out;
}

double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double cosine_similarity(const double* a, const double* b, int64_t n) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return ab / (na * nb);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  return cosine_similarity(a.data(), b.data(), a.size());
}

}  // namespace dlfs
