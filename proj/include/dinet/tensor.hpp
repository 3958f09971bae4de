#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dinet/errors.hpp"

namespace dinet {

using Shape = std::vector<int64_t>;

/// 64-byte aligned allocator. Eigen's vectorised kernels pick their summation
/// order from the buffer's alignment, so unaligned storage makes results
/// depend on where the heap happened to place a tensor.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

inline int64_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major array of doubles. Plain value type: copies copy the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel_of(shape_)), fill) {
    for (auto d : shape_)
      if (d < 0) throw ContractViolation("negative dimension in shape " + to_string(shape_));
  }
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) { check_size(); }
  Tensor(Shape shape, const std::vector<double>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }
  Tensor(Shape shape, std::initializer_list<double> data) : shape_(std::move(shape)), data_(data) { check_size(); }

 private:
  void check_size() const {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
      throw ContractViolation("tensor data size " + std::to_string(data_.size()) +
                              " does not match shape " + to_string(shape_));
  }

 public:

  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  int64_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw ContractViolation("dimension index out of range");
    return shape_[i];
  }
  std::size_t rank() const noexcept { return shape_.size(); }
  int64_t numel() const noexcept { return static_cast<int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  Storage& vec() noexcept { return data_; }
  const Storage& vec() const noexcept { return data_; }

  double& operator[](int64_t i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int64_t i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  // rank-3 (C, H, W) accessors
  double& at(int64_t c, int64_t y, int64_t x) noexcept {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double at(int64_t c, int64_t y, int64_t x) const noexcept {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw ContractViolation("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    return Tensor(std::move(s), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  double sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ContractViolation(std::string(what) + ": shape mismatch " + to_string(shape_) + " vs " +
                              to_string(o.shape_));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Copies channels [c0, c0 + n) of a (C, H, W) tensor.
inline Tensor channel_slice(const Tensor& t, int64_t c0, int64_t n) {
  if (t.rank() != 3 || c0 < 0 || c0 + n > t.dim(0))
    throw ContractViolation("channel_slice out of range for " + to_string(t.shape()));
  const int64_t plane = t.dim(1) * t.dim(2);
  Tensor out({n, t.dim(1), t.dim(2)});
  std::copy_n(t.data() + c0 * plane, n * plane, out.data());
  return out;
}

/// Concatenates (C_i, H, W) tensors along channels.
inline Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat_channels: no inputs");
  const int64_t h = parts[0].dim(1), w = parts[0].dim(2);
  int64_t c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 3 || p.dim(1) != h || p.dim(2) != w)
      throw ContractViolation("concat_channels: spatial mismatch");
    c += p.dim(0);
  }
  Tensor out({c, h, w});
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy_n(p.data(), p.numel(), dst);
  return out;
}

/// Copies rows [y0, y0+h) and columns [x0, x0+w) of every channel.
inline Tensor crop_region(const Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  if (t.rank() != 3 || y0 < 0 || x0 < 0 || y0 + h > t.dim(1) || x0 + w > t.dim(2))
    throw ContractViolation("crop_region out of bounds for " + to_string(t.shape()));
  Tensor out({t.dim(0), h, w});
  for (int64_t c = 0; c < t.dim(0); ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
  return out;
}

}  // namespace dinet
