#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "repaintlab/error.hpp"

namespace repaintlab::nd {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Allocator whose default construction leaves scalars uninitialized, so
/// buffers that are about to be overwritten skip the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

/// Dense row-major array of real scalars.
template <typename T>
class NdArray {
 public:
  using value_type = T;
  using Storage = std::vector<T, DefaultInitAllocator<T>>;

  NdArray() = default;
  explicit NdArray(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate_shape();
  }
  NdArray(Shape shape, const std::vector<T>& data) : NdArray(std::move(shape), Storage(data.begin(), data.end())) {}
  NdArray(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("NdArray", "data", "length " + std::to_string(data_.size()) + " does not match shape " +
                                              shape_str(shape_));
    }
  }

  static NdArray zeros(Shape shape) { return NdArray(std::move(shape)); }
  /// Contents are indeterminate; the caller must write every element.
  static NdArray uninitialized(Shape shape) {
    NdArray a;
    a.shape_ = std::move(shape);
    a.validate_shape();
    a.data_.resize(shape_size(a.shape_));
    return a;
  }
  static NdArray full(Shape shape, T v) { return NdArray(std::move(shape), v); }
  static NdArray scalar(T v) { return NdArray(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  Storage& vec() noexcept { return data_; }
  const Storage& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data viewed under a new shape of identical size.
  NdArray reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("reshape", "size", shape_str(shape_) + " -> " + shape_str(shape));
    }
    return NdArray(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  NdArray<U> cast() const {
    return NdArray<U>(shape_, typename NdArray<U>::Storage(data_.begin(), data_.end()));
  }

  bool operator==(const NdArray& other) const = default;

 private:
  void validate_shape() const {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] == 0) throw ShapeError("NdArray", "axis " + std::to_string(i), "extents must be positive");
    }
  }

  Shape shape_;
  Storage data_;
};

template <typename T>
void require_finite(const NdArray<T>& a, const std::string& what) {
  if (!a.all_finite()) throw NonFiniteError(what + ": non-finite value");
}

}  // namespace repaintlab::nd
