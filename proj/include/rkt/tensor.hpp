#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace rkt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

// Cache-line aligned storage. Vectorized reductions peel unaligned heads, so a
// fixed base alignment keeps floating-point results independent of where the
// allocator happened to place a buffer.
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
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// A rank-0 tensor (empty shape) holds a single scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const Storage& storage() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  double item() const;
  bool all_finite() const;
  void fill(double v);

  // Reinterprets the buffer under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  Storage data_;
};

// Broadcast two shapes numpy-style; throws ShapeError when incompatible.
Shape broadcast_shapes(const Shape& a, const Shape& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rkt
