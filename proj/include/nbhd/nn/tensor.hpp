#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

namespace nbhd::nn {

// Buffers start on a cache-line boundary. Eigen's vectorised kernels peel a
// different number of leading scalars depending on alignment, which changes
// summation order; fixed alignment keeps results identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(kAlign)); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatVec = std::vector<float, AlignedAllocator<float>>;

// Dense float32 array, row-major. Images are NCHW, feature batches N x F.
struct Tensor {
  std::vector<int> shape;
  FloatVec data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rows() const { return shape.at(0); }
  // Elements per leading index.
  std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }
  float* row(int i) { return data.data() + static_cast<std::size_t>(i) * stride0(); }
  const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * stride0(); }

  std::string shape_string() const;
};

// A trainable parameter with its gradient and AdamW moments.
struct Param {
  std::string name;
  std::vector<int> shape;
  FloatVec value;
  FloatVec grad;
  FloatVec m;
  FloatVec v;
  bool trainable = true;

  void zero_grad();
  std::uint64_t hash() const;
};

}  // namespace nbhd::nn
