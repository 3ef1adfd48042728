#ifndef MGR_NDARRAY_HPP
#define MGR_NDARRAY_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace mgr {

inline constexpr int kMaxDims = 4;

using Shape = std::vector<std::size_t>;

// Row-major with dimension 0 fastest-varying: offset = sum idx[d] * stride[d],
// stride[0] = 1.
inline std::vector<std::size_t> make_strides(const Shape &shape) {
  std::vector<std::size_t> s(shape.size());
  std::size_t acc = 1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    s[d] = acc;
    acc *= shape[d];
  }
  return s;
}

inline std::size_t num_elements(const Shape &shape) {
  std::size_t n = 1;
  for (std::size_t e : shape)
    n *= e;
  return n;
}

// Minimal owning N-D buffer used for kernel intermediates.
template <typename Real> struct NdBuffer {
  Shape shape;
  std::vector<std::size_t> strides;
  std::vector<Real> data;

  NdBuffer() = default;
  explicit NdBuffer(Shape s)
      : shape(std::move(s)), strides(make_strides(shape)),
        data(num_elements(shape), Real(0)) {}

  std::size_t size() const { return data.size(); }
  Real &operator[](std::size_t i) { return data[i]; }
  const Real &operator[](std::size_t i) const { return data[i]; }
};

// Iterates the cartesian product of per-dimension extents, excluding one
// dimension (used to enumerate fibers). Order: remaining dims ascending,
// lowest dim fastest.
class FiberIndexer {
public:
  FiberIndexer(const std::vector<std::size_t> &extents,
               const std::vector<std::size_t> &strides, std::size_t skip_dim)
      : extents_(extents), strides_(strides), skip_(skip_dim) {
    count_ = 1;
    for (std::size_t d = 0; d < extents_.size(); ++d)
      if (d != skip_)
        count_ *= extents_[d];
  }

  std::size_t count() const { return count_; }

  // Base offset of the k-th fiber.
  std::size_t base(std::size_t k) const {
    std::size_t off = 0;
    for (std::size_t d = 0; d < extents_.size(); ++d) {
      if (d == skip_)
        continue;
      std::size_t e = extents_[d];
      off += (k % e) * strides_[d];
      k /= e;
    }
    return off;
  }

private:
  std::vector<std::size_t> extents_;
  std::vector<std::size_t> strides_;
  std::size_t skip_;
  std::size_t count_;
};

} // namespace mgr

#endif
