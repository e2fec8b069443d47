#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "countnet/errors.hpp"

namespace countnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

inline Shape row_major_strides(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// std::vector whose elements stay default-initialized (no zero fill for
// trivial T); Tensor uses it so kernel outputs skip a redundant memset.
template <typename T>
struct DefaultInitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

// Dense row-major n-dimensional value array. Pure value semantics; gradient
// bookkeeping lives on the Tape, not here.
template <typename T>
class Tensor {
 public:
  using Values = std::vector<T, DefaultInitAlloc<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(countnet::numel(shape_)) {
    validate_shape();
    std::fill(values_.begin(), values_.end(), T(0));
  }

  Tensor(Shape shape, Values values) : shape_(std::move(shape)), values_(std::move(values)) {
    validate_shape();
    if (countnet::numel(shape_) != values_.size()) {
      throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                       std::to_string(values_.size()) + " values");
    }
  }

  Tensor(Shape shape, const std::vector<T>& values)
      : Tensor(std::move(shape), Values(values.begin(), values.end())) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  // Allocates without clearing; caller promises to write every element.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    t.values_.resize(countnet::numel(t.shape_));
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (T& x : t.values_) x = v;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T v) { return Tensor(Shape{1}, Values{v}); }

  static Tensor from(std::initializer_list<T> vals, Shape shape = {}) {
    Values v(vals.begin(), vals.end());
    if (shape.empty()) shape = {v.size()};
    return Tensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  Values& values() { return values_; }
  const Values& values() const { return values_; }

  std::vector<T> to_vector() const { return std::vector<T>(values_.begin(), values_.end()); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  template <typename... Ix>
  T& at(Ix... ix) {
    return values_[flat_index({static_cast<std::size_t>(ix)...})];
  }

  template <typename... Ix>
  const T& at(Ix... ix) const {
    return values_[flat_index({static_cast<std::size_t>(ix)...})];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : values_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < values_.size(); ++i) out[i] = static_cast<U>(values_[i]);
    return out;
  }

 private:
  void validate_shape() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
    }
  }

  std::size_t flat_index(std::initializer_list<std::size_t> ix) const {
    std::size_t flat = 0, d = 0;
    Shape strides = row_major_strides(shape_);
    for (std::size_t i : ix) flat += i * strides[d++];
    return flat;
  }

  Shape shape_;
  Values values_;
};

// --- deterministic RNG -----------------------------------------------------
//
// All randomness in the project flows through these, never <random>
// distributions, so that a seed pins the exact byte stream regardless of the
// standard library in use.

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  SplitMix64 s(base ^ (0x632be59bd9b4e019ull + salt * 0x9e3779b97f4a7c15ull));
  return s.next();
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_.next(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_.next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ValueError("uniform_index: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen_.next();
    while (v >= limit) v = gen_.next();
    return v % n;
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive range
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double trunc_normal(double stddev, double clip = 2.0) {
    double v = normal();
    while (std::abs(v) > clip) v = normal();
    return v * stddev;
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  SplitMix64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fixed-chunk compensated accumulation: partial sums over 4096-element chunks
// combined in index order. The chunking is part of the definition, so the
// result is identical whether chunks are evaluated serially or in parallel.
template <typename T>
double chunked_sum(const T* p, std::size_t n) {
  constexpr std::size_t kChunk = 4096;
  double total = 0.0;
  for (std::size_t c = 0; c < n; c += kChunk) {
    std::size_t end = std::min(n, c + kChunk);
    double part = 0.0;
    for (std::size_t i = c; i < end; ++i) part += static_cast<double>(p[i]);
    total += part;
  }
  return total;
}

template <typename T>
double chunked_sum(const Tensor<T>& t) {
  return chunked_sum(t.data(), t.size());
}

}  // namespace countnet
