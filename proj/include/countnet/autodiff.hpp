#pragma once

// Define-by-run reverse-mode autodiff. A Tape owns every node produced during
// a forward evaluation in topological order; backward() walks the tape once in
// reverse. One backward per tape; reset() or a fresh tape starts over.

#include <functional>
#include <string>
#include <vector>

#include "countnet/kernels.hpp"
#include "countnet/tensor.hpp"

namespace countnet {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first touch
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var<T> leaf(Tensor<T> v, bool requires_grad) {
    return push(std::move(v), requires_grad, nullptr);
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  Var<T> push(Tensor<T> v, bool requires_grad, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), requires_grad, std::move(back)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::size_t next_id() const { return nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Gradient of a leaf after backward(); zeros if the loss never touched it.
  Tensor<T> grad_or_zeros(std::size_t id) {
    if (!has_grad(id)) return Tensor<T>::zeros(nodes_[id].value.shape());
    return nodes_[id].grad;
  }

  void backward(const Var<T>& loss) {
    if (backward_done_) {
      throw ValueError("backward already ran on this tape; reset() before reusing it");
    }
    if (nodes_.empty()) throw ValueError("backward on an empty tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    backward_done_ = true;
    grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.requires_grad && !n.grad.empty()) n.backward(*this);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  bool backward_done() const { return backward_done_; }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// --- broadcasting helpers ---------------------------------------------------
// Right-aligned, extent-1 broadcasting with implicit left padding.

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("incompatible broadcast: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace detail {

// Per-dim element strides of `shape` when right-aligned against `out`,
// zero where the dim is broadcast.
inline std::vector<std::size_t> bcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const Shape native = row_major_strides(shape);
  const std::size_t pad = out.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] != 1) s[pad + i] = native[i];
  }
  return s;
}

// Does `inner`, right-aligned against `outer`, cover exactly a suffix of it?
inline bool is_suffix_shape(const Shape& inner, const Shape& outer) {
  if (inner.size() > outer.size()) return false;
  std::size_t lead = 0;
  while (lead < inner.size() && inner[lead] == 1) ++lead;
  const std::size_t n = inner.size() - lead;
  for (std::size_t i = 0; i < n; ++i) {
    if (inner[lead + i] != outer[outer.size() - n + i]) return false;
  }
  return true;
}

// Is `inner` equal to `outer` except for extent-1 trailing dims (per-row scalar)?
inline std::size_t trailing_scalar_group(const Shape& inner, const Shape& outer) {
  if (inner.size() > outer.size()) return 0;
  const std::size_t pad = outer.size() - inner.size();
  std::size_t group = 1;
  std::size_t d = outer.size();
  while (d-- > 0) {
    const std::size_t ie = d < pad ? 1 : inner[d - pad];
    if (ie == outer[d]) break;
    if (ie != 1) return 0;
    group *= outer[d];
  }
  // all remaining leading dims must match exactly
  for (std::size_t i = 0; i <= d && d != static_cast<std::size_t>(-1); ++i) {
    const std::size_t ie = i < pad ? 1 : inner[i - pad];
    if (ie != outer[i]) return 0;
  }
  return group > 1 ? group : 0;
}

template <typename T, typename F>
void ewise_bcast(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, F&& f) {
  if (a.same_shape(b)) {  // fast path
    const T* __restrict pa = a.data();
    const T* __restrict pb = b.data();
    T* __restrict po = out.data();
    const auto n = static_cast<std::int64_t>(out.size());
    const bool par = kernels::parallel_enabled() && n >= 4096;
    COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return;
  }
  if (a.same_shape(out)) {
    if (is_suffix_shape(b.shape(), out.shape())) {  // bias-style: b repeats per row
      const std::size_t period = b.size();
      const std::size_t rows = out.size() / period;
      const T* __restrict pa = a.data();
      const T* __restrict pb = b.data();
      T* __restrict po = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* ar = pa + r * period;
        T* outr = po + r * period;
        for (std::size_t j = 0; j < period; ++j) outr[j] = f(ar[j], pb[j]);
      }
      return;
    }
    if (const std::size_t group = trailing_scalar_group(b.shape(), out.shape())) {
      const std::size_t rows = out.size() / group;  // gate-style: one b value per row
      const T* __restrict pa = a.data();
      const T* __restrict pb = b.data();
      T* __restrict po = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T bv = pb[r];
        const T* ar = pa + r * group;
        T* outr = po + r * group;
        for (std::size_t j = 0; j < group; ++j) outr[j] = f(ar[j], bv);
      }
      return;
    }
  }
  const Shape& os = out.shape();
  const auto sa = bcast_strides(a.shape(), os);
  const auto sb = bcast_strides(b.shape(), os);
  const std::size_t rank = os.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  const std::size_t n = out.size();
  for (std::size_t lin = 0; lin < n; ++lin) {
    out[lin] = f(a[oa], b[ob]);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
    }
  }
}

// dst (shape `to`) += src (shape `from`, broadcast-compatible superset):
// reduces over broadcast dims. Serial iteration keeps accumulation order fixed.
template <typename T>
void reduce_accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.same_shape(src)) {
    T* __restrict pd = dst.data();
    const T* __restrict ps = src.data();
    for (std::size_t i = 0; i < src.size(); ++i) pd[i] += ps[i];
    return;
  }
  if (is_suffix_shape(dst.shape(), src.shape())) {
    const std::size_t period = dst.size();
    const std::size_t rows = src.size() / period;
    T* __restrict pd = dst.data();
    const T* __restrict ps = src.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* sr = ps + r * period;
      for (std::size_t j = 0; j < period; ++j) pd[j] += sr[j];
    }
    return;
  }
  if (const std::size_t group = trailing_scalar_group(dst.shape(), src.shape())) {
    const std::size_t rows = src.size() / group;
    T* __restrict pd = dst.data();
    const T* __restrict ps = src.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T acc = T(0);
      const T* sr = ps + r * group;
      for (std::size_t j = 0; j < group; ++j) acc += sr[j];
      pd[r] += acc;
    }
    return;
  }
  const Shape& os = src.shape();
  const auto sd = bcast_strides(dst.shape(), os);
  const std::size_t rank = os.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t od = 0;
  for (std::size_t lin = 0; lin < src.size(); ++lin) {
    dst[od] += src[lin];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      od += sd[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      od -= sd[d] * os[d];
    }
  }
}

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ValueError("operands recorded on different tapes");
}

// Decompose shape around `axis` into [outer, len, inner].
inline void axis_split(const Shape& s, std::size_t axis, std::int64_t& outer, std::int64_t& len,
                       std::int64_t& inner) {
  if (axis >= s.size()) {
    throw ShapeError("invalid axis " + std::to_string(axis) + " for shape " + shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= static_cast<std::int64_t>(s[d]);
  len = static_cast<std::int64_t>(s[axis]);
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= static_cast<std::int64_t>(s[d]);
}

}  // namespace detail

// --- elementwise ops ---------------------------------------------------------

template <typename T, typename FwdF, typename BackA, typename BackB>
Var<T> ewise_op(Var<T> a, Var<T> b, FwdF&& f, BackA&& back_a, BackB&& back_b) {
  detail::check_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  Tensor<T> out = Tensor<T>::uninitialized(broadcast_shape(a.shape(), b.shape()));
  detail::ewise_bcast(a.value(), b.value(), out, f);
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, b, oid, back_a, back_b](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      if (a.requires_grad()) {
        Tensor<T> da = Tensor<T>::uninitialized(g.shape());
        detail::ewise_bcast(g, t.value(b.id), da, back_a);
        detail::reduce_accumulate(t.grad(a.id), da);
      }
      if (b.requires_grad()) {
        Tensor<T> db = Tensor<T>::uninitialized(g.shape());
        // note: arguments are (g, a_value)
        detail::ewise_bcast(g, t.value(a.id), db, back_b);
        detail::reduce_accumulate(t.grad(b.id), db);
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return ewise_op(
      a, b, [](T x, T y) { return x + y; }, [](T g, T) { return g; }, [](T g, T) { return g; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return ewise_op(
      a, b, [](T x, T y) { return x - y; }, [](T g, T) { return g; }, [](T g, T) { return -g; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return ewise_op(
      a, b, [](T x, T y) { return x * y; }, [](T g, T bv) { return g * bv; },
      [](T g, T av) { return g * av; });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= s;
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid, s](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      Tensor<T>& da = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * s;
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// --- matmul -------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
  }
  std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul inner extents differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  Shape out_shape;  // batch + [m, n] in the operands' original ranks
  Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  {
    const Shape full_batch = broadcast_shape(a_batch, b_batch);
    out_shape = full_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
  }
  if (b_batch.empty()) {
    // shared right operand: fold a's batch dims into rows for the kernel
    // (bit-identical, each output row is an independent dot-row either way)
    m = a.value().size() / k;
    a_batch.clear();
  }
  const Shape batch = broadcast_shape(a_batch, b_batch);

  // element offsets of each batch slot in a and b
  const std::size_t nbatch = numel(batch);
  auto offs = std::make_shared<std::vector<std::size_t>>(2 * nbatch);
  {
    auto sa = detail::bcast_strides(a_batch, batch);
    auto sb = detail::bcast_strides(b_batch, batch);
    for (auto& s : sa) s *= m * k;
    for (auto& s : sb) s *= k * n;
    std::vector<std::size_t> idx(batch.size(), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t lin = 0; lin < nbatch; ++lin) {
      (*offs)[lin] = oa;
      (*offs)[nbatch + lin] = ob;
      for (std::size_t d = batch.size(); d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < batch[d]) break;
        idx[d] = 0;
        oa -= sa[d] * batch[d];
        ob -= sb[d] * batch[d];
      }
    }
  }

  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  kernels::matmul(a.value().data(), b.value().data(), out.data(), offs->data(),
                  offs->data() + nbatch, static_cast<std::int64_t>(nbatch),
                  static_cast<std::int64_t>(m), static_cast<std::int64_t>(k),
                  static_cast<std::int64_t>(n));

  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, b, oid, offs, nbatch, m, k, n](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      if (a.requires_grad()) {
        kernels::matmul_grad_a(g.data(), t.value(b.id).data(), t.grad(a.id).data(), offs->data(),
                               offs->data() + nbatch, static_cast<std::int64_t>(nbatch),
                               static_cast<std::int64_t>(m), static_cast<std::int64_t>(k),
                               static_cast<std::int64_t>(n));
      }
      if (b.requires_grad()) {
        kernels::matmul_grad_b(t.value(a.id).data(), g.data(), t.grad(b.id).data(), offs->data(),
                               offs->data() + nbatch, static_cast<std::int64_t>(nbatch),
                               static_cast<std::int64_t>(m), static_cast<std::int64_t>(k),
                               static_cast<std::int64_t>(n));
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// --- axis ops -------------------------------------------------------------------

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  Tape<T>& tape = *a.tape;
  std::int64_t outer, len, inner;
  detail::axis_split(a.shape(), axis, outer, len, inner);
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  kernels::softmax(a.value().data(), out.data(), outer, len, inner);
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid, outer, len, inner](Tape<T>& t) {
      kernels::softmax_grad(t.value(oid).data(), t.grad(oid).data(), t.grad(a.id).data(), outer,
                            len, inner);
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> layer_norm(Var<T> x, std::size_t axis, Var<T> gamma, Var<T> beta, T eps) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  Tape<T>& tape = *x.tape;
  std::int64_t outer, len, inner;
  detail::axis_split(x.shape(), axis, outer, len, inner);
  if (gamma.value().size() != static_cast<std::size_t>(len) ||
      beta.value().size() != static_cast<std::size_t>(len)) {
    throw ShapeError("layer_norm gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " must match axis extent " + std::to_string(len));
  }
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  auto mean = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized(Shape{static_cast<std::size_t>(outer * inner)}));
  auto inv_std = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized(Shape{static_cast<std::size_t>(outer * inner)}));
  kernels::layer_norm(x.value().data(), gamma.value().data(), beta.value().data(), out.data(),
                      mean->data(), inv_std->data(), outer, len, inner, eps);
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [x, gamma, beta, oid, mean, inv_std, outer, len, inner](Tape<T>& t) {
      Tensor<T> scratch_dg(gamma.shape());
      Tensor<T> scratch_db(beta.shape());
      Tensor<T> scratch_dx(x.shape());
      kernels::layer_norm_grad(t.value(x.id).data(), t.value(gamma.id).data(),
                               t.grad(oid).data(), mean->data(), inv_std->data(),
                               scratch_dx.data(), scratch_dg.data(), scratch_db.data(), outer, len,
                               inner);
      if (x.requires_grad()) detail::reduce_accumulate(t.grad(x.id), scratch_dx);
      if (gamma.requires_grad()) detail::reduce_accumulate(t.grad(gamma.id), scratch_dg);
      if (beta.requires_grad()) detail::reduce_accumulate(t.grad(beta.id), scratch_db);
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// Mean along one axis, kept as extent 1 to ease broadcasting.
template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
  Tape<T>& tape = *a.tape;
  std::int64_t outer, len, inner;
  detail::axis_split(a.shape(), axis, outer, len, inner);
  Shape os = a.shape();
  os[axis] = 1;
  Tensor<T> out = Tensor<T>::uninitialized(os);
  kernels::mean_axis(a.value().data(), out.data(), outer, len, inner);
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid, outer, len, inner](Tape<T>& t) {
      kernels::mean_axis_grad(t.grad(oid).data(), t.grad(a.id).data(), outer, len, inner);
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(chunked_sum(a.value())));
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid](Tape<T>& t) {
      const T g = t.grad(oid)[0];
      Tensor<T>& da = t.grad(a.id);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// --- pointwise nonlinearities ----------------------------------------------------

template <typename T>
Var<T> gelu(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  kernels::gelu(a.value().data(), out.data(), static_cast<std::int64_t>(out.size()));
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid](Tape<T>& t) {
      kernels::gelu_grad(t.value(a.id).data(), t.grad(oid).data(), t.grad(a.id).data(),
                         static_cast<std::int64_t>(t.value(a.id).size()));
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  kernels::relu(a.value().data(), out.data(), static_cast<std::int64_t>(out.size()));
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid](Tape<T>& t) {
      kernels::relu_grad(t.value(a.id).data(), t.grad(oid).data(), t.grad(a.id).data(),
                         static_cast<std::int64_t>(t.value(a.id).size()));
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// --- data movement ---------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = *a.tape;
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  Tensor<T> out(shape, a.value().values());
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      Tensor<T>& da = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm) {
  Tape<T>& tape = *a.tape;
  const Shape& is = a.shape();
  if (perm.size() != is.size()) throw ValueError("permute rank mismatch");
  {
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
      if (p >= perm.size() || seen[p]) throw ValueError("permute: not a permutation");
      seen[p] = true;
    }
  }
  Shape os(is.size());
  for (std::size_t d = 0; d < is.size(); ++d) os[d] = is[perm[d]];
  Tensor<T> out = Tensor<T>::uninitialized(os);
  kernels::permute_copy(a.value().data(), out.data(), is, perm);
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) inv[perm[d]] = d;
    back = [a, oid, os, inv](Tape<T>& t) {
      Tensor<T> gperm = Tensor<T>::uninitialized(t.value(a.id).shape());
      kernels::permute_copy(t.grad(oid).data(), gperm.data(), os, inv);
      detail::reduce_accumulate(t.grad(a.id), gperm);
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// Concatenate along the trailing axis; leading dims must match.
template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() || as.size() < 1 ||
      !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    throw ShapeError("concat_last: incompatible shapes " + shape_str(as) + " and " +
                     shape_str(bs));
  }
  const std::size_t ca = as.back(), cb = bs.back();
  Shape os = as;
  os.back() = ca + cb;
  const std::size_t rows = numel(os) / (ca + cb);
  Tensor<T> out = Tensor<T>::uninitialized(os);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, b, oid, rows, ca, cb](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      if (a.requires_grad()) {
        Tensor<T>& da = t.grad(a.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < ca; ++i) da[r * ca + i] += g[r * (ca + cb) + i];
      }
      if (b.requires_grad()) {
        Tensor<T>& db = t.grad(b.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < cb; ++i) db[r * cb + i] += g[r * (ca + cb) + ca + i];
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// Cyclic shift of a [B, H, W, C] tensor: out[b,i,j] = in[b, i-sh mod H, j-sw mod W].
template <typename T>
Var<T> roll_hw(Var<T> a, std::int64_t sh, std::int64_t sw) {
  Tape<T>& tape = *a.tape;
  const Shape& s = a.shape();
  if (s.size() != 4) throw ShapeError("roll_hw expects rank 4, got " + shape_str(s));
  const std::int64_t B = s[0], H = s[1], W = s[2], C = s[3];
  auto wrap = [](std::int64_t v, std::int64_t m) { return ((v % m) + m) % m; };
  Tensor<T> out = Tensor<T>::uninitialized(s);
  const T* px = a.value().data();
  T* py = out.data();
  const bool par = kernels::parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < H; ++i) {
      const std::int64_t si = wrap(i - sh, H);
      for (std::int64_t j = 0; j < W; ++j) {
        const std::int64_t sj = wrap(j - sw, W);
        std::copy_n(px + ((b * H + si) * W + sj) * C, C, py + ((b * H + i) * W + j) * C);
      }
    }
  }
  const bool rg = a.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [a, oid, B, H, W, C, sh, sw, wrap](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      Tensor<T>& da = t.grad(a.id);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < H; ++i) {
          const std::int64_t si = wrap(i - sh, H);
          for (std::int64_t j = 0; j < W; ++j) {
            const std::int64_t sj = wrap(j - sw, W);
            const T* gs = g.data() + ((b * H + i) * W + j) * C;
            T* ds = da.data() + ((b * H + si) * W + sj) * C;
            for (std::int64_t c = 0; c < C; ++c) ds[c] += gs[c];
          }
        }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// Row gather: out[i, :] = table[indices[i], :].
template <typename T>
Var<T> embed_rows(Var<T> table, std::shared_ptr<const std::vector<std::size_t>> indices) {
  Tape<T>& tape = *table.tape;
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw ShapeError("embed_rows expects a rank-2 table");
  const std::size_t rows = indices->size(), cols = ts[1];
  for (std::size_t r : *indices) {
    if (r >= ts[0]) throw ValueError("embed_rows index out of range");
  }
  Tensor<T> out = Tensor<T>::uninitialized(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(table.value().data() + (*indices)[i] * cols, cols, out.data() + i * cols);
  }
  const bool rg = table.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [table, oid, indices, rows, cols](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      Tensor<T>& dt = t.grad(table.id);
      for (std::size_t i = 0; i < rows; ++i) {
        T* drow = dt.data() + (*indices)[i] * cols;
        const T* grow = g.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) drow[c] += grow[c];
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// x: [B, H, W, Cin], w: [kh, kw, Cin, Cout], bias: [Cout]; stride 1, same padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, bias);
  Tape<T>& tape = *x.tape;
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
  if (xs[3] != ws[2]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + " vs weight " +
                     shape_str(ws));
  }
  const std::int64_t B = xs[0], H = xs[1], W = xs[2], Cin = xs[3];
  const std::int64_t kh = ws[0], kw = ws[1], Cout = ws[3];
  if (bias.value().size() != static_cast<std::size_t>(Cout)) {
    throw ShapeError("conv2d bias extent mismatch");
  }
  Tensor<T> out = Tensor<T>::uninitialized(Shape{xs[0], xs[1], xs[2], ws[3]});
  kernels::conv2d(x.value().data(), w.value().data(), bias.value().data(), out.data(), B, H, W,
                  Cin, Cout, kh, kw);
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [x, w, bias, oid, B, H, W, Cin, Cout, kh, kw](Tape<T>& t) {
      const Tensor<T>& g = t.grad(oid);
      if (x.requires_grad()) {
        kernels::conv2d_grad_input(g.data(), t.value(w.id).data(), t.grad(x.id).data(), B, H, W,
                                   Cin, Cout, kh, kw);
      }
      if (w.requires_grad() || bias.requires_grad()) {
        Tensor<T> dw(t.value(w.id).shape());
        Tensor<T> db(t.value(bias.id).shape());
        kernels::conv2d_grad_weight(t.value(x.id).data(), g.data(), dw.data(), db.data(), B, H, W,
                                    Cin, Cout, kh, kw);
        if (w.requires_grad()) detail::reduce_accumulate(t.grad(w.id), dw);
        if (bias.requires_grad()) detail::reduce_accumulate(t.grad(bias.id), db);
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

// Bilinear 2x upsampling of [B, H, W, C].
template <typename T>
Var<T> upsample2x(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("upsample2x expects rank 4, got " + shape_str(xs));
  const std::int64_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  Tensor<T> out = Tensor<T>::uninitialized(Shape{xs[0], xs[1] * 2, xs[2] * 2, xs[3]});
  kernels::upsample2x(x.value().data(), out.data(), B, H, W, C);
  const bool rg = x.requires_grad();
  const std::size_t oid = tape.next_id();
  std::function<void(Tape<T>&)> back;
  if (rg) {
    back = [x, oid, B, H, W, C](Tape<T>& t) {
      kernels::upsample2x_grad(t.grad(oid).data(), t.grad(x.id).data(), B, H, W, C);
    };
  }
  return tape.push(std::move(out), rg, std::move(back));
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add(matmul(x, w), b);
}

}  // namespace countnet
