#pragma once
// Dense tensors plus a define-by-run reverse-mode tape. Records happen in execution
// order, which is already a topological order; backward replays the exact reverse.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reppad/kernels.hpp"
#include "reppad/rng.hpp"

namespace reppad {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool grad_needed = false;  // true if this tensor is on a path to a parameter
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->value.assign(shape_numel(t.d_->shape), T(0));
    t.d_->requires_grad = requires_grad;
    t.d_->grad_needed = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.d_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> vals, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    if (shape_numel(shape) != static_cast<int64_t>(vals.size()))
      throw std::invalid_argument("tensor init: " + shape_str(shape) + " needs " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(vals.size()));
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(vals);
    t.d_->requires_grad = requires_grad;
    t.d_->grad_needed = requires_grad;
    return t;
  }

  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng, bool requires_grad = true) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.d_->value) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }
  int64_t dim(int i) const { return d_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }

  T* data() { return d_->value.data(); }
  const T* data() const { return d_->value.data(); }
  std::vector<T>& values() { return d_->value; }
  const std::vector<T>& values() const { return d_->value; }

  T scalar() const {
    if (numel() != 1) throw std::runtime_error("scalar() on tensor " + shape_str(shape()));
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  bool grad_needed() const { return d_->grad_needed; }
  void mark_grad_needed(bool v) { d_->grad_needed = v || d_->requires_grad; }

  // Grad buffer, zero-initialized on first touch.
  T* grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
    return d_->grad.data();
  }
  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<T>& grad_values() const { return d_->grad; }
  void clear_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
  }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <class T>
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  bool enabled() const { return enabled_; }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and replays recorded ops newest-first.
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1)
      throw std::runtime_error("backward() requires a scalar loss, got " +
                               shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  bool enabled_;
  std::vector<std::function<void()>> nodes_;
};

// ----------------------------------------------------------------------------
// op helpers
// ----------------------------------------------------------------------------

namespace detail {

template <class T>
bool track(Tape<T>& tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape.enabled()) return false;
  for (auto* t : ins)
    if (t->grad_needed()) return true;
  return false;
}

template <class T>
std::vector<T> transposed(const T* src, int64_t rows, int64_t cols) {
  std::vector<T> out(rows * cols);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// matmul family
// ----------------------------------------------------------------------------

// a: [..., k] (rank >= 2, leading dims flattened as rows), b: [k, n] -> [..., n]
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() >= 2 && b.rank() == 2,
                "matmul: need a rank>=2 and b rank 2, got " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  int64_t k = a.dim(static_cast<int>(a.rank() - 1));
  detail::check(b.dim(0) == k, "matmul: inner dims differ, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()));
  int64_t n = b.dim(1), rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  kernels::gemm_nn(rows, n, k, a.data(), k, b.data(), n, out.data(), n);
  if (detail::track<T>(tape, {&a, &b})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, bv = b, ov = out;
    tape.record([av, bv, ov, rows, n, k]() mutable {
      const T* dC = ov.grad();
      if (av.grad_needed()) {
        // dA = dC * B^T; transpose B once so the hot loop stays gemm_nn.
        std::vector<T> bt = detail::transposed(bv.data(), k, n);
        kernels::gemm_nn(rows, k, n, dC, n, bt.data(), k, av.grad(), k);
      }
      if (bv.grad_needed())
        kernels::gemm_tn(k, n, rows, av.data(), k, dC, n, bv.grad(), n);
    });
  }
  return out;
}

// a: [..., k], b: [n, k] -> [..., n] == a * b^T. Used for the tied logits head where
// b is the (large) embedding table; forward pre-transposes b to keep gemm_nn speed.
template <class T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() >= 2 && b.rank() == 2,
                "matmul_nt: need a rank>=2 and b rank 2, got " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  int64_t k = a.dim(static_cast<int>(a.rank() - 1));
  detail::check(b.dim(1) == k, "matmul_nt: inner dims differ, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()) + "^T");
  int64_t n = b.dim(0), rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  {
    std::vector<T> bt = detail::transposed(b.data(), n, k);  // [k, n]
    kernels::gemm_nn(rows, n, k, a.data(), k, bt.data(), n, out.data(), n);
  }
  if (detail::track<T>(tape, {&a, &b})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, bv = b, ov = out;
    tape.record([av, bv, ov, rows, n, k]() mutable {
      const T* dC = ov.grad();
      if (av.grad_needed())
        kernels::gemm_nn(rows, k, n, dC, n, bv.data(), k, av.grad(), k);
      if (bv.grad_needed())
        kernels::gemm_tn(n, k, rows, dC, n, av.data(), k, bv.grad(), k);
    });
  }
  return out;
}

// ----------------------------------------------------------------------------
// elementwise ops
// ----------------------------------------------------------------------------

// a + b. Shapes equal, or b.shape a trailing suffix of a.shape (broadcast over the
// leading dims; exactly what bias rows and positional tables need).
template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape &sa = a.shape(), &sb = b.shape();
  bool suffix = sb.size() <= sa.size();
  for (size_t i = 0; suffix && i < sb.size(); ++i)
    suffix = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  detail::check(suffix, "add: " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  int64_t nb = b.numel(), na = a.numel();
  Tensor<T> out = Tensor<T>::zeros(sa);
  const T *pa = a.data(), *pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < na; ++i) po[i] = pa[i] + pb[i % nb];
  if (detail::track<T>(tape, {&a, &b})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, bv = b, ov = out;
    tape.record([av, bv, ov, na, nb]() mutable {
      const T* g = ov.grad();
      if (av.grad_needed()) {
        T* ga = av.grad();
        for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (bv.grad_needed()) {
        T* gb = bv.grad();
        for (int64_t i = 0; i < na; ++i) gb[i % nb] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
  int64_t n = a.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T *pa = a.data(), *pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::track<T>(tape, {&a, &b})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, bv = b, ov = out;
    tape.record([av, bv, ov, n]() mutable {
      const T* g = ov.grad();
      if (av.grad_needed()) {
        T* ga = av.grad();
        const T* pb2 = bv.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (bv.grad_needed()) {
        T* gb = bv.grad();
        const T* pa2 = av.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

// s * a + c elementwise (gives 1 - z etc. without materializing constants)
template <class T>
Tensor<T> scalar_affine(Tape<T>& tape, const Tensor<T>& a, T s, T c) {
  int64_t n = a.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = s * pa[i] + c;
  if (detail::track<T>(tape, {&a})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, ov = out;
    tape.record([av, ov, s, n]() mutable {
      const T* g = ov.grad();
      T* ga = av.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += s * g[i];
    });
  }
  return out;
}

namespace detail {
template <class T, class FwdFn, class GradFn>
Tensor<T> unary_op(Tape<T>& tape, const Tensor<T>& a, FwdFn f, GradFn dydx_from_y) {
  int64_t n = a.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  if (track<T>(tape, {&a})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, ov = out;
    tape.record([av, ov, n, dydx_from_y]() mutable {
      const T* g = ov.grad();
      const T* y = ov.data();
      T* ga = av.grad();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * dydx_from_y(y[i]);
    });
  }
  return out;
}
}  // namespace detail

template <class T>
Tensor<T> tanh_op(Tape<T>& tape, const Tensor<T>& a) {
  return detail::unary_op(
      tape, a, [](T x) { return std::tanh(x); }, [](T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid_op(Tape<T>& tape, const Tensor<T>& a) {
  return detail::unary_op(
      tape, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu_op(Tape<T>& tape, const Tensor<T>& a) {
  return detail::unary_op(
      tape, a, [](T x) { return x > T(0) ? x : T(0); },
      [](T y) { return y > T(0) ? T(1) : T(0); });
}

// ----------------------------------------------------------------------------
// row-wise ops (last dim = row)
// ----------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  detail::check(x.rank() >= 1, "softmax_rows: rank >= 1 required");
  int64_t c = x.dim(static_cast<int>(x.rank() - 1));
  int64_t rows = x.numel() / c;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = px + r * c;
    T* o = po + r * c;
    T mx = in[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    T inv = static_cast<T>(1.0 / sum);
    for (int64_t j = 0; j < c; ++j) o[j] *= inv;
  }
  if (detail::track<T>(tape, {&x})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, ov = out;
    tape.record([xv, ov, rows, c]() mutable {
      const T* g = ov.grad();
      const T* y = ov.data();
      T* gx = xv.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T *gr = g + r * c, *yr = y + r * c;
        T* gxr = gx + r * c;
        double dot = 0;
        for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * yr[j];
        for (int64_t j = 0; j < c; ++j)
          gxr[j] += yr[j] * (gr[j] - static_cast<T>(dot));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = static_cast<T>(1e-5)) {
  int64_t c = x.dim(static_cast<int>(x.rank() - 1));
  detail::check(gain.numel() == c && bias.numel() == c,
                "layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  int64_t rows = x.numel() / c;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  Tensor<T> xhat = Tensor<T>::zeros(x.shape());  // kept for backward
  std::vector<T> inv_sigma(rows);
  const T *px = x.data(), *pg = gain.data(), *pb = bias.data();
  T *po = out.data(), *ph = xhat.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = px + r * c;
    double mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += in[j];
    mu /= c;
    double var = 0;
    for (int64_t j = 0; j < c; ++j) {
      double d = in[j] - mu;
      var += d * d;
    }
    var /= c;
    T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_sigma[r] = is;
    T* h = ph + r * c;
    T* o = po + r * c;
    for (int64_t j = 0; j < c; ++j) {
      h[j] = static_cast<T>((in[j] - mu)) * is;
      o[j] = pg[j] * h[j] + pb[j];
    }
  }
  if (detail::track<T>(tape, {&x, &gain, &bias})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, gv = gain, bv = bias, ov = out, hv = xhat;
    tape.record([xv, gv, bv, ov, hv, inv_sigma = std::move(inv_sigma), rows,
                 c]() mutable {
      const T* g = ov.grad();
      const T* h = hv.data();
      const T* pg2 = gv.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T *gr = g + r * c, *hr = h + r * c;
        if (xv.grad_needed()) {
          T* gx = xv.grad() + r * c;
          double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat * xhat)
          for (int64_t j = 0; j < c; ++j) {
            double dh = static_cast<double>(gr[j]) * pg2[j];
            m1 += dh;
            m2 += dh * hr[j];
          }
          m1 /= c;
          m2 /= c;
          for (int64_t j = 0; j < c; ++j) {
            double dh = static_cast<double>(gr[j]) * pg2[j];
            gx[j] += static_cast<T>((dh - m1 - hr[j] * m2) * inv_sigma[r]);
          }
        }
        if (gv.grad_needed()) {
          T* gg = gv.grad();
          for (int64_t j = 0; j < c; ++j) gg[j] += gr[j] * hr[j];
        }
        if (bv.grad_needed()) {
          T* gb = bv.grad();
          for (int64_t j = 0; j < c; ++j) gb[j] += gr[j];
        }
      }
    });
  }
  return out;
}

// ----------------------------------------------------------------------------
// lookup / gather / concat
// ----------------------------------------------------------------------------

// table: [R, d], ids flat; out shape = prefix_shape + [d]. Backward scatters only
// into rows actually looked up.
template <class T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           const std::vector<int32_t>& ids, Shape prefix_shape) {
  detail::check(table.rank() == 2, "embedding_lookup: table must be [rows, dim]");
  int64_t R = table.dim(0), d = table.dim(1);
  detail::check(shape_numel(prefix_shape) == static_cast<int64_t>(ids.size()),
                "embedding_lookup: prefix shape does not match id count");
  for (int32_t id : ids)
    detail::check(id >= 0 && id < R,
                  "embedding_lookup: id " + std::to_string(id) + " outside table of " +
                      std::to_string(R) + " rows");
  Shape out_shape = prefix_shape;
  out_shape.push_back(d);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* pt = table.data();
  T* po = out.data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(pt + static_cast<int64_t>(ids[i]) * d, pt + (static_cast<int64_t>(ids[i]) + 1) * d,
              po + static_cast<int64_t>(i) * d);
  if (detail::track<T>(tape, {&table})) {
    out.mark_grad_needed(true);
    Tensor<T> tv = table, ov = out;
    std::vector<int32_t> idv = ids;
    tape.record([tv, ov, idv = std::move(idv), d]() mutable {
      kernels::scatter_rows_add(tv.grad(), d, idv.data(),
                                static_cast<int64_t>(idv.size()), ov.grad());
    });
  }
  return out;
}

// x viewed as [rows, d] (last dim = d); picks the given rows.
template <class T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x,
                      const std::vector<int32_t>& rows_idx) {
  int64_t d = x.dim(static_cast<int>(x.rank() - 1));
  int64_t rows = x.numel() / d;
  for (int32_t r : rows_idx)
    detail::check(r >= 0 && r < rows, "gather_rows: row " + std::to_string(r) +
                                          " outside " + std::to_string(rows));
  Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(rows_idx.size()), d});
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < rows_idx.size(); ++i)
    std::copy(px + static_cast<int64_t>(rows_idx[i]) * d,
              px + (static_cast<int64_t>(rows_idx[i]) + 1) * d, po + static_cast<int64_t>(i) * d);
  if (detail::track<T>(tape, {&x})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, ov = out;
    std::vector<int32_t> idv = rows_idx;
    tape.record([xv, ov, idv = std::move(idv), d]() mutable {
      kernels::scatter_rows_add(xv.grad(), d, idv.data(),
                                static_cast<int64_t>(idv.size()), ov.grad());
    });
  }
  return out;
}

// Stacks [m_i, d] blocks vertically.
template <class T>
Tensor<T> concat_rows(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  int64_t d = parts[0].dim(static_cast<int>(parts[0].rank() - 1));
  int64_t total = 0;
  bool need = false;
  for (const auto& p : parts) {
    detail::check(p.dim(static_cast<int>(p.rank() - 1)) == d,
                  "concat_rows: last dims differ");
    total += p.numel() / d;
    need = need || p.grad_needed();
  }
  Tensor<T> out = Tensor<T>::zeros({total, d});
  T* po = out.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), po + off);
    off += p.numel();
  }
  if (tape.enabled() && need) {
    out.mark_grad_needed(true);
    std::vector<Tensor<T>> pv = parts;
    Tensor<T> ov = out;
    tape.record([pv, ov]() mutable {
      const T* g = ov.grad();
      int64_t off2 = 0;
      for (auto& p : pv) {
        if (p.grad_needed()) {
          T* gp = p.grad();
          for (int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off2 + i];
        }
        off2 += p.numel();
      }
    });
  }
  return out;
}

// Same elements under a new shape with identical numel (copying view).
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape new_shape) {
  detail::check(shape_numel(new_shape) == x.numel(),
                "reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                    " elements, target " + shape_str(new_shape) + " wants " +
                    std::to_string(shape_numel(new_shape)));
  Tensor<T> out = Tensor<T>::zeros(new_shape);
  std::copy(x.data(), x.data() + x.numel(), out.data());
  if (detail::track<T>(tape, {&x})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, ov = out;
    tape.record([xv, ov]() mutable {
      const T* g = ov.grad();
      T* gx = xv.grad();
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

// ----------------------------------------------------------------------------
// dropout
// ----------------------------------------------------------------------------

// Inverted dropout: kept entries scaled by 1/(1-rate). Identity when not training
// or rate == 0. Mask drawn elementwise in flat index order from the given stream.
template <class T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, Rng& rng,
                  bool training) {
  detail::check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<uint8_t>>(n);
  T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    bool keep = rng.next_double() >= rate;
    (*mask)[i] = keep;
    po[i] = keep ? px[i] * scale : T(0);
  }
  if (detail::track<T>(tape, {&x})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, ov = out;
    tape.record([xv, ov, mask, scale, n]() mutable {
      const T* g = ov.grad();
      T* gx = xv.grad();
      for (int64_t i = 0; i < n; ++i)
        if ((*mask)[i]) gx[i] += g[i] * scale;
    });
  }
  return out;
}

// ----------------------------------------------------------------------------
// masked multi-head causal attention (fused primitive)
// ----------------------------------------------------------------------------

// q,k,v: [B, N, d]; mask: B*N*N bytes, mask[b*N*N + i*N + j] != 0 <=> query i may
// attend to key j. Rows with no allowed key produce a zero output row.
template <class T>
Tensor<T> masked_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v,
                           std::shared_ptr<const std::vector<uint8_t>> mask,
                           int num_heads) {
  detail::check(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
                "masked_attention: q/k/v must share shape [B,N,d]");
  int64_t B = q.dim(0), N = q.dim(1), d = q.dim(2);
  detail::check(num_heads >= 1 && d % num_heads == 0,
                "masked_attention: num_heads must divide dim");
  detail::check(static_cast<int64_t>(mask->size()) == B * N * N,
                "masked_attention: mask must hold B*N*N bytes");
  int64_t dh = d / num_heads;
  T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> out = Tensor<T>::zeros(q.shape());
  // Attention weights kept for backward: [B, H, N, N]
  auto attn = std::make_shared<std::vector<T>>(B * num_heads * N * N, T(0));

  const T *pq = q.data(), *pk = k.data(), *pv = v.data();
  T* po = out.data();
  bool par = kernels::parallel_enabled() && B > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t b = 0; b < B; ++b) {
    std::vector<T> scores(N * N);
    const uint8_t* m = mask->data() + b * N * N;
    for (int h = 0; h < num_heads; ++h) {
      const T* Q = pq + b * N * d + h * dh;
      const T* K = pk + b * N * d + h * dh;
      const T* V = pv + b * N * d + h * dh;
      T* O = po + b * N * d + h * dh;
      std::fill(scores.begin(), scores.end(), T(0));
      kernels::gemm_nt_serial(N, N, dh, Q, d, K, d, scores.data(), N);
      T* A = attn->data() + ((b * num_heads) + h) * N * N;
      for (int64_t i = 0; i < N; ++i) {
        const T* srow = scores.data() + i * N;
        const uint8_t* mrow = m + i * N;
        T* arow = A + i * N;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < N; ++j)
          if (mrow[j] && srow[j] * inv_sqrt > mx) mx = srow[j] * inv_sqrt;
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // all masked -> zeros
        double sum = 0;
        for (int64_t j = 0; j < N; ++j) {
          if (mrow[j]) {
            arow[j] = std::exp(srow[j] * inv_sqrt - mx);
            sum += arow[j];
          }
        }
        T inv = static_cast<T>(1.0 / sum);
        for (int64_t j = 0; j < N; ++j) arow[j] *= inv;
        // O row = A row * V
        for (int64_t j = 0; j < N; ++j) {
          if (arow[j] != T(0)) {
            const T* vr = V + j * d;
            T a = arow[j];
            T* orow = O + i * d;
            for (int64_t c = 0; c < dh; ++c) orow[c] += a * vr[c];
          }
        }
      }
    }
  }
  if (detail::track<T>(tape, {&q, &k, &v})) {
    out.mark_grad_needed(true);
    Tensor<T> qv = q, kv = k, vv = v, ov = out;
    tape.record([qv, kv, vv, ov, attn, B, N, d, dh, num_heads, inv_sqrt]() mutable {
      const T *pq2 = qv.data(), *pk2 = kv.data(), *pv2 = vv.data();
      const T* gO = ov.grad();
      T* gq = qv.grad();
      T* gk = kv.grad();
      T* gv = vv.grad();
      bool par2 = kernels::parallel_enabled() && B > 1;
#pragma omp parallel for schedule(static) if (par2)
      for (int64_t b = 0; b < B; ++b) {
        std::vector<T> dA(N * N), dS(N * N);
        for (int h = 0; h < num_heads; ++h) {
          const T* Q = pq2 + b * N * d + h * dh;
          const T* K = pk2 + b * N * d + h * dh;
          const T* V = pv2 + b * N * d + h * dh;
          const T* dO = gO + b * N * d + h * dh;
          T* dQ = gq + b * N * d + h * dh;
          T* dK = gk + b * N * d + h * dh;
          T* dV = gv + b * N * d + h * dh;
          const T* A = attn->data() + ((b * num_heads) + h) * N * N;
          // dV += A^T dO
          kernels::gemm_tn_serial(N, dh, N, A, N, dO, d, dV, d);
          // dA = dO V^T
          std::fill(dA.begin(), dA.end(), T(0));
          kernels::gemm_nt_serial(N, N, dh, dO, d, V, d, dA.data(), N);
          // dS = A o (dA - rowsum(dA o A)), then scaled by 1/sqrt(dh)
          for (int64_t i = 0; i < N; ++i) {
            const T *ar = A + i * N, *dar = dA.data() + i * N;
            T* dsr = dS.data() + i * N;
            double dot = 0;
            for (int64_t j = 0; j < N; ++j) dot += static_cast<double>(dar[j]) * ar[j];
            for (int64_t j = 0; j < N; ++j)
              dsr[j] = ar[j] * (dar[j] - static_cast<T>(dot)) * inv_sqrt;
          }
          // dQ += dS K ; dK += dS^T Q
          kernels::gemm_nn_serial(N, dh, N, dS.data(), N, K, d, dQ, d);
          kernels::gemm_tn_serial(N, dh, N, dS.data(), N, Q, d, dK, d);
        }
      }
    });
  }
  return out;
}

// ----------------------------------------------------------------------------
// losses / reductions
// ----------------------------------------------------------------------------

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  double acc = 0;
  const T* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.data()[0] = static_cast<T>(acc);
  if (detail::track<T>(tape, {&x})) {
    out.mark_grad_needed(true);
    Tensor<T> xv = x, ov = out;
    tape.record([xv, ov]() mutable {
      T g = ov.grad()[0];
      T* gx = xv.grad();
      for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

// w1*a + w2*b for scalars; lets chunked losses combine into an exact global mean.
template <class T>
Tensor<T> add_scaled(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, T w1, T w2) {
  detail::check(a.numel() == 1 && b.numel() == 1, "add_scaled: scalars required");
  Tensor<T> out = Tensor<T>::zeros({1});
  out.data()[0] = w1 * a.data()[0] + w2 * b.data()[0];
  if (detail::track<T>(tape, {&a, &b})) {
    out.mark_grad_needed(true);
    Tensor<T> av = a, bv = b, ov = out;
    tape.record([av, bv, ov, w1, w2]() mutable {
      T g = ov.grad()[0];
      if (av.grad_needed()) av.grad()[0] += w1 * g;
      if (bv.grad_needed()) bv.grad()[0] += w2 * g;
    });
  }
  return out;
}

// Softmax cross-entropy over rows of logits [P, C], averaged over rows with
// mask != 0. All-false mask -> loss 0 and no gradient.
template <class T>
Tensor<T> masked_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                               const std::vector<int32_t>& targets,
                               const std::vector<uint8_t>& mask) {
  detail::check(logits.rank() == 2, "masked_cross_entropy: logits must be [P, C]");
  int64_t P = logits.dim(0), C = logits.dim(1);
  detail::check(static_cast<int64_t>(targets.size()) == P &&
                    static_cast<int64_t>(mask.size()) == P,
                "masked_cross_entropy: need one target and one mask byte per row");
  int64_t active = 0;
  for (auto m : mask)
    if (m) ++active;
  Tensor<T> out = Tensor<T>::zeros({1});
  if (active == 0) return out;
  for (int64_t r = 0; r < P; ++r)
    detail::check(!mask[r] || (targets[r] >= 0 && targets[r] < C),
                  "masked_cross_entropy: target " + std::to_string(targets[r]) +
                      " outside [0," + std::to_string(C) + ") at row " +
                      std::to_string(r));
  auto probs = std::make_shared<std::vector<T>>(P * C, T(0));
  const T* pl = logits.data();
  double loss_acc = 0;
  std::vector<double> row_loss(P, 0.0);
  bool par = kernels::parallel_enabled() && P > 4;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < P; ++r) {
    if (!mask[r]) continue;
    const T* in = pl + r * C;
    T* pr = probs->data() + r * C;
    T mx = in[0];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, in[j]);
    double sum = 0;
    for (int64_t j = 0; j < C; ++j) {
      pr[j] = std::exp(in[j] - mx);
      sum += pr[j];
    }
    T inv = static_cast<T>(1.0 / sum);
    for (int64_t j = 0; j < C; ++j) pr[j] *= inv;
    row_loss[r] = std::log(sum) + mx - in[targets[r]];
  }
  for (int64_t r = 0; r < P; ++r) loss_acc += row_loss[r];
  out.data()[0] = static_cast<T>(loss_acc / active);
  if (detail::track<T>(tape, {&logits})) {
    out.mark_grad_needed(true);
    Tensor<T> lv = logits, ov = out;
    std::vector<int32_t> tv = targets;
    std::vector<uint8_t> mv = mask;
    tape.record([lv, ov, probs, tv = std::move(tv), mv = std::move(mv), P, C,
                 active]() mutable {
      T g = ov.grad()[0] / static_cast<T>(active);
      T* gl = lv.grad();
      bool par2 = kernels::parallel_enabled() && P > 4;
#pragma omp parallel for schedule(static) if (par2)
      for (int64_t r = 0; r < P; ++r) {
        if (!mv[r]) continue;
        const T* pr = probs->data() + r * C;
        T* gr = gl + r * C;
        for (int64_t j = 0; j < C; ++j) gr[j] += g * pr[j];
        gr[tv[r]] -= g;
      }
    });
  }
  return out;
}

}  // namespace reppad
