// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "semamba/tensor.hpp"

namespace semamba {

constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline Tape* merged_tape(std::initializer_list<const Tensor*> ins,
                         const char* op) {
  Tape* t = nullptr;
  bool rg = false;
  for (const Tensor* in : ins) {
    if (!in->defined()) throw Error(std::string(op) + ": undefined input");
    rg = rg || in->requires_grad();
    if (in->tape()) {
      if (t && t != in->tape())
        throw Error(std::string(op) + ": inputs belong to different tapes");
      t = in->tape();
    }
  }
  return rg ? t : nullptr;
}

inline Tensor make_out(Shape s, Tape* tape) {
  Tensor t = Tensor::zeros(std::move(s));
  if (tape) {
    t.impl()->tape = tape;
    t.impl()->requires_grad = true;
  }
  return t;
}

inline std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& p) {
  if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
  return p->grad;
}

// Broadcast classes for binary elementwise ops: identical shapes, scalar
// second operand, or a vector matching the last axis of the first operand.
enum class Bcast { kSame, kScalar, kRow };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.size() == 1) return Bcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(a.rank() - 1))
    return Bcast::kRow;
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 BwdA dfa, BwdB dfb) {
  Bcast bc = bcast_kind(a, b, name);
  Tape* tape = merged_tape({&a, &b}, name);
  Tensor out = make_out(a.shape(), tape);
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  const long n = a.size();
  const long last = bc == Bcast::kRow ? a.dim(a.rank() - 1) : 1;
  for (long i = 0; i < n; ++i) {
    double bv = bc == Bcast::kSame ? bd[i]
                : bc == Bcast::kScalar ? bd[0]
                                       : bd[i % last];
    od[i] = fwd(ad[i], bv);
  }
  check_finite(name, out);
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool nga = a.requires_grad(), ngb = b.requires_grad();
    tape->record(name, [=] {
      if (oi->grad.empty()) return;
      const long n2 = long(oi->data.size());
      if (nga) {
        auto& ga = grad_of(ai);
        for (long i = 0; i < n2; ++i) {
          double bv = bc == Bcast::kSame ? bi->data[i]
                      : bc == Bcast::kScalar ? bi->data[0]
                                             : bi->data[i % last];
          ga[i] += oi->grad[i] * dfa(ai->data[i], bv);
        }
      }
      if (ngb) {
        auto& gb = grad_of(bi);
        for (long i = 0; i < n2; ++i) {
          double bv = bc == Bcast::kSame ? bi->data[i]
                      : bc == Bcast::kScalar ? bi->data[0]
                                             : bi->data[i % last];
          long j = bc == Bcast::kSame ? i : bc == Bcast::kScalar ? 0 : i % last;
          gb[j] += oi->grad[i] * dfb(ai->data[i], bv);
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

// atan2(y, x), elementwise, equal shapes.
inline Tensor atan2t(const Tensor& y, const Tensor& x) {
  if (y.shape() != x.shape())
    throw ShapeError("atan2: shape mismatch " + shape_str(y.shape()) + " vs " +
                     shape_str(x.shape()));
  Tape* tape = detail::merged_tape({&y, &x}, "atan2");
  Tensor out = detail::make_out(y.shape(), tape);
  const long n = y.size();
  for (long i = 0; i < n; ++i) out.data()[i] = std::atan2(y.data()[i], x.data()[i]);
  check_finite("atan2", out);
  if (tape) {
    auto yi = y.impl(), xi = x.impl(), oi = out.impl();
    bool ngy = y.requires_grad(), ngx = x.requires_grad();
    tape->record("atan2", [=] {
      if (oi->grad.empty()) return;
      for (long i = 0; i < n; ++i) {
        double yv = yi->data[i], xv = xi->data[i];
        double r2 = yv * yv + xv * xv;
        if (r2 == 0.0) continue;  // subgradient 0 at the origin
        if (ngy) detail::grad_of(yi)[i] += oi->grad[i] * xv / r2;
        if (ngx) detail::grad_of(xi)[i] -= oi->grad[i] * yv / r2;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// dfn receives (x, y) so activations can reuse the forward value.
template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd dfn) {
  Tape* tape = merged_tape({&x}, name);
  Tensor out = make_out(x.shape(), tape);
  const long n = x.size();
  for (long i = 0; i < n; ++i) out.data()[i] = fwd(x.data()[i]);
  check_finite(name, out);
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(name, [=] {
      if (oi->grad.empty()) return;
      auto& gx = grad_of(xi);
      for (long i = 0; i < n; ++i)
        gx[i] += oi->grad[i] * dfn(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

inline double sigmoid_v(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus_v(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

}  // namespace detail

inline Tensor neg(const Tensor& x) {
  return detail::unary_op(
      "neg", x, [](double v) { return -v; },
      [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

inline Tensor log1p(const Tensor& x) {
  return detail::unary_op(
      "log1p", x, [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

inline Tensor expm1(const Tensor& x) {
  return detail::unary_op(
      "expm1", x, [](double v) { return std::expm1(v); },
      [](double, double y) { return y + 1.0; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; });
}

inline Tensor sin(const Tensor& x) {
  return detail::unary_op(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

inline Tensor cos(const Tensor& x) {
  return detail::unary_op(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      "sigmoid", x, [](double v) { return detail::sigmoid_v(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary_op(
      "silu", x, [](double v) { return v * detail::sigmoid_v(v); },
      [](double v, double) {
        double s = detail::sigmoid_v(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary_op(
      "softplus", x, [](double v) { return detail::softplus_v(v); },
      [](double v, double) { return detail::sigmoid_v(v); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      "scale", x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& x, double c) {
  return detail::unary_op(
      "add_const", x, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

// x^p for x >= 0. For p < 1 the derivative at 0 is taken as 0.
inline Tensor pow_const(const Tensor& x, double p) {
  return detail::unary_op(
      "pow_const", x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) {
        if (v == 0.0 && p < 1.0) return 0.0;
        return p * std::pow(v, p - 1.0);
      });
}

// ---------------------------------------------------------------------------
// matmul: (M,K) x (K,N) -> (M,N)
// ---------------------------------------------------------------------------

namespace detail {

inline void mm_accum(const double* a, const double* b, double* c, long M,
                     long K, long N) {
  for (long m = 0; m < M; ++m) {
    const double* arow = a + m * K;
    double* crow = c + m * N;
    for (long k = 0; k < K; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b + k * N;
      for (long n = 0; n < N; ++n) crow[n] += av * brow[n];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const long M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tape* tape = detail::merged_tape({&a, &b}, "matmul");
  Tensor out = detail::make_out({M, N}, tape);
  detail::mm_accum(a.data(), b.data(), out.data(), M, K, N);
  check_finite("matmul", out);
  if (tape) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool nga = a.requires_grad(), ngb = b.requires_grad();
    tape->record("matmul", [=] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (nga) {
        // da[m,k] = dot(g[m,:], b[k,:])
        auto& ga = detail::grad_of(ai);
        for (long m = 0; m < M; ++m) {
          const double* grow = g + m * N;
          for (long k = 0; k < K; ++k) {
            const double* brow = bi->data.data() + k * N;
            double acc = 0.0;
            for (long n = 0; n < N; ++n) acc += grow[n] * brow[n];
            ga[m * K + k] += acc;
          }
        }
      }
      if (ngb) {
        // db[k,:] += a[m,k] * g[m,:]
        auto& gb = detail::grad_of(bi);
        for (long m = 0; m < M; ++m) {
          const double* grow = g + m * N;
          const double* arow = ai->data.data() + m * K;
          for (long k = 0; k < K; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            double* gbrow = gb.data() + k * N;
            for (long n = 0; n < N; ++n) gbrow[n] += av * grow[n];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape s) {
  if (numel(s) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(s));
  Tape* tape = detail::merged_tape({&x}, "reshape");
  Tensor out = detail::make_out(std::move(s), tape);
  out.vec() = x.vec();
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("reshape", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

namespace detail {

// Split a shape at `axis` into (outer, d, inner) block sizes.
struct AxisBlocks {
  long outer, d, inner;
};

inline AxisBlocks axis_blocks(const Shape& s, long axis) {
  if (axis < 0 || axis >= long(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  AxisBlocks b{1, s[size_t(axis)], 1};
  for (long i = 0; i < axis; ++i) b.outer *= s[size_t(i)];
  for (long i = axis + 1; i < long(s.size()); ++i) b.inner *= s[size_t(i)];
  return b;
}

}  // namespace detail

inline Tensor slice(const Tensor& x, long axis, long start, long len) {
  auto b = detail::axis_blocks(x.shape(), axis);
  if (start < 0 || len < 0 || start + len > b.d)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of axis size " +
                     std::to_string(b.d));
  Shape os = x.shape();
  os[size_t(axis)] = len;
  Tape* tape = detail::merged_tape({&x}, "slice");
  Tensor out = detail::make_out(os, tape);
  for (long o = 0; o < b.outer; ++o)
    std::memcpy(out.data() + o * len * b.inner,
                x.data() + (o * b.d + start) * b.inner,
                size_t(len * b.inner) * sizeof(double));
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("slice", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (long o = 0; o < b.outer; ++o) {
        const double* gsrc = oi->grad.data() + o * len * b.inner;
        double* gdst = gx.data() + (o * b.d + start) * b.inner;
        for (long i = 0; i < len * b.inner; ++i) gdst[i] += gsrc[i];
      }
    });
  }
  return out;
}

// Zero padding along one axis.
inline Tensor pad(const Tensor& x, long axis, long before, long after) {
  if (before < 0 || after < 0) throw ShapeError("pad: negative padding");
  auto b = detail::axis_blocks(x.shape(), axis);
  Shape os = x.shape();
  os[size_t(axis)] += before + after;
  Tape* tape = detail::merged_tape({&x}, "pad");
  Tensor out = detail::make_out(os, tape);
  const long od = os[size_t(axis)];
  for (long o = 0; o < b.outer; ++o)
    std::memcpy(out.data() + (o * od + before) * b.inner,
                x.data() + o * b.d * b.inner,
                size_t(b.d * b.inner) * sizeof(double));
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("pad", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (long o = 0; o < b.outer; ++o) {
        const double* gsrc = oi->grad.data() + (o * od + before) * b.inner;
        double* gdst = gx.data() + o * b.d * b.inner;
        for (long i = 0; i < b.d * b.inner; ++i) gdst[i] += gsrc[i];
      }
    });
  }
  return out;
}

inline Tensor flip(const Tensor& x, long axis) {
  auto b = detail::axis_blocks(x.shape(), axis);
  Tape* tape = detail::merged_tape({&x}, "flip");
  Tensor out = detail::make_out(x.shape(), tape);
  for (long o = 0; o < b.outer; ++o)
    for (long d = 0; d < b.d; ++d)
      std::memcpy(out.data() + (o * b.d + (b.d - 1 - d)) * b.inner,
                  x.data() + (o * b.d + d) * b.inner,
                  size_t(b.inner) * sizeof(double));
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("flip", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (long o = 0; o < b.outer; ++o)
        for (long d = 0; d < b.d; ++d) {
          const double* gsrc = oi->grad.data() + (o * b.d + (b.d - 1 - d)) * b.inner;
          double* gdst = gx.data() + (o * b.d + d) * b.inner;
          for (long i = 0; i < b.inner; ++i) gdst[i] += gsrc[i];
        }
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& xs, long axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape os = xs[0].shape();
  long total = 0;
  for (const Tensor& t : xs) {
    Shape s = t.shape();
    if (long(s.size()) != long(os.size()))
      throw ShapeError("concat: rank mismatch");
    for (long i = 0; i < long(s.size()); ++i)
      if (i != axis && s[size_t(i)] != os[size_t(i)])
        throw ShapeError("concat: shape mismatch on non-concat axis");
    total += s[size_t(axis)];
  }
  os[size_t(axis)] = total;
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : xs) ptrs.push_back(&t);
  Tape* tape = nullptr;
  {
    bool rg = false;
    for (const Tensor* p : ptrs) {
      rg = rg || p->requires_grad();
      if (p->tape()) {
        if (tape && tape != p->tape())
          throw Error("concat: inputs belong to different tapes");
        tape = p->tape();
      }
    }
    if (!rg) tape = nullptr;
  }
  Tensor out = detail::make_out(os, tape);
  auto ob = detail::axis_blocks(os, axis);
  long off = 0;
  for (const Tensor& t : xs) {
    long d = t.dim(axis);
    for (long o = 0; o < ob.outer; ++o)
      std::memcpy(out.data() + (o * ob.d + off) * ob.inner,
                  t.data() + o * d * ob.inner,
                  size_t(d * ob.inner) * sizeof(double));
    off += d;
  }
  if (tape) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    std::vector<long> dims;
    for (const Tensor& t : xs) {
      ins.push_back(t.impl());
      dims.push_back(t.dim(axis));
    }
    auto oi = out.impl();
    tape->record("concat", [=] {
      if (oi->grad.empty()) return;
      long o2 = 0;
      for (size_t k = 0; k < ins.size(); ++k) {
        if (ins[k]->requires_grad) {
          auto& gx = detail::grad_of(ins[k]);
          for (long o = 0; o < ob.outer; ++o) {
            const double* gsrc = oi->grad.data() + (o * ob.d + o2) * ob.inner;
            double* gdst = gx.data() + o * dims[k] * ob.inner;
            for (long i = 0; i < dims[k] * ob.inner; ++i) gdst[i] += gsrc[i];
          }
        }
        o2 += dims[k];
      }
    });
  }
  return out;
}

inline Tensor permute(const Tensor& x, const std::vector<long>& perm) {
  const long r = x.rank();
  if (long(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  Shape os(static_cast<size_t>(r));
  for (long i = 0; i < r; ++i) os[size_t(i)] = x.dim(perm[size_t(i)]);
  Tape* tape = detail::merged_tape({&x}, "permute");
  Tensor out = detail::make_out(os, tape);
  // strides of x in output axis order
  std::vector<long> xstride(size_t(r), 1), ostride(size_t(r), 1);
  {
    std::vector<long> sx(size_t(r), 1);
    for (long i = r - 2; i >= 0; --i)
      sx[size_t(i)] = sx[size_t(i + 1)] * x.dim(i + 1);
    for (long i = 0; i < r; ++i) xstride[size_t(i)] = sx[size_t(perm[size_t(i)])];
    for (long i = r - 2; i >= 0; --i)
      ostride[size_t(i)] = ostride[size_t(i + 1)] * os[size_t(i + 1)];
  }
  const long n = x.size();
  std::vector<long> idx(size_t(r), 0);
  const double* xd = x.data();
  double* od = out.data();
  for (long i = 0; i < n; ++i) {
    long xoff = 0;
    for (long a = 0; a < r; ++a) xoff += idx[size_t(a)] * xstride[size_t(a)];
    od[i] = xd[xoff];
    for (long a = r - 1; a >= 0; --a) {
      if (++idx[size_t(a)] < os[size_t(a)]) break;
      idx[size_t(a)] = 0;
    }
  }
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("permute", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      std::vector<long> id2(size_t(r), 0);
      for (long i = 0; i < n; ++i) {
        long xoff = 0;
        for (long a = 0; a < r; ++a) xoff += id2[size_t(a)] * xstride[size_t(a)];
        gx[xoff] += oi->grad[i];
        for (long a = r - 1; a >= 0; --a) {
          if (++id2[size_t(a)] < os[size_t(a)]) break;
          id2[size_t(a)] = 0;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  Tape* tape = detail::merged_tape({&x}, "sum");
  Tensor out = detail::make_out({1}, tape);
  double acc = 0.0;
  for (double v : x.vec()) acc += v;
  out.data()[0] = acc;
  check_finite("sum", out);
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("sum", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (double& g : gx) g += oi->grad[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  const double inv = 1.0 / double(x.size());
  Tape* tape = detail::merged_tape({&x}, "mean");
  Tensor out = detail::make_out({1}, tape);
  double acc = 0.0;
  for (double v : x.vec()) acc += v;
  out.data()[0] = acc * inv;
  check_finite("mean", out);
  if (tape) {
    auto xi = x.impl(), oi = out.impl();
    tape->record("mean", [=] {
      if (oi->grad.empty()) return;
      auto& gx = detail::grad_of(xi);
      for (double& g : gx) g += oi->grad[0] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layernorm over the last axis, with affine parameters.
// ---------------------------------------------------------------------------

inline Tensor layernorm(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta) {
  if (x.rank() < 1) throw ShapeError("layernorm: rank-0 input");
  const long N = x.dim(x.rank() - 1);
  if (gamma.size() != N || beta.size() != N)
    throw ShapeError("layernorm: affine params must have size " +
                     std::to_string(N));
  const long P = x.size() / N;
  Tape* tape = detail::merged_tape({&x, &gamma, &beta}, "layernorm");
  Tensor out = detail::make_out(x.shape(), tape);
  auto xhat = std::make_shared<std::vector<double>>(size_t(x.size()));
  auto inv_std = std::make_shared<std::vector<double>>(size_t(P));
  const double* xd = x.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();
  double* od = out.data();
  for (long p = 0; p < P; ++p) {
    const double* row = xd + p * N;
    double mu = 0.0;
    for (long i = 0; i < N; ++i) mu += row[i];
    mu /= double(N);
    double var = 0.0;
    for (long i = 0; i < N; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= double(N);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[size_t(p)] = inv;
    for (long i = 0; i < N; ++i) {
      double xh = (row[i] - mu) * inv;
      (*xhat)[size_t(p * N + i)] = xh;
      od[p * N + i] = gd[i] * xh + bd[i];
    }
  }
  check_finite("layernorm", out);
  if (tape) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    bool ngx = x.requires_grad(), ngg = gamma.requires_grad(),
         ngb = beta.requires_grad();
    tape->record("layernorm", [=] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (long p = 0; p < P; ++p) {
        const double* grow = g + p * N;
        const double* xh = xhat->data() + p * N;
        double inv = (*inv_std)[size_t(p)];
        if (ngg) {
          auto& gg = detail::grad_of(gi);
          for (long i = 0; i < N; ++i) gg[i] += grow[i] * xh[i];
        }
        if (ngb) {
          auto& gb = detail::grad_of(bi);
          for (long i = 0; i < N; ++i) gb[i] += grow[i];
        }
        if (ngx) {
          auto& gx = detail::grad_of(xi);
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (long i = 0; i < N; ++i) {
            double dxh = grow[i] * gi->data[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
          }
          mean_dxh /= double(N);
          mean_dxh_xh /= double(N);
          for (long i = 0; i < N; ++i) {
            double dxh = grow[i] * gi->data[i];
            gx[p * N + i] += inv * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv1d_depthwise_causal: x (T,C) or (B,T,C), w (C,K). Left-pads by K-1 so
// the output length equals T and step t sees inputs <= t only.
// ---------------------------------------------------------------------------

inline Tensor conv1d_depthwise_causal(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 && x.rank() != 3)
    throw ShapeError("conv1d_depthwise_causal: input must be (T,C) or (B,T,C)");
  const long B = x.rank() == 3 ? x.dim(0) : 1;
  const long T = x.dim(x.rank() - 2), C = x.dim(x.rank() - 1);
  if (w.rank() != 2 || w.dim(0) != C)
    throw ShapeError("conv1d_depthwise_causal: kernel must be (C,K) with C=" +
                     std::to_string(C) + ", got " + shape_str(w.shape()));
  const long K = w.dim(1);
  Tape* tape = detail::merged_tape({&x, &w}, "conv1d_depthwise_causal");
  Tensor out = detail::make_out(x.shape(), tape);
  // kernel transposed to (K,C) for contiguous channel access
  std::vector<double> wt(static_cast<size_t>(K * C));
  for (long c = 0; c < C; ++c)
    for (long k = 0; k < K; ++k) wt[size_t(k * C + c)] = w.data()[c * K + k];
  for (long b = 0; b < B; ++b) {
    const double* xb = x.data() + b * T * C;
    double* ob = out.data() + b * T * C;
    for (long t = 0; t < T; ++t) {
      double* orow = ob + t * C;
      for (long k = 0; k < K; ++k) {
        long tt = t - (K - 1) + k;
        if (tt < 0) continue;
        const double* xrow = xb + tt * C;
        const double* wrow = wt.data() + k * C;
        for (long c = 0; c < C; ++c) orow[c] += wrow[c] * xrow[c];
      }
    }
  }
  check_finite("conv1d_depthwise_causal", out);
  if (tape) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    bool ngx = x.requires_grad(), ngw = w.requires_grad();
    tape->record("conv1d_depthwise_causal", [=] {
      if (oi->grad.empty()) return;
      for (long b = 0; b < B; ++b) {
        const double* gb = oi->grad.data() + b * T * C;
        const double* xb = xi->data.data() + b * T * C;
        for (long t = 0; t < T; ++t) {
          const double* grow = gb + t * C;
          for (long k = 0; k < K; ++k) {
            long tt = t - (K - 1) + k;
            if (tt < 0) continue;
            if (ngx) {
              auto& gx = detail::grad_of(xi);
              double* gxrow = gx.data() + (b * T + tt) * C;
              for (long c = 0; c < C; ++c)
                gxrow[c] += wi->data[c * K + k] * grow[c];
            }
            if (ngw) {
              auto& gw = detail::grad_of(wi);
              const double* xrow = xb + tt * C;
              for (long c = 0; c < C; ++c) gw[c * K + k] += xrow[c] * grow[c];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: x (Cin,H,W), w (Cout,Cin,kh,kw); explicit per-side padding,
// strides and dilations. No implicit bias (compose with add).
// ---------------------------------------------------------------------------

struct Conv2dGeom {
  long stride_h = 1, stride_w = 1;
  long pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  long dil_h = 1, dil_w = 1;
};

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     const Conv2dGeom& g) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + " w " +
                     shape_str(w.shape()));
  const long Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw ShapeError("conv2d: bias must be (Cout)");
  const long Hp = H + g.pad_top + g.pad_bottom, Wp = W + g.pad_left + g.pad_right;
  const long eh = g.dil_h * (kh - 1) + 1, ew = g.dil_w * (kw - 1) + 1;
  if (Hp < eh || Wp < ew) throw ShapeError("conv2d: kernel larger than input");
  const long Ho = (Hp - eh) / g.stride_h + 1, Wo = (Wp - ew) / g.stride_w + 1;
  Tape* tape = bias.defined()
                   ? detail::merged_tape({&x, &w, &bias}, "conv2d")
                   : detail::merged_tape({&x, &w}, "conv2d");
  Tensor out = detail::make_out({Cout, Ho, Wo}, tape);
  const double* xd = x.data();
  const double* wd = w.data();
  double* od = out.data();
  if (bias.defined())
    for (long co = 0; co < Cout; ++co)
      for (long i = 0; i < Ho * Wo; ++i) od[co * Ho * Wo + i] = bias.data()[co];
  for (long co = 0; co < Cout; ++co)
    for (long ci = 0; ci < Cin; ++ci)
      for (long i = 0; i < kh; ++i)
        for (long j = 0; j < kw; ++j) {
          double wv = wd[((co * Cin + ci) * kh + i) * kw + j];
          if (wv == 0.0) continue;
          for (long ho = 0; ho < Ho; ++ho) {
            long hi = ho * g.stride_h - g.pad_top + i * g.dil_h;
            if (hi < 0 || hi >= H) continue;
            double* orow = od + (co * Ho + ho) * Wo;
            const double* xrow = xd + (ci * H + hi) * W;
            for (long wo = 0; wo < Wo; ++wo) {
              long wi = wo * g.stride_w - g.pad_left + j * g.dil_w;
              if (wi < 0 || wi >= W) continue;
              orow[wo] += wv * xrow[wi];
            }
          }
        }
  check_finite("conv2d", out);
  if (tape) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    bool ngx = x.requires_grad(), ngw = w.requires_grad();
    bool ngb = bias.defined() && bias.requires_grad();
    tape->record("conv2d", [=] {
      if (oi->grad.empty()) return;
      const double* gd = oi->grad.data();
      if (ngb) {
        auto& gb = detail::grad_of(bi);
        for (long co = 0; co < Cout; ++co) {
          double acc = 0.0;
          for (long i = 0; i < Ho * Wo; ++i) acc += gd[co * Ho * Wo + i];
          gb[co] += acc;
        }
      }
      for (long co = 0; co < Cout; ++co)
        for (long ci = 0; ci < Cin; ++ci)
          for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
              const long widx = ((co * Cin + ci) * kh + i) * kw + j;
              double wv = wi->data[widx];
              double wacc = 0.0;
              for (long ho = 0; ho < Ho; ++ho) {
                long hi = ho * g.stride_h - g.pad_top + i * g.dil_h;
                if (hi < 0 || hi >= H) continue;
                const double* grow = gd + (co * Ho + ho) * Wo;
                const double* xrow = xi->data.data() + (ci * H + hi) * W;
                double* gxrow =
                    ngx ? detail::grad_of(xi).data() + (ci * H + hi) * W
                        : nullptr;
                for (long wo = 0; wo < Wo; ++wo) {
                  long wpos = wo * g.stride_w - g.pad_left + j * g.dil_w;
                  if (wpos < 0 || wpos >= W) continue;
                  if (ngx) gxrow[wpos] += wv * grow[wo];
                  if (ngw) wacc += xrow[wpos] * grow[wo];
                }
              }
              if (ngw) detail::grad_of(wi)[widx] += wacc;
            }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// transposed_conv2d: x (Cin,H,W), w (Cin,Cout,kh,kw).
// Hout = (H-1)*stride_h - pad_top - pad_bottom + kh.
// ---------------------------------------------------------------------------

inline Tensor transposed_conv2d(const Tensor& x, const Tensor& w,
                                const Tensor& bias, const Conv2dGeom& g) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0))
    throw ShapeError("transposed_conv2d: x " + shape_str(x.shape()) + " w " +
                     shape_str(w.shape()));
  const long Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw ShapeError("transposed_conv2d: bias must be (Cout)");
  const long Ho = (H - 1) * g.stride_h - g.pad_top - g.pad_bottom + kh;
  const long Wo = (W - 1) * g.stride_w - g.pad_left - g.pad_right + kw;
  if (Ho < 1 || Wo < 1) throw ShapeError("transposed_conv2d: empty output");
  Tape* tape = bias.defined()
                   ? detail::merged_tape({&x, &w, &bias}, "transposed_conv2d")
                   : detail::merged_tape({&x, &w}, "transposed_conv2d");
  Tensor out = detail::make_out({Cout, Ho, Wo}, tape);
  const double* xd = x.data();
  const double* wd = w.data();
  double* od = out.data();
  if (bias.defined())
    for (long co = 0; co < Cout; ++co)
      for (long i = 0; i < Ho * Wo; ++i) od[co * Ho * Wo + i] = bias.data()[co];
  for (long ci = 0; ci < Cin; ++ci)
    for (long co = 0; co < Cout; ++co)
      for (long i = 0; i < kh; ++i)
        for (long j = 0; j < kw; ++j) {
          double wv = wd[((ci * Cout + co) * kh + i) * kw + j];
          if (wv == 0.0) continue;
          for (long h = 0; h < H; ++h) {
            long ho = h * g.stride_h - g.pad_top + i;
            if (ho < 0 || ho >= Ho) continue;
            const double* xrow = xd + (ci * H + h) * W;
            double* orow = od + (co * Ho + ho) * Wo;
            for (long ww = 0; ww < W; ++ww) {
              long wo = ww * g.stride_w - g.pad_left + j;
              if (wo < 0 || wo >= Wo) continue;
              orow[wo] += wv * xrow[ww];
            }
          }
        }
  check_finite("transposed_conv2d", out);
  if (tape) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    bool ngx = x.requires_grad(), ngw = w.requires_grad();
    bool ngb = bias.defined() && bias.requires_grad();
    tape->record("transposed_conv2d", [=] {
      if (oi->grad.empty()) return;
      const double* gd = oi->grad.data();
      if (ngb) {
        auto& gb = detail::grad_of(bi);
        for (long co = 0; co < Cout; ++co) {
          double acc = 0.0;
          for (long i = 0; i < Ho * Wo; ++i) acc += gd[co * Ho * Wo + i];
          gb[co] += acc;
        }
      }
      for (long ci = 0; ci < Cin; ++ci)
        for (long co = 0; co < Cout; ++co)
          for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
              const long widx = ((ci * Cout + co) * kh + i) * kw + j;
              double wv = wi->data[widx];
              double wacc = 0.0;
              for (long h = 0; h < H; ++h) {
                long ho = h * g.stride_h - g.pad_top + i;
                if (ho < 0 || ho >= Ho) continue;
                const double* grow = gd + (co * Ho + ho) * Wo;
                const double* xrow = xi->data.data() + (ci * H + h) * W;
                double* gxrow =
                    ngx ? detail::grad_of(xi).data() + (ci * H + h) * W
                        : nullptr;
                for (long ww = 0; ww < W; ++ww) {
                  long wo = ww * g.stride_w - g.pad_left + j;
                  if (wo < 0 || wo >= Wo) continue;
                  if (ngx) gxrow[ww] += wv * grow[wo];
                  if (ngw) wacc += xrow[ww] * grow[wo];
                }
              }
              if (ngw) detail::grad_of(wi)[widx] += wacc;
            }
    });
  }
  return out;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dGeom& g) {
  return conv2d(x, w, Tensor(), g);
}

inline Tensor transposed_conv2d(const Tensor& x, const Tensor& w,
                                const Conv2dGeom& g) {
  return transposed_conv2d(x, w, Tensor(), g);
}

// ---------------------------------------------------------------------------
// Convenience composites (not primitives).
// ---------------------------------------------------------------------------

// x (..., K) * w (K,N) + b, flattening leading axes through matmul.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const long K = x.dim(x.rank() - 1);
  Shape os = x.shape();
  os.back() = w.dim(1);
  Tensor flat = x.rank() == 2 ? x : reshape(x, {x.size() / K, K});
  Tensor y = matmul(flat, w);
  if (b.defined()) y = add(y, b);
  return x.rank() == 2 ? y : reshape(y, os);
}

inline Tensor linear(const Tensor& x, const Tensor& w) {
  return linear(x, w, Tensor());
}

}  // namespace semamba
