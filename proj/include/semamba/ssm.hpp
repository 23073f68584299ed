// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "semamba/ops.hpp"
#include "semamba/tensor.hpp"

namespace semamba {

// Selective state-space core: zero-order-hold discretization on diagonal A,
// the linear recurrence h_n = Abar_n h_{n-1} + Bbar_n x_n with readout
// y_n = C_n h_n + D x_n, evaluated either step by step or by a blocked
// associative prefix scan.

constexpr long kScanBlock = 64;

enum class ScanMode { kSequential, kParallel };

// ---------------------------------------------------------------------------
// discretize: value-level inspection of (Delta, A, B) -> (Abar, Bbar).
// The scans fuse this computation; this entry point exists so the
// discretization itself can be probed against the closed form.
// ---------------------------------------------------------------------------

inline std::pair<Tensor, Tensor> discretize(const Tensor& delta,
                                            const Tensor& A, const Tensor& B) {
  if (delta.requires_grad() || A.requires_grad() || B.requires_grad())
    throw Error("discretize: value-level op; the scan differentiates through "
                "its own fused discretization");
  if (delta.rank() != 2 || A.rank() != 2 || B.rank() != 2 ||
      B.dim(0) != delta.dim(0) || B.dim(1) != A.dim(1))
    throw ShapeError("discretize: delta " + shape_str(delta.shape()) + " A " +
                     shape_str(A.shape()) + " B " + shape_str(B.shape()));
  const long T = delta.dim(0), C = delta.dim(1), S = A.dim(1);
  if (A.dim(0) != C) throw ShapeError("discretize: A rows must match channels");
  for (double v : delta.vec())
    if (!(v > 0.0)) throw NumericError("discretize: nonpositive delta entry");
  for (double v : A.vec())
    if (!(v < 0.0)) throw NumericError("discretize: nonnegative A entry");
  Tensor abar = Tensor::zeros({T, C, S});
  Tensor bbar = Tensor::zeros({T, C, S});
  for (long t = 0; t < T; ++t)
    for (long c = 0; c < C; ++c) {
      double dt = delta.data()[t * C + c];
      for (long s = 0; s < S; ++s) {
        abar.data()[(t * C + c) * S + s] = std::exp(dt * A.data()[c * S + s]);
        bbar.data()[(t * C + c) * S + s] = dt * B.data()[t * S + s];
      }
    }
  return {abar, bbar};
}

// ---------------------------------------------------------------------------
// selective scan
// ---------------------------------------------------------------------------

namespace detail {

struct ScanDims {
  long Bn, T, C, S;
  bool batched;
};

inline ScanDims scan_dims(const Tensor& x, const Tensor& delta,
                          const Tensor& A, const Tensor& B, const Tensor& Cm,
                          const Tensor& D) {
  ScanDims d{};
  d.batched = x.rank() == 3;
  if (x.rank() != 2 && x.rank() != 3)
    throw ShapeError("selective_scan: x must be (T,C) or (B,T,C)");
  d.Bn = d.batched ? x.dim(0) : 1;
  d.T = x.dim(x.rank() - 2);
  d.C = x.dim(x.rank() - 1);
  if (A.rank() != 2 || A.dim(0) != d.C)
    throw ShapeError("selective_scan: A must be (C,S)");
  d.S = A.dim(1);
  if (delta.shape() != x.shape())
    throw ShapeError("selective_scan: delta must match x");
  Shape bs = d.batched ? Shape{d.Bn, d.T, d.S} : Shape{d.T, d.S};
  if (B.shape() != bs || Cm.shape() != bs)
    throw ShapeError("selective_scan: B and C must be " + shape_str(bs));
  if (D.rank() != 1 || D.dim(0) != d.C)
    throw ShapeError("selective_scan: D must be (C)");
  return d;
}

// Forward pass; fills y and, when hsave != nullptr, the per-step states
// (Bn,T,C,S) needed by the backward scan.
inline void scan_forward(const ScanDims& d, const double* x,
                         const double* delta, const double* A, const double* B,
                         const double* Cm, const double* D, double* y,
                         double* hsave, ScanMode mode) {
  const long C = d.C, S = d.S, T = d.T;
  std::vector<double> h(static_cast<size_t>(C * S));
  std::vector<double> apref, bpref;
  if (mode == ScanMode::kParallel) {
    apref.resize(size_t(kScanBlock * C * S));
    bpref.resize(size_t(kScanBlock * C * S));
  }
  for (long b = 0; b < d.Bn; ++b) {
    const double* xb = x + b * T * C;
    const double* db = delta + b * T * C;
    const double* Bb = B + b * T * S;
    const double* Cb = Cm + b * T * S;
    double* yb = y + b * T * C;
    std::fill(h.begin(), h.end(), 0.0);
    if (mode == ScanMode::kSequential) {
      for (long t = 0; t < T; ++t) {
        const double* Bt = Bb + t * S;
        const double* Ct = Cb + t * S;
        double* yt = yb + t * C;
        for (long c = 0; c < C; ++c) {
          double dt = db[t * C + c];
          double xv = xb[t * C + c];
          double dx = dt * xv;
          const double* Ac = A + c * S;
          double* hc = h.data() + c * S;
          double acc = 0.0;
          for (long s = 0; s < S; ++s) {
            double hv = std::exp(dt * Ac[s]) * hc[s] + dx * Bt[s];
            hc[s] = hv;
            acc += Ct[s] * hv;
          }
          yt[c] = acc + D[c] * xv;
        }
        if (hsave)
          std::memcpy(hsave + (b * T + t) * C * S, h.data(),
                      size_t(C * S) * sizeof(double));
      }
    } else {
      // Blocked two-pass prefix scan over the pairs (a,b) with combine
      // (a1,b1)*(a2,b2) = (a2*a1, a2*b1 + b2). Pass 1 builds carry-free
      // local prefixes inside the block; pass 2 folds in the carry from
      // all earlier blocks and emits states/outputs.
      for (long t0 = 0; t0 < T; t0 += kScanBlock) {
        const long L = std::min(kScanBlock, T - t0);
        for (long t = 0; t < L; ++t) {
          const double* Bt = Bb + (t0 + t) * S;
          for (long c = 0; c < C; ++c) {
            double dt = db[(t0 + t) * C + c];
            double dx = dt * xb[(t0 + t) * C + c];
            const double* Ac = A + c * S;
            double* ap = apref.data() + (t * C + c) * S;
            double* bp = bpref.data() + (t * C + c) * S;
            if (t == 0) {
              for (long s = 0; s < S; ++s) {
                double a = std::exp(dt * Ac[s]);
                ap[s] = a;
                bp[s] = dx * Bt[s];
              }
            } else {
              const double* ap0 = apref.data() + ((t - 1) * C + c) * S;
              const double* bp0 = bpref.data() + ((t - 1) * C + c) * S;
              for (long s = 0; s < S; ++s) {
                double a = std::exp(dt * Ac[s]);
                ap[s] = a * ap0[s];
                bp[s] = a * bp0[s] + dx * Bt[s];
              }
            }
          }
        }
        // fold carry, emit h and y for the block
        for (long t = 0; t < L; ++t) {
          const double* Ct = Cb + (t0 + t) * S;
          double* yt = yb + (t0 + t) * C;
          for (long c = 0; c < C; ++c) {
            const double* ap = apref.data() + (t * C + c) * S;
            const double* bp = bpref.data() + (t * C + c) * S;
            const double* hc = h.data() + c * S;
            double acc = 0.0;
            if (hsave) {
              double* hs = hsave + ((b * T + t0 + t) * C + c) * S;
              for (long s = 0; s < S; ++s) {
                double hv = ap[s] * hc[s] + bp[s];
                hs[s] = hv;
                acc += Ct[s] * hv;
              }
            } else {
              for (long s = 0; s < S; ++s)
                acc += Ct[s] * (ap[s] * hc[s] + bp[s]);
            }
            double xv = xb[(t0 + t) * C + c];
            yt[c] = acc + D[c] * xv;
          }
        }
        // carry for the next block: state at the last step of this block
        for (long c = 0; c < C; ++c) {
          const double* ap = apref.data() + ((L - 1) * C + c) * S;
          const double* bp = bpref.data() + ((L - 1) * C + c) * S;
          double* hc = h.data() + c * S;
          for (long s = 0; s < S; ++s) hc[s] = ap[s] * hc[s] + bp[s];
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor selective_scan(const Tensor& x, const Tensor& delta,
                             const Tensor& A, const Tensor& B,
                             const Tensor& Cm, const Tensor& D,
                             ScanMode mode) {
  const detail::ScanDims d = detail::scan_dims(x, delta, A, B, Cm, D);
  Tape* tape =
      detail::merged_tape({&x, &delta, &A, &B, &Cm, &D}, "selective_scan");
  Tensor out = detail::make_out(x.shape(), tape);
  std::shared_ptr<std::vector<double>> hsave;
  if (tape)
    hsave = std::make_shared<std::vector<double>>(
        size_t(d.Bn * d.T * d.C * d.S));
  detail::scan_forward(d, x.data(), delta.data(), A.data(), B.data(),
                       Cm.data(), D.data(), out.data(),
                       hsave ? hsave->data() : nullptr, mode);
  check_finite("selective_scan", out);
  if (tape) {
    auto xi = x.impl(), di = delta.impl(), Ai = A.impl(), Bi = B.impl(),
         Ci = Cm.impl(), Di = D.impl(), oi = out.impl();
    tape->record("selective_scan", [=] {
      if (oi->grad.empty()) return;
      const long T = d.T, C = d.C, S = d.S;
      const double* hs = hsave->data();
      double* gx_ = xi->requires_grad ? detail::grad_of(xi).data() : nullptr;
      double* gd_ = di->requires_grad ? detail::grad_of(di).data() : nullptr;
      double* gA_ = Ai->requires_grad ? detail::grad_of(Ai).data() : nullptr;
      double* gB_ = Bi->requires_grad ? detail::grad_of(Bi).data() : nullptr;
      double* gC_ = Ci->requires_grad ? detail::grad_of(Ci).data() : nullptr;
      double* gD_ = Di->requires_grad ? detail::grad_of(Di).data() : nullptr;
      // reverse-time adjoint scan; lambda carries dL/dh_n
      std::vector<double> lambda(static_cast<size_t>(C * S));
      for (long b = 0; b < d.Bn; ++b) {
        std::fill(lambda.begin(), lambda.end(), 0.0);
        const double* gy = oi->grad.data() + b * T * C;
        const double* xb = xi->data.data() + b * T * C;
        const double* db = di->data.data() + b * T * C;
        const double* Bb = Bi->data.data() + b * T * S;
        const double* Cb = Ci->data.data() + b * T * S;
        for (long n = T - 1; n >= 0; --n) {
          const double* Bt = Bb + n * S;
          const double* Ct = Cb + n * S;
          const double* hn = hs + (b * T + n) * C * S;
          const double* hp = n > 0 ? hs + (b * T + n - 1) * C * S : nullptr;
          for (long c = 0; c < C; ++c) {
            const double g = gy[n * C + c];
            const double xv = xb[n * C + c];
            const double dt = db[n * C + c];
            const double* Ac = Ai->data.data() + c * S;
            double* lam = lambda.data() + c * S;
            if (gD_) gD_[c] += g * xv;
            double gx = g * Di->data[c];
            double gdt = 0.0;
            for (long s = 0; s < S; ++s) {
              double l = lam[s] + g * Ct[s];  // dL/dh_n[c,s]
              if (gC_) gC_[(b * T + n) * S + s] += g * hn[c * S + s];
              double abar = std::exp(dt * Ac[s]);
              double hprev = hp ? hp[c * S + s] : 0.0;
              double dabar = l * hprev;
              gdt += dabar * abar * Ac[s] + l * Bt[s] * xv;
              if (gA_) gA_[c * S + s] += dabar * abar * dt;
              if (gB_) gB_[(b * T + n) * S + s] += l * dt * xv;
              gx += l * dt * Bt[s];
              lam[s] = l * abar;  // propagate to h_{n-1}
            }
            if (gx_) gx_[(b * T + n) * C + c] += gx;
            if (gd_) gd_[(b * T + n) * C + c] += gdt;
          }
        }
      }
    });
  }
  return out;
}

inline Tensor selective_scan_sequential(const Tensor& x, const Tensor& delta,
                                        const Tensor& A, const Tensor& B,
                                        const Tensor& Cm, const Tensor& D) {
  return selective_scan(x, delta, A, B, Cm, D, ScanMode::kSequential);
}

inline Tensor selective_scan_parallel(const Tensor& x, const Tensor& delta,
                                      const Tensor& A, const Tensor& B,
                                      const Tensor& Cm, const Tensor& D) {
  return selective_scan(x, delta, A, B, Cm, D, ScanMode::kParallel);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Per-layer selective-SSM parameters. A is stored as log(-A) so the
// recurrence factor exp(delta*A) stays inside (0,1) for positive delta.
struct SsmParams {
  Tensor a_log;    // (C,S)
  Tensor d_skip;   // (C)
  Tensor w_dt;     // (C,C)
  Tensor dt_bias;  // (C)
  Tensor w_b;      // (C,S)
  Tensor w_c;      // (C,S)

  static SsmParams init(long channels, long d_state, Rng& rng) {
    SsmParams p;
    p.a_log = Tensor::zeros({channels, d_state});
    for (long c = 0; c < channels; ++c)
      for (long s = 0; s < d_state; ++s)
        p.a_log.data()[c * d_state + s] = std::log(double(s + 1));
    p.d_skip = Tensor::full({channels}, 1.0);
    double g = 1.0 / std::sqrt(double(channels));
    p.w_dt = Tensor::rand_uniform({channels, channels}, rng, -g, g);
    p.dt_bias = Tensor::zeros({channels});
    for (long c = 0; c < channels; ++c) {
      // softplus(dt_bias) lands in [1e-3, 0.1], log-uniform
      double dt = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
      p.dt_bias.data()[c] = std::log(std::expm1(dt));
    }
    p.w_b = Tensor::rand_uniform({channels, d_state}, rng, -g, g);
    p.w_c = Tensor::rand_uniform({channels, d_state}, rng, -g, g);
    return p;
  }

  static SsmParams zeros(long channels, long d_state) {
    SsmParams p;
    p.a_log = Tensor::zeros({channels, d_state});
    p.d_skip = Tensor::zeros({channels});
    p.w_dt = Tensor::zeros({channels, channels});
    p.dt_bias = Tensor::zeros({channels});
    p.w_b = Tensor::zeros({channels, d_state});
    p.w_c = Tensor::zeros({channels, d_state});
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".a_log", a_log});
    out.push_back({prefix + ".d_skip", d_skip});
    out.push_back({prefix + ".w_dt", w_dt});
    out.push_back({prefix + ".dt_bias", dt_bias});
    out.push_back({prefix + ".w_b", w_b});
    out.push_back({prefix + ".w_c", w_c});
  }

  SsmParams bound(Tape& t) const {
    SsmParams p;
    p.a_log = a_log.bound_copy(t);
    p.d_skip = d_skip.bound_copy(t);
    p.w_dt = w_dt.bound_copy(t);
    p.dt_bias = dt_bias.bound_copy(t);
    p.w_b = w_b.bound_copy(t);
    p.w_c = w_c.bound_copy(t);
    return p;
  }
};

struct SelectionOut {
  Tensor delta;  // strictly positive
  Tensor b;
  Tensor c;
};

// Input-dependent (Delta, B, C) projections.
inline SelectionOut selection_project(const Tensor& x, const SsmParams& p) {
  SelectionOut o;
  o.delta = softplus(add(linear(x, p.w_dt), p.dt_bias));
  o.b = linear(x, p.w_b);
  o.c = linear(x, p.w_c);
  return o;
}

struct MambaBlockParams {
  long d_model = 0, d_inner = 0, d_state = 0, conv_kernel = 0;
  Tensor ln_gamma, ln_beta;  // (d_model)
  Tensor w_in;               // (d_model, 2*d_inner)
  Tensor conv_w;             // (d_inner, K)
  Tensor conv_b;             // (d_inner)
  Tensor w_out;              // (d_inner, d_model)
  SsmParams ssm;

  static MambaBlockParams init(long d_model, long d_state, long expand,
                               long conv_kernel, Rng& rng) {
    MambaBlockParams p;
    p.d_model = d_model;
    p.d_inner = expand * d_model;
    p.d_state = d_state;
    p.conv_kernel = conv_kernel;
    p.ln_gamma = Tensor::full({d_model}, 1.0);
    p.ln_beta = Tensor::zeros({d_model});
    double gm = 1.0 / std::sqrt(double(d_model));
    p.w_in = Tensor::rand_uniform({d_model, 2 * p.d_inner}, rng, -gm, gm);
    double gk = 1.0 / std::sqrt(double(conv_kernel));
    p.conv_w = Tensor::rand_uniform({p.d_inner, conv_kernel}, rng, -gk, gk);
    p.conv_b = Tensor::zeros({p.d_inner});
    double gi = 1.0 / std::sqrt(double(p.d_inner));
    p.w_out = Tensor::rand_uniform({p.d_inner, d_model}, rng, -gi, gi);
    p.ssm = SsmParams::init(p.d_inner, d_state, rng);
    return p;
  }

  // All-zero block: the residual path makes the block an identity map.
  static MambaBlockParams zeros(long d_model, long d_state, long expand,
                                long conv_kernel) {
    MambaBlockParams p;
    p.d_model = d_model;
    p.d_inner = expand * d_model;
    p.d_state = d_state;
    p.conv_kernel = conv_kernel;
    p.ln_gamma = Tensor::zeros({d_model});
    p.ln_beta = Tensor::zeros({d_model});
    p.w_in = Tensor::zeros({d_model, 2 * p.d_inner});
    p.conv_w = Tensor::zeros({p.d_inner, conv_kernel});
    p.conv_b = Tensor::zeros({p.d_inner});
    p.w_out = Tensor::zeros({p.d_inner, d_model});
    p.ssm = SsmParams::zeros(p.d_inner, d_state);
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".ln_gamma", ln_gamma});
    out.push_back({prefix + ".ln_beta", ln_beta});
    out.push_back({prefix + ".w_in", w_in});
    out.push_back({prefix + ".conv_w", conv_w});
    out.push_back({prefix + ".conv_b", conv_b});
    out.push_back({prefix + ".w_out", w_out});
    ssm.collect(prefix + ".ssm", out);
  }

  MambaBlockParams bound(Tape& t) const {
    MambaBlockParams p;
    p.d_model = d_model;
    p.d_inner = d_inner;
    p.d_state = d_state;
    p.conv_kernel = conv_kernel;
    p.ln_gamma = ln_gamma.bound_copy(t);
    p.ln_beta = ln_beta.bound_copy(t);
    p.w_in = w_in.bound_copy(t);
    p.conv_w = conv_w.bound_copy(t);
    p.conv_b = conv_b.bound_copy(t);
    p.w_out = w_out.bound_copy(t);
    p.ssm = ssm.bound(t);
    return p;
  }
};

struct BiMambaParams {
  MambaBlockParams fwd, bwd;
  Tensor merge_w;  // (2*d_model, d_model) width-1 merge conv
  Tensor merge_b;  // (d_model)

  static BiMambaParams init(long d_model, long d_state, long expand,
                            long conv_kernel, Rng& rng) {
    BiMambaParams p;
    p.fwd = MambaBlockParams::init(d_model, d_state, expand, conv_kernel, rng);
    p.bwd = MambaBlockParams::init(d_model, d_state, expand, conv_kernel, rng);
    double g = 1.0 / std::sqrt(double(2 * d_model));
    p.merge_w = Tensor::rand_uniform({2 * d_model, d_model}, rng, -g, g);
    p.merge_b = Tensor::zeros({d_model});
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    fwd.collect(prefix + ".fwd", out);
    bwd.collect(prefix + ".bwd", out);
    out.push_back({prefix + ".merge_w", merge_w});
    out.push_back({prefix + ".merge_b", merge_b});
  }

  BiMambaParams bound(Tape& t) const {
    BiMambaParams p;
    p.fwd = fwd.bound(t);
    p.bwd = bwd.bound(t);
    p.merge_w = merge_w.bound_copy(t);
    p.merge_b = merge_b.bound_copy(t);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

// Pre-norm Mamba block with gated SSM path and residual connection.
// x: (T, d_model) or (B, T, d_model); causal along the time axis.
inline Tensor mamba_block_forward(const Tensor& x, const MambaBlockParams& p,
                                  ScanMode mode = ScanMode::kParallel) {
  const long last = x.rank() - 1;
  if (x.dim(last) != p.d_model)
    throw ShapeError("mamba_block_forward: expected d_model=" +
                     std::to_string(p.d_model));
  Tensor xn = layernorm(x, p.ln_gamma, p.ln_beta);
  Tensor ug = linear(xn, p.w_in);
  Tensor u = slice(ug, last, 0, p.d_inner);
  Tensor g = slice(ug, last, p.d_inner, p.d_inner);
  u = silu(add(conv1d_depthwise_causal(u, p.conv_w), p.conv_b));
  SelectionOut sel = selection_project(u, p.ssm);
  Tensor A = neg(exp(p.ssm.a_log));
  Tensor y = selective_scan(u, sel.delta, A, sel.b, sel.c, p.ssm.d_skip, mode);
  y = mul(y, silu(g));
  return add(x, linear(y, p.w_out));
}

// Bidirectional wrapper: forward branch on x, backward branch on the
// time-reversed signal, channel concat, width-1 merge conv.
inline Tensor bimamba_forward(const Tensor& x, const BiMambaParams& p,
                              ScanMode mode = ScanMode::kParallel) {
  const long taxis = x.rank() - 2;
  Tensor yf = mamba_block_forward(x, p.fwd, mode);
  Tensor yb = flip(mamba_block_forward(flip(x, taxis), p.bwd, mode), taxis);
  Tensor cat = concat({yf, yb}, x.rank() - 1);
  return linear(cat, p.merge_w, p.merge_b);
}

}  // namespace semamba
