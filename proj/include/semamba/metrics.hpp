// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "semamba/models.hpp"
#include "semamba/tensor.hpp"

namespace semamba {

// ---------------------------------------------------------------------------
// SI-SDR
// ---------------------------------------------------------------------------

constexpr double kSiSdrClipDb = 140.0;

// Scale-invariant signal-to-distortion ratio in dB. The estimate is
// projected onto the reference, so positive rescaling of est cancels.
inline double si_sdr(const std::vector<double>& est,
                     const std::vector<double>& ref) {
  if (est.size() != ref.size() || est.empty())
    throw ShapeError("si_sdr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    er += est[i] * ref[i];
  }
  if (rr == 0.0) throw NumericError("si_sdr: zero reference");
  double alpha = er / rr;
  double sig = alpha * alpha * rr;
  double dist = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    double d = est[i] - alpha * ref[i];
    dist += d * d;
  }
  if (dist <= 0.0 || sig / dist > 1e14) return kSiSdrClipDb;
  return 10.0 * std::log10(sig / dist);
}

// ---------------------------------------------------------------------------
// STOI
// ---------------------------------------------------------------------------

namespace detail {

inline long long gcd_ll(long long a, long long b) {
  while (b) {
    long long t = a % b;
    a = b;
    b = t;
  }
  return a;
}

// Rational polyphase resampling with a Blackman-windowed sinc lowpass.
inline std::vector<double> resample_rational(const std::vector<double>& x,
                                             long p, long q) {
  if (p == q) return x;
  const long L = std::max(p, q);
  const long M = 16 * L;
  std::vector<double> h(size_t(2 * M + 1));
  for (long n = 0; n <= 2 * M; ++n) {
    double t = double(n - M) / double(L);
    double s = t == 0.0 ? 1.0 : std::sin(M_PI * t) / (M_PI * t);
    double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * n / double(2 * M)) +
               0.08 * std::cos(4.0 * M_PI * n / double(2 * M));
    h[size_t(n)] = double(p) / double(L) * s * w;
  }
  const long in_len = long(x.size());
  const long out_len = long((long long)(in_len)*p / q);
  std::vector<double> y(size_t(out_len), 0.0);
  for (long j = 0; j < out_len; ++j) {
    const long long u = (long long)j * q;  // position on the upsampled grid
    long m_lo = long((u - M + p - 1) / p);
    long m_hi = long((u + M) / p);
    m_lo = std::max(m_lo, 0L);
    m_hi = std::min(m_hi, in_len - 1);
    double acc = 0.0;
    for (long m = m_lo; m <= m_hi; ++m)
      acc += x[size_t(m)] * h[size_t(u - (long long)m * p + M)];
    y[size_t(j)] = acc;
  }
  return y;
}

inline void fft_pow2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / double(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct StoiConsts {
  static constexpr long kFrame = 256;
  static constexpr long kHop = 128;
  static constexpr long kFft = 512;
  static constexpr long kBands = 15;
  static constexpr double kBandStartHz = 150.0;
  static constexpr long kSegFrames = 30;  // 384 ms at 10 kHz
  static constexpr double kDynRangeDb = 40.0;
  static constexpr double kBeta = -15.0;
};

// Drop frames whose reference energy sits more than 40 dB below the loudest
// frame; both signals keep the same frame set and are overlap-added back.
inline void remove_silent_frames(std::vector<double>& x,
                                 std::vector<double>& y) {
  const long F = StoiConsts::kFrame, H = StoiConsts::kHop;
  const long n_frames = x.size() >= size_t(F)
                            ? long((long(x.size()) - F) / H) + 1
                            : 0;
  if (n_frames == 0) {
    x.clear();
    y.clear();
    return;
  }
  std::vector<double> w(size_t(F));
  for (long n = 0; n < F; ++n)
    w[size_t(n)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / double(F)));
  std::vector<double> edb(size_t(n_frames));
  double emax = -1e300;
  for (long t = 0; t < n_frames; ++t) {
    double e = 0.0;
    for (long n = 0; n < F; ++n) {
      double v = w[size_t(n)] * x[size_t(t * H + n)];
      e += v * v;
    }
    edb[size_t(t)] = 10.0 * std::log10(e + 1e-300);
    emax = std::max(emax, edb[size_t(t)]);
  }
  std::vector<long> keep;
  for (long t = 0; t < n_frames; ++t)
    if (edb[size_t(t)] > emax - StoiConsts::kDynRangeDb) keep.push_back(t);
  const long nk = long(keep.size());
  std::vector<double> xs(size_t(nk > 0 ? (nk - 1) * H + F : 0), 0.0);
  std::vector<double> ys(xs.size(), 0.0);
  for (long k = 0; k < nk; ++k) {
    long src = keep[size_t(k)] * H, dst = k * H;
    for (long n = 0; n < F; ++n) {
      xs[size_t(dst + n)] += w[size_t(n)] * x[size_t(src + n)];
      ys[size_t(dst + n)] += w[size_t(n)] * y[size_t(src + n)];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// One-third-octave band energies: (bands, frames).
inline std::vector<std::vector<double>> band_envelopes(
    const std::vector<double>& sig) {
  const long F = StoiConsts::kFrame, H = StoiConsts::kHop,
             NF = StoiConsts::kFft;
  const long n_frames =
      sig.size() >= size_t(F) ? long((long(sig.size()) - F) / H) + 1 : 0;
  std::vector<double> w(size_t(F));
  for (long n = 0; n < F; ++n)
    w[size_t(n)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / double(F)));
  // band -> fft-bin ranges at 10 kHz
  std::vector<std::pair<long, long>> bins;
  for (long k = 0; k < StoiConsts::kBands; ++k) {
    double cf = StoiConsts::kBandStartHz * std::pow(2.0, double(k) / 3.0);
    double lo = cf * std::pow(2.0, -1.0 / 6.0);
    double hi = cf * std::pow(2.0, 1.0 / 6.0);
    long blo = long(std::ceil(lo * NF / 10000.0));
    long bhi = long(std::ceil(hi * NF / 10000.0));  // exclusive
    bins.emplace_back(blo, std::min(bhi, NF / 2 + 1));
  }
  std::vector<std::vector<double>> env(
      size_t(StoiConsts::kBands),
      std::vector<double>(size_t(n_frames), 0.0));
  std::vector<std::complex<double>> buf(size_t(NF));
  for (long t = 0; t < n_frames; ++t) {
    for (long n = 0; n < NF; ++n)
      buf[size_t(n)] = n < F ? std::complex<double>(
                                   w[size_t(n)] * sig[size_t(t * H + n)], 0.0)
                             : std::complex<double>(0.0, 0.0);
    fft_pow2(buf);
    for (long k = 0; k < StoiConsts::kBands; ++k) {
      double e = 0.0;
      for (long b = bins[size_t(k)].first; b < bins[size_t(k)].second; ++b)
        e += std::norm(buf[size_t(b)]);
      env[size_t(k)][size_t(t)] = std::sqrt(e);
    }
  }
  return env;
}

}  // namespace detail

// Short-time objective intelligibility of est against the clean reference.
// Standard pipeline: resample to 10 kHz, drop silent frames, third-octave
// band envelopes, clipped normalized correlation over 384 ms segments.
inline double stoi(const std::vector<double>& est,
                   const std::vector<double>& ref, double sample_rate) {
  if (est.size() != ref.size() || est.empty())
    throw ShapeError("stoi: length mismatch");
  long long g = detail::gcd_ll(10000, (long long)std::llround(sample_rate));
  if (double(g) * std::floor(sample_rate / double(g)) != sample_rate)
    throw ConfigError("stoi: non-integer sample rate");
  long p = long(10000 / g), q = long((long long)std::llround(sample_rate) / g);
  std::vector<double> r = detail::resample_rational(ref, p, q);
  std::vector<double> e = detail::resample_rational(est, p, q);
  detail::remove_silent_frames(r, e);
  auto xe = detail::band_envelopes(r);
  auto ye = detail::band_envelopes(e);
  const long n_frames = xe.empty() ? 0 : long(xe[0].size());
  const long N = detail::StoiConsts::kSegFrames;
  if (n_frames < N)
    throw Error("stoi: fewer than 384 ms of active signal");
  const double clip = 1.0 + std::pow(10.0, -detail::StoiConsts::kBeta / 20.0);
  double acc = 0.0;
  long count = 0;
  std::vector<double> xs(size_t(N)), ys(size_t(N));
  for (long m = N; m <= n_frames; ++m) {
    for (long j = 0; j < detail::StoiConsts::kBands; ++j) {
      double nx = 0.0, ny = 0.0;
      for (long n = 0; n < N; ++n) {
        xs[size_t(n)] = xe[size_t(j)][size_t(m - N + n)];
        ys[size_t(n)] = ye[size_t(j)][size_t(m - N + n)];
        nx += xs[size_t(n)] * xs[size_t(n)];
        ny += ys[size_t(n)] * ys[size_t(n)];
      }
      double alpha = ny > 0.0 ? std::sqrt(nx / ny) : 0.0;
      double mx = 0.0, my = 0.0;
      for (long n = 0; n < N; ++n) {
        ys[size_t(n)] = std::min(alpha * ys[size_t(n)], clip * xs[size_t(n)]);
        mx += xs[size_t(n)];
        my += ys[size_t(n)];
      }
      mx /= double(N);
      my /= double(N);
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (long n = 0; n < N; ++n) {
        double dx = xs[size_t(n)] - mx, dy = ys[size_t(n)] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
      }
      double d = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
      acc += d;
      ++count;
    }
  }
  return acc / double(count);
}

// ---------------------------------------------------------------------------
// Analytic FLOPs / parameter accounting. FLOPs are counted as 2x
// multiply-adds; windowing/DFT transforms are excluded unless asked for.
// Absolute numbers depend on these conventions; the checkable facts are the
// T-scaling laws and the exact parameter totals.
// ---------------------------------------------------------------------------

struct FlopsEntry {
  std::string name;
  long long flops = 0;
  long long params = 0;
};

struct FlopsReport {
  long T = 0;
  std::vector<FlopsEntry> layers;
  long long total_flops = 0;
  long long total_params = 0;
  double t_scaling_exponent = 0.0;  // log2 of the total-FLOPs ratio at (T, 2T)

  void finalize() {
    total_flops = 0;
    total_params = 0;
    for (const auto& e : layers) {
      total_flops += e.flops;
      total_params += e.params;
    }
  }
};

namespace detail {

struct MambaCost {
  long long flops = 0, params = 0;
};

// One Mamba block applied to `seqs` independent sequences of length T.
inline MambaCost mamba_block_cost(long long T, long long d, long long di,
                                  long long S, long long K, long long seqs) {
  MambaCost c;
  long long steps = T * seqs;
  c.flops += 8 * steps * d;                 // layernorm
  c.flops += 2 * steps * d * (2 * di);      // in_proj
  c.flops += 2 * steps * di * K + 5 * steps * di;  // conv + bias + silu
  c.flops += 2 * steps * di * di + 3 * steps * di;  // dt proj + softplus
  c.flops += 4 * steps * di * S;            // B and C projections
  c.flops += steps * di * (8 * S + 2);      // fused discretize + scan + skip
  c.flops += 5 * steps * di;                // gate silu + mul
  c.flops += 2 * steps * di * d;            // out_proj
  c.flops += steps * d;                     // residual
  c.params = 2 * d + 2 * d * di + di * K + di + di * d + di * di + di +
             2 * di * S + di * S + di;
  return c;
}

inline MambaCost bimamba_cost(long long T, long long d, long long di,
                              long long S, long long K, long long seqs) {
  MambaCost one = mamba_block_cost(T, d, di, S, K, seqs);
  MambaCost c;
  c.flops = 2 * one.flops + 2 * T * seqs * (2 * d) * d + T * seqs * d;
  c.params = 2 * one.params + 2 * d * d + d;
  return c;
}

inline long long conv2d_flops(long long k2, long long cin, long long cout,
                              long long positions) {
  // kernel MACs + bias + silu
  return 2 * k2 * cin * cout * positions + 5 * cout * positions;
}

}  // namespace detail

namespace detail {

inline FlopsReport count_model_impl(const ModelSpec& spec, long T,
                                    bool include_transforms) {
  FlopsReport r;
  r.T = T;
  if (spec.kind == "basic") {
    const BasicModelConfig& c = spec.basic;
    const long long F = c.stft.num_bins();
    const long long di = c.expand * c.d_model;
    auto fd = c.freq_dims();
    if (include_transforms)
      r.layers.push_back({"stft", 2 * 2 * F * c.stft.n_fft * T, 0});
    long long cin = 1;
    for (int i = 0; i < 4; ++i) {
      long long cout = c.enc_channels[size_t(i)];
      long long pos = T * fd[size_t(i + 1)];
      r.layers.push_back(
          {"enc." + std::to_string(i),
           detail::conv2d_flops(c.enc_kernel * c.enc_kernel, cin, cout, pos),
           cout * cin * c.enc_kernel * c.enc_kernel + cout});
      cin = cout;
    }
    long long flat = c.enc_channels[3] * fd[4];
    r.layers.push_back({"bridge", 2 * T * flat * c.d_model + T * c.d_model,
                        flat * c.d_model + c.d_model});
    for (long i = 0; i < c.n_mamba; ++i) {
      detail::MambaCost mc =
          c.causal ? detail::mamba_block_cost(T, c.d_model, di, c.d_state,
                                              c.conv_kernel, 1)
                   : detail::bimamba_cost(T, c.d_model, di, c.d_state,
                                          c.conv_kernel, 1);
      if (!c.causal) mc.flops += T * c.d_model;  // outer residual
      r.layers.push_back({"block." + std::to_string(i), mc.flops, mc.params});
    }
    r.layers.push_back({"dec", 2 * T * c.d_model * F + 2 * T * F,
                        c.d_model * F + F});
    if (include_transforms)
      r.layers.push_back({"istft", 2 * 2 * F * c.stft.n_fft * T, 0});
  } else {
    const AdvancedModelConfig& c = spec.advanced;
    const long long F = c.stft.num_bins();
    const long long Fr = c.freq_reduced();
    const long long C = c.channels;
    const long long di = c.expand * C;
    if (include_transforms)
      r.layers.push_back({"stft", 2 * 2 * F * c.stft.n_fft * T, 0});
    r.layers.push_back({"enc.in", detail::conv2d_flops(9, 3, C, T * F),
                        3 * 9 * C + C});
    auto dense_cost = [&](const std::string& name, long long positions) {
      for (long i = 0; i < c.dense_layers; ++i)
        r.layers.push_back(
            {name + "." + std::to_string(i),
             detail::conv2d_flops(9, C * (i + 1), C, positions),
             9 * C * (i + 1) * C + C});
    };
    dense_cost("enc.dense", T * F);
    r.layers.push_back({"enc.down", detail::conv2d_flops(9, C, C, T * Fr),
                        9 * C * C + C});
    for (long i = 0; i < c.n_tf; ++i) {
      detail::MambaCost tc, fc;
      if (c.bidirectional) {
        tc = detail::bimamba_cost(T, C, di, c.d_state, c.conv_kernel, Fr);
        fc = detail::bimamba_cost(Fr, C, di, c.d_state, c.conv_kernel, T);
        tc.flops += T * Fr * C;  // outer residuals
        fc.flops += T * Fr * C;
      } else {
        tc = detail::mamba_block_cost(T, C, di, c.d_state, c.conv_kernel, Fr);
        fc = detail::mamba_block_cost(Fr, C, di, c.d_state, c.conv_kernel, T);
      }
      r.layers.push_back(
          {"tf." + std::to_string(i), tc.flops + fc.flops, tc.params + fc.params});
    }
    for (const char* dec : {"dmag", "dpha"}) {
      dense_cost(std::string(dec) + ".dense", T * Fr);
      r.layers.push_back({std::string(dec) + ".up",
                          detail::conv2d_flops(9, C, C, T * F), 9 * C * C + C});
      long long co = dec[1] == 'm' ? 1 : 2;
      r.layers.push_back({std::string(dec) + ".out",
                          detail::conv2d_flops(9, C, co, T * F),
                          9 * C * co + co});
    }
    r.layers.push_back({"mask", 8 * T * F, 1});   // slope, sigmoid, scale
    r.layers.push_back({"phase", 10 * T * F, 0});  // atan2
    if (include_transforms)
      r.layers.push_back({"istft", 2 * 2 * F * c.stft.n_fft * T, 0});
  }
  r.finalize();
  return r;
}

}  // namespace detail

inline FlopsReport count_model(const ModelSpec& spec, long T,
                               bool include_transforms = false) {
  spec.validate();
  FlopsReport r = detail::count_model_impl(spec, T, include_transforms);
  FlopsReport two = detail::count_model_impl(spec, 2 * T, include_transforms);
  r.t_scaling_exponent =
      std::log2(double(two.total_flops) / double(r.total_flops));
  return r;
}

// Stack of Mamba blocks alone (no encoder/decoder), for complexity curves
// against the attention baseline.
inline FlopsReport count_mamba_stack(long d_model, long n_layers, long T,
                                     long d_state = 16, long expand = 2,
                                     long conv_kernel = 4,
                                     bool bidirectional = false) {
  FlopsReport r;
  r.T = T;
  const long long di = (long long)expand * d_model;
  for (long i = 0; i < n_layers; ++i) {
    detail::MambaCost mc =
        bidirectional
            ? detail::bimamba_cost(T, d_model, di, d_state, conv_kernel, 1)
            : detail::mamba_block_cost(T, d_model, di, d_state, conv_kernel, 1);
    r.layers.push_back({"block." + std::to_string(i), mc.flops, mc.params});
  }
  r.finalize();
  r.t_scaling_exponent = 1.0;  // every term above is linear in T
  return r;
}

namespace detail {

inline FlopsReport attention_impl(long d_model, long n_layers, long T) {
  FlopsReport r;
  r.T = T;
  const long long d = d_model, Tl = T;
  for (long i = 0; i < n_layers; ++i) {
    std::string p = "layer." + std::to_string(i) + ".";
    r.layers.push_back({p + "qkv", 2 * Tl * d * 3 * d + 3 * Tl * d,
                        3 * (d * d + d)});
    r.layers.push_back({p + "scores", 2 * Tl * Tl * d, 0});
    r.layers.push_back({p + "softmax", 5 * Tl * Tl, 0});
    r.layers.push_back({p + "context", 2 * Tl * Tl * d, 0});
    r.layers.push_back({p + "out", 2 * Tl * d * d + Tl * d, d * d + d});
    r.layers.push_back({p + "ffn", 16 * Tl * d * d + 5 * Tl * d,
                        8 * d * d + 5 * d});
    r.layers.push_back({p + "norms", 16 * Tl * d, 4 * d});
  }
  r.finalize();
  return r;
}

}  // namespace detail

// Multi-head self-attention + FFN baseline; the score/context terms carry
// the quadratic sequence cost. Comparison curves only.
inline FlopsReport count_attention_baseline(long d_model, long n_layers,
                                            long T) {
  FlopsReport r = detail::attention_impl(d_model, n_layers, T);
  FlopsReport two = detail::attention_impl(d_model, n_layers, 2 * T);
  r.t_scaling_exponent =
      std::log2(double(two.total_flops) / double(r.total_flops));
  return r;
}

inline std::string flops_text(const FlopsReport& r) {
  std::ostringstream os;
  size_t wname = 5;
  for (const auto& e : r.layers) wname = std::max(wname, e.name.size());
  os << "T=" << r.T << "\n";
  for (const auto& e : r.layers) {
    os << e.name << std::string(wname - e.name.size() + 2, ' ');
    os.width(14);
    os << e.flops << "  ";
    os.width(12);
    os << e.params << "\n";
  }
  os << "total" << std::string(wname - 5 + 2, ' ');
  os.width(14);
  os << r.total_flops << "  ";
  os.width(12);
  os << r.total_params << "\n";
  return os.str();
}

}  // namespace semamba
