// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "semamba/ops.hpp"
#include "semamba/tensor.hpp"

namespace semamba {

// ---------------------------------------------------------------------------
// STFT configuration. Frames are centered (reflect padding by n_fft/2), the
// window is periodic Hann over win_len placed centrally in the n_fft frame,
// and synthesis normalizes by the summed squared window, so analysis
// followed by synthesis reconstructs the signal wherever that sum is
// nonvanishing.
// ---------------------------------------------------------------------------

struct StftConfig {
  long n_fft = 400;
  long hop = 100;
  long win_len = 400;
  double sample_rate = 16000.0;

  long num_bins() const { return n_fft / 2 + 1; }
  long pad() const { return n_fft / 2; }
  long num_frames(long len) const { return 1 + len / hop; }

  bool operator==(const StftConfig& o) const {
    return n_fft == o.n_fft && hop == o.hop && win_len == o.win_len &&
           sample_rate == o.sample_rate;
  }

  void validate() const;
};

namespace detail {

struct StftPlan {
  long n_fft, hop, win_len, bins;
  std::vector<double> window;  // length n_fft
  std::vector<double> costab;  // (bins, n_fft)
  std::vector<double> sintab;  // (bins, n_fft)
};

inline std::shared_ptr<const StftPlan> get_plan(const StftConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<long, long, long>, std::shared_ptr<StftPlan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(cfg.n_fft, cfg.hop, cfg.win_len);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto p = std::make_shared<StftPlan>();
  p->n_fft = cfg.n_fft;
  p->hop = cfg.hop;
  p->win_len = cfg.win_len;
  p->bins = cfg.num_bins();
  p->window.assign(size_t(cfg.n_fft), 0.0);
  const long off = (cfg.n_fft - cfg.win_len) / 2;
  for (long n = 0; n < cfg.win_len; ++n)
    p->window[size_t(off + n)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * double(n) / double(cfg.win_len)));
  p->costab.resize(size_t(p->bins * cfg.n_fft));
  p->sintab.resize(size_t(p->bins * cfg.n_fft));
  for (long f = 0; f < p->bins; ++f)
    for (long n = 0; n < cfg.n_fft; ++n) {
      double a = 2.0 * M_PI * double(f) * double(n) / double(cfg.n_fft);
      p->costab[size_t(f * cfg.n_fft + n)] = std::cos(a);
      p->sintab[size_t(f * cfg.n_fft + n)] = std::sin(a);
    }
  cache[key] = p;
  return p;
}

inline long reflect_index(long i, long len) {
  if (len == 1) return 0;
  while (i < 0 || i >= len) {
    if (i < 0) i = -i;
    if (i >= len) i = 2 * len - 2 - i;
  }
  return i;
}

// Summed squared synthesis window over the padded axis for a given length.
inline std::vector<double> ola_denominator(const StftConfig& cfg, long len) {
  auto plan = get_plan(cfg);
  const long T = cfg.num_frames(len);
  std::vector<double> den(size_t(len + 2 * cfg.pad()), 0.0);
  for (long t = 0; t < T; ++t)
    for (long n = 0; n < cfg.n_fft; ++n)
      den[size_t(t * cfg.hop + n)] += plan->window[size_t(n)] * plan->window[size_t(n)];
  return den;
}

}  // namespace detail

inline void StftConfig::validate() const {
  if (n_fft < 2 || n_fft % 2 != 0)
    throw ConfigError("stft: n_fft must be even and >= 2");
  if (win_len < 2 || win_len > n_fft)
    throw ConfigError("stft: win_len must be in [2, n_fft]");
  if (hop < 1) throw ConfigError("stft: hop must be >= 1");
  if (sample_rate <= 0) throw ConfigError("stft: sample_rate must be > 0");
  // numeric COLA check on a representative length
  const long probe = win_len + 8 * hop;
  std::vector<double> den = detail::ola_denominator(*this, probe);
  double dmax = 0.0, dmin = 1e300;
  for (long i = pad(); i < pad() + probe; ++i) {
    dmax = std::max(dmax, den[size_t(i)]);
    dmin = std::min(dmin, den[size_t(i)]);
  }
  if (!(dmin > 1e-6 * dmax))
    throw ConfigError("stft: window/hop combination violates COLA "
                      "(synthesis window sum vanishes)");
}

// ---------------------------------------------------------------------------
// Differentiable primitives: wave -> (real, imag) frames and back. Both are
// linear maps, so the backward passes are their exact adjoints.
// ---------------------------------------------------------------------------

inline std::pair<Tensor, Tensor> stft_ri(const Tensor& wave,
                                         const StftConfig& cfg) {
  if (wave.rank() != 1) throw ShapeError("stft: wave must be rank-1");
  const long L = wave.size();
  if (L < cfg.win_len)
    throw ShapeError("stft: signal shorter than the analysis window");
  for (double v : wave.vec())
    if (!std::isfinite(v)) throw NumericError("stft: non-finite input sample");
  auto plan = detail::get_plan(cfg);
  const long T = cfg.num_frames(L), F = cfg.num_bins(), N = cfg.n_fft;
  const long padn = cfg.pad();
  Tape* tape = detail::merged_tape({&wave}, "stft");
  Tensor re = detail::make_out({T, F}, tape);
  Tensor im = detail::make_out({T, F}, tape);
  std::vector<double> padded(static_cast<size_t>(L + 2 * padn));
  for (long i = 0; i < L + 2 * padn; ++i)
    padded[size_t(i)] = wave.data()[detail::reflect_index(i - padn, L)];
  std::vector<double> frame(static_cast<size_t>(N));
  for (long t = 0; t < T; ++t) {
    const double* seg = padded.data() + t * cfg.hop;
    for (long n = 0; n < N; ++n) frame[size_t(n)] = plan->window[size_t(n)] * seg[n];
    for (long f = 0; f < F; ++f) {
      const double* cr = plan->costab.data() + f * N;
      const double* sr = plan->sintab.data() + f * N;
      double rs = 0.0, is = 0.0;
      for (long n = 0; n < N; ++n) {
        rs += frame[size_t(n)] * cr[n];
        is -= frame[size_t(n)] * sr[n];
      }
      re.data()[t * F + f] = rs;
      im.data()[t * F + f] = is;
    }
  }
  check_finite("stft", re);
  check_finite("stft", im);
  if (tape) {
    auto wi = wave.impl(), ri = re.impl(), ii = im.impl();
    tape->record("stft", [=] {
      if (ri->grad.empty() && ii->grad.empty()) return;
      auto& gw = detail::grad_of(wi);
      std::vector<double> gpad(size_t(L + 2 * padn), 0.0);
      std::vector<double> acc(static_cast<size_t>(N));
      for (long t = 0; t < T; ++t) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (long f = 0; f < F; ++f) {
          double gr = ri->grad.empty() ? 0.0 : ri->grad[t * F + f];
          double gi = ii->grad.empty() ? 0.0 : ii->grad[t * F + f];
          if (gr == 0.0 && gi == 0.0) continue;
          const double* cr = plan->costab.data() + f * N;
          const double* sr = plan->sintab.data() + f * N;
          for (long n = 0; n < N; ++n) acc[size_t(n)] += gr * cr[n] - gi * sr[n];
        }
        double* gseg = gpad.data() + t * cfg.hop;
        for (long n = 0; n < N; ++n) gseg[n] += plan->window[size_t(n)] * acc[size_t(n)];
      }
      for (long i = 0; i < L + 2 * padn; ++i)
        gw[detail::reflect_index(i - padn, L)] += gpad[size_t(i)];
    });
  }
  return {re, im};
}

inline Tensor istft_ri(const Tensor& re, const Tensor& im,
                       const StftConfig& cfg, long origin_len) {
  if (re.rank() != 2 || im.shape() != re.shape())
    throw ShapeError("istft: real/imag must be matching (T,F)");
  const long T = re.dim(0), F = re.dim(1), N = cfg.n_fft;
  if (F != cfg.num_bins())
    throw ShapeError("istft: expected " + std::to_string(cfg.num_bins()) +
                     " bins, got " + std::to_string(F));
  if (T != cfg.num_frames(origin_len))
    throw ShapeError("istft: frame count does not match origin length");
  auto plan = detail::get_plan(cfg);
  const long padn = cfg.pad();
  std::vector<double> den = detail::ola_denominator(cfg, origin_len);
  for (long i = padn; i < padn + origin_len; ++i)
    if (!(den[size_t(i)] > 1e-8))
      throw ConfigError("istft: COLA violation, sample not covered by windows");
  Tape* tape = detail::merged_tape({&re, &im}, "istft");
  Tensor wave = detail::make_out({origin_len}, tape);
  std::vector<double> num(size_t(origin_len + 2 * padn), 0.0);
  std::vector<double> frame(static_cast<size_t>(N));
  for (long t = 0; t < T; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (long f = 0; f < F; ++f) {
      double fac = (f == 0 || f == N / 2) ? 1.0 : 2.0;
      double rv = fac / double(N) * re.data()[t * F + f];
      double iv = fac / double(N) * im.data()[t * F + f];
      if (rv == 0.0 && iv == 0.0) continue;
      const double* cr = plan->costab.data() + f * N;
      const double* sr = plan->sintab.data() + f * N;
      for (long n = 0; n < N; ++n) frame[size_t(n)] += rv * cr[n] - iv * sr[n];
    }
    double* seg = num.data() + t * cfg.hop;
    for (long n = 0; n < N; ++n) seg[n] += plan->window[size_t(n)] * frame[size_t(n)];
  }
  for (long i = 0; i < origin_len; ++i)
    wave.data()[i] = num[size_t(i + padn)] / den[size_t(i + padn)];
  check_finite("istft", wave);
  if (tape) {
    auto ri = re.impl(), ii = im.impl(), wi = wave.impl();
    auto denp = std::make_shared<std::vector<double>>(std::move(den));
    tape->record("istft", [=] {
      if (wi->grad.empty()) return;
      std::vector<double> gnum(size_t(origin_len + 2 * padn), 0.0);
      for (long i = 0; i < origin_len; ++i)
        gnum[size_t(i + padn)] = wi->grad[i] / (*denp)[size_t(i + padn)];
      std::vector<double> gframe(static_cast<size_t>(N));
      for (long t = 0; t < T; ++t) {
        const double* gseg = gnum.data() + t * cfg.hop;
        for (long n = 0; n < N; ++n) gframe[size_t(n)] = plan->window[size_t(n)] * gseg[n];
        for (long f = 0; f < F; ++f) {
          double fac = (f == 0 || f == N / 2) ? 1.0 : 2.0;
          const double* cr = plan->costab.data() + f * N;
          const double* sr = plan->sintab.data() + f * N;
          double gr = 0.0, gi = 0.0;
          for (long n = 0; n < N; ++n) {
            gr += gframe[size_t(n)] * cr[n];
            gi -= gframe[size_t(n)] * sr[n];
          }
          if (ri->requires_grad)
            detail::grad_of(ri)[t * F + f] += fac / double(N) * gr;
          if (ii->requires_grad)
            detail::grad_of(ii)[t * F + f] += fac / double(N) * gi;
        }
      }
    });
  }
  return wave;
}

// ---------------------------------------------------------------------------
// Value-level spectrogram
// ---------------------------------------------------------------------------

struct Spectrogram {
  Tensor mag;    // (T,F), nonnegative
  Tensor phase;  // (T,F), radians in (-pi, pi]
  StftConfig config;
  long origin_len = 0;
};

// Differentiable counterpart used by models and losses.
struct SpectroTensors {
  Tensor mag;
  Tensor phase;
  StftConfig config;
  long origin_len = 0;
};

inline Spectrogram stft(const Tensor& wave, const StftConfig& cfg) {
  if (wave.requires_grad())
    throw Error("stft: value-level API, use stft_ri for taped graphs");
  auto [re, im] = stft_ri(wave, cfg);
  Spectrogram s;
  s.config = cfg;
  s.origin_len = wave.size();
  s.mag = Tensor::zeros(re.shape());
  s.phase = Tensor::zeros(re.shape());
  for (long i = 0; i < re.size(); ++i) {
    double rv = re.data()[i], iv = im.data()[i];
    s.mag.data()[i] = std::hypot(rv, iv);
    double p = std::atan2(iv, rv);
    if (p <= -M_PI) p = M_PI;
    s.phase.data()[i] = p;
  }
  return s;
}

inline Spectrogram stft(const std::vector<double>& wave,
                        const StftConfig& cfg) {
  return stft(Tensor::from({long(wave.size())}, wave), cfg);
}

inline Tensor istft(const Spectrogram& s) {
  Tensor re = Tensor::zeros(s.mag.shape());
  Tensor im = Tensor::zeros(s.mag.shape());
  for (long i = 0; i < s.mag.size(); ++i) {
    re.data()[i] = s.mag.data()[i] * std::cos(s.phase.data()[i]);
    im.data()[i] = s.mag.data()[i] * std::sin(s.phase.data()[i]);
  }
  return istft_ri(re, im, s.config, s.origin_len);
}

// ---------------------------------------------------------------------------
// Magnitude compression
// ---------------------------------------------------------------------------

enum class Compression { kLog1p, kPower };

namespace detail {
inline void require_nonneg(const Tensor& mag, const char* op) {
  for (double v : mag.vec())
    if (v < 0.0) throw NumericError(std::string(op) + ": negative magnitude");
}
}  // namespace detail

inline Tensor compress_log1p(const Tensor& mag) {
  detail::require_nonneg(mag, "compress_log1p");
  return log1p(mag);
}

inline Tensor decompress_expm1(const Tensor& cmag) { return expm1(cmag); }

inline Tensor compress_power(const Tensor& mag, double c) {
  if (!(c > 0.0 && c <= 1.0))
    throw ConfigError("compress_power: exponent must be in (0,1]");
  detail::require_nonneg(mag, "compress_power");
  return pow_const(mag, c);
}

inline Tensor decompress_power(const Tensor& cmag, double c) {
  if (!(c > 0.0 && c <= 1.0))
    throw ConfigError("decompress_power: exponent must be in (0,1]");
  return pow_const(cmag, 1.0 / c);
}

inline Tensor compress(const Tensor& mag, Compression kind, double c) {
  return kind == Compression::kLog1p ? compress_log1p(mag)
                                     : compress_power(mag, c);
}

inline Tensor decompress(const Tensor& cmag, Compression kind, double c) {
  return kind == Compression::kLog1p ? decompress_expm1(cmag)
                                     : decompress_power(cmag, c);
}

// ---------------------------------------------------------------------------
// Perceptual contrast stretching: per-band gains applied to the
// log1p-compressed magnitude, phase untouched. Post-enhancement only.
// ---------------------------------------------------------------------------

struct PcsBand {
  double lo_hz, hi_hz, gain;
};

struct PcsTable {
  std::vector<PcsBand> bands;

  static PcsTable identity(double sample_rate) {
    return PcsTable{{{0.0, sample_rate / 2.0, 1.0}}};
  }

  // Plain text: "low_hz high_hz gain" per line, '#' comments.
  static PcsTable parse(std::istream& in) {
    PcsTable t;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      double lo, hi, g;
      if (!(ls >> lo)) continue;  // blank or comment-only
      if (!(ls >> hi >> g))
        throw ConfigError("pcs table line " + std::to_string(lineno) +
                          ": expected 'low_hz high_hz gain'");
      std::string extra;
      if (ls >> extra)
        throw ConfigError("pcs table line " + std::to_string(lineno) +
                          ": trailing tokens");
      t.bands.push_back({lo, hi, g});
    }
    t.validate();
    return t;
  }

  static PcsTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("pcs table: cannot open " + path);
    return parse(in);
  }

  void validate() const {
    if (bands.empty()) throw ConfigError("pcs table: no bands");
    if (bands.front().lo_hz != 0.0)
      throw ConfigError("pcs table: first band must start at 0 Hz");
    for (size_t i = 0; i < bands.size(); ++i) {
      if (!(bands[i].hi_hz > bands[i].lo_hz))
        throw ConfigError("pcs table: empty band");
      if (!(bands[i].gain > 0.0))
        throw ConfigError("pcs table: gain must be > 0");
      if (i && std::fabs(bands[i].lo_hz - bands[i - 1].hi_hz) > 1e-9)
        throw ConfigError("pcs table: bands must be contiguous");
    }
  }

  bool is_identity() const {
    for (const PcsBand& b : bands)
      if (b.gain != 1.0) return false;
    return true;
  }

  double gain_at(double hz) const {
    for (const PcsBand& b : bands)
      if (hz >= b.lo_hz && hz < b.hi_hz) return b.gain;
    return bands.back().gain;  // hz == top edge
  }
};

inline Spectrogram pcs_apply(const Spectrogram& spec, const PcsTable& table) {
  table.validate();
  if (table.bands.back().hi_hz < spec.config.sample_rate / 2.0 - 1e-9)
    throw ConfigError("pcs table: bands do not cover up to Nyquist");
  Spectrogram out;
  out.config = spec.config;
  out.origin_len = spec.origin_len;
  out.phase = spec.phase.detach();
  out.mag = spec.mag.detach();
  const long T = spec.mag.dim(0), F = spec.mag.dim(1);
  for (long f = 0; f < F; ++f) {
    double hz = double(f) * spec.config.sample_rate / double(spec.config.n_fft);
    double g = table.gain_at(hz);
    if (g == 1.0) continue;  // unit-gain bands pass through bit-exact
    for (long t = 0; t < T; ++t) {
      double m = spec.mag.data()[t * F + f];
      if (m < 0.0) throw NumericError("pcs_apply: negative magnitude");
      out.mag.data()[t * F + f] = std::expm1(g * std::log1p(m));
    }
  }
  return out;
}

}  // namespace semamba
