// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "semamba/checkpoint.hpp"
#include "semamba/losses.hpp"
#include "semamba/models.hpp"
#include "semamba/tensor.hpp"
#include "semamba/toml.hpp"
#include "semamba/wav.hpp"

namespace semamba {

// ---------------------------------------------------------------------------
// Synthetic mixtures. Clean material is either a harmonic stack with pitch
// and amplitude modulation or AR(8)-filtered noise bursts; noise is white,
// pink, or a babble surrogate built from competing harmonic voices. The
// noise is scaled so the mixture hits the target SNR exactly, then both
// waves share one peak normalization so the pairing stays aligned.
// ---------------------------------------------------------------------------

enum class CleanKind { kHarmonic, kArNoise };
enum class NoiseKind { kWhite, kPink, kBabble };

inline const char* to_string(CleanKind k) {
  return k == CleanKind::kHarmonic ? "harmonic" : "ar_noise";
}
inline const char* to_string(NoiseKind k) {
  return k == NoiseKind::kWhite ? "white"
         : k == NoiseKind::kPink ? "pink"
                                 : "babble";
}
inline CleanKind clean_kind_from(const std::string& s) {
  if (s == "harmonic") return CleanKind::kHarmonic;
  if (s == "ar_noise") return CleanKind::kArNoise;
  throw ConfigError("unknown clean kind '" + s + "'");
}
inline NoiseKind noise_kind_from(const std::string& s) {
  if (s == "white") return NoiseKind::kWhite;
  if (s == "pink") return NoiseKind::kPink;
  if (s == "babble") return NoiseKind::kBabble;
  throw ConfigError("unknown noise kind '" + s + "'");
}

struct MixtureSpec {
  CleanKind clean = CleanKind::kHarmonic;
  NoiseKind noise = NoiseKind::kWhite;
  double snr_db = 0.0;
  uint64_t seed = 0;
};

namespace detail {

inline double rms(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / double(x.size()));
}

// Harmonic stack with vibrato and a syllabic energy envelope, plus weak
// AR-filtered noise bursts in the envelope gaps.
inline std::vector<double> gen_harmonic(Rng& rng, long n, double sr);

inline std::vector<double> ar8_filter(Rng& rng, const std::vector<double>& x,
                                      double sr) {
  // 4 stable conjugate pole pairs at formant-like frequencies
  const double flo[4] = {300, 900, 1800, 2800};
  const double fhi[4] = {900, 1800, 2800, 3800};
  double a[9] = {1, 0, 0, 0, 0, 0, 0, 0, 0};
  for (int j = 0; j < 4; ++j) {
    double fc = rng.uniform(flo[j], fhi[j]);
    double r = rng.uniform(0.92, 0.97);
    double c1 = -2.0 * r * std::cos(2.0 * M_PI * fc / sr);
    double c2 = r * r;
    double next[9] = {0};
    for (int k = 0; k < 9; ++k) {
      if (a[k] == 0.0) continue;
      next[k] += a[k];
      if (k + 1 < 9) next[k + 1] += a[k] * c1;
      if (k + 2 < 9) next[k + 2] += a[k] * c2;
    }
    std::copy(next, next + 9, a);
  }
  std::vector<double> y(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    for (int k = 1; k <= 8; ++k)
      if (i >= size_t(k)) v -= a[k] * y[i - size_t(k)];
    y[i] = v;
  }
  double r0 = rms(y);
  if (r0 > 0)
    for (double& v : y) v /= r0;
  return y;
}

inline std::vector<double> gen_ar_noise_clean(Rng& rng, long n, double sr) {
  std::vector<double> w(size_t(n));
  for (double& v : w) v = rng.normal();
  std::vector<double> y = ar8_filter(rng, w, sr);
  double fs = rng.uniform(2.0, 4.0);
  double ph = rng.uniform(0.0, 2.0 * M_PI);
  for (long i = 0; i < n; ++i) {
    double env = std::sin(2.0 * M_PI * fs * double(i) / sr + ph);
    env = env > 0 ? std::pow(env, 0.7) : 0.0;
    y[size_t(i)] *= 0.1 + 0.9 * env;
  }
  return y;
}

inline std::vector<double> gen_harmonic(Rng& rng, long n, double sr) {
  double f0 = rng.uniform(90.0, 300.0);
  long n_harm = std::min<long>(20, long(4500.0 / f0));
  std::vector<double> amp(size_t(n_harm)), pha(size_t(n_harm));
  for (long k = 0; k < n_harm; ++k) {
    amp[size_t(k)] = std::pow(double(k + 1), -0.8) * rng.uniform(0.7, 1.0);
    pha[size_t(k)] = rng.uniform(0.0, 2.0 * M_PI);
  }
  double vib_depth = rng.uniform(0.01, 0.04);
  double vib_rate = rng.uniform(2.0, 6.0);
  double vib_ph = rng.uniform(0.0, 2.0 * M_PI);
  double syl_rate = rng.uniform(2.0, 4.0);
  double syl_ph = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<double> voiced(size_t(n), 0.0);
  double theta = 0.0;
  for (long i = 0; i < n; ++i) {
    double t = double(i) / sr;
    double inst = f0 * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t + vib_ph));
    theta += 2.0 * M_PI * inst / sr;
    double s = 0.0;
    for (long k = 0; k < n_harm; ++k)
      s += amp[size_t(k)] * std::sin(double(k + 1) * theta + pha[size_t(k)]);
    double env = std::sin(2.0 * M_PI * syl_rate * t + syl_ph);
    env = env > 0 ? std::pow(env, 0.7) : 0.0;
    voiced[size_t(i)] = s * env;
  }
  // unvoiced bursts where the voiced envelope is closed
  std::vector<double> w(size_t(n));
  for (double& v : w) v = rng.normal();
  std::vector<double> fric = ar8_filter(rng, w, sr);
  double vr = rms(voiced);
  double level = rng.uniform(0.15, 0.35) * (vr > 0 ? vr : 1.0);
  for (long i = 0; i < n; ++i) {
    double t = double(i) / sr;
    double env = -std::sin(2.0 * M_PI * syl_rate * t + syl_ph);
    env = env > 0 ? std::pow(env, 0.7) : 0.0;
    voiced[size_t(i)] += level * fric[size_t(i)] * env;
  }
  return voiced;
}

inline std::vector<double> gen_clean(CleanKind kind, uint64_t seed, long n,
                                     double sr) {
  Rng rng(seed);
  return kind == CleanKind::kHarmonic ? gen_harmonic(rng, n, sr)
                                      : gen_ar_noise_clean(rng, n, sr);
}

inline std::vector<double> gen_noise(NoiseKind kind, uint64_t seed, long n,
                                     double sr) {
  Rng rng(seed);
  std::vector<double> y(size_t(n), 0.0);
  if (kind == NoiseKind::kWhite) {
    for (double& v : y) v = rng.normal();
  } else if (kind == NoiseKind::kPink) {
    // Kellet's 3-pole pink approximation
    double b0 = 0, b1 = 0, b2 = 0;
    for (double& v : y) {
      double w = rng.normal();
      b0 = 0.99765 * b0 + w * 0.0990460;
      b1 = 0.96300 * b1 + w * 0.2965164;
      b2 = 0.57000 * b2 + w * 1.0526913;
      v = b0 + b1 + b2 + w * 0.1848;
    }
  } else {
    for (int voice = 0; voice < 6; ++voice) {
      Rng vr(Rng::mix(seed, 0xBABB1E + uint64_t(voice)));
      std::vector<double> one = gen_harmonic(vr, n, sr);
      for (long i = 0; i < n; ++i) y[size_t(i)] += one[size_t(i)];
    }
  }
  double r0 = rms(y);
  if (r0 > 0)
    for (double& v : y) v /= r0;
  return y;
}

}  // namespace detail

inline std::pair<std::vector<double>, std::vector<double>> synth_pair(
    const MixtureSpec& spec, double duration_s, double sample_rate = 16000.0) {
  if (duration_s < 0.5)
    throw ConfigError("synth_pair: duration must be at least 0.5 s");
  const long n = long(duration_s * sample_rate);
  std::vector<double> clean;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 3)
      throw NumericError("synth_pair: degenerate all-zero clean draw");
    clean = detail::gen_clean(spec.clean,
                              Rng::mix(spec.seed, 0xC1EA0 + uint64_t(attempt)),
                              n, sample_rate);
    if (detail::rms(clean) > 1e-8) break;
  }
  std::vector<double> noise =
      detail::gen_noise(spec.noise, Rng::mix(spec.seed, 0x015E), n, sample_rate);
  if (detail::rms(noise) <= 0.0)
    throw NumericError("synth_pair: degenerate noise draw");
  double pc = 0.0, pn = 0.0;
  for (long i = 0; i < n; ++i) {
    pc += clean[size_t(i)] * clean[size_t(i)];
    pn += noise[size_t(i)] * noise[size_t(i)];
  }
  double alpha = std::sqrt(pc / (pn * std::pow(10.0, spec.snr_db / 10.0)));
  std::vector<double> noisy(size_t(n));
  double peak = 0.0;
  for (long i = 0; i < n; ++i) {
    noisy[size_t(i)] = clean[size_t(i)] + alpha * noise[size_t(i)];
    peak = std::max({peak, std::fabs(noisy[size_t(i)]), std::fabs(clean[size_t(i)])});
  }
  double g = 0.95 / peak;
  for (long i = 0; i < n; ++i) {
    clean[size_t(i)] *= g;
    noisy[size_t(i)] *= g;
  }
  return {std::move(clean), std::move(noisy)};
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct DatasetManifest {
  double duration_s = 1.0;
  double sample_rate = 16000.0;
  std::vector<MixtureSpec> items;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items)
    items.push_back({{"clean", to_string(it.clean)},
                     {"noise", to_string(it.noise)},
                     {"snr_db", it.snr_db},
                     {"seed", it.seed}});
  return {{"duration_s", m.duration_s},
          {"sample_rate", m.sample_rate},
          {"items", items}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.duration_s = j.at("duration_s").get<double>();
  m.sample_rate = j.at("sample_rate").get<double>();
  for (const auto& e : j.at("items")) {
    MixtureSpec s;
    s.clean = clean_kind_from(e.at("clean").get<std::string>());
    s.noise = noise_kind_from(e.at("noise").get<std::string>());
    s.snr_db = e.at("snr_db").get<double>();
    s.seed = e.at("seed").get<uint64_t>();
    m.items.push_back(s);
  }
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot open " + path + " for writing");
  out << to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
    return manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest: bad JSON in " + path + ": " + e.what());
  }
}

// Round-robin over the SNR list so every listed level is exercised.
inline DatasetManifest build_dataset(long count, const std::vector<double>& snrs,
                                     const std::vector<CleanKind>& cleans,
                                     const std::vector<NoiseKind>& noises,
                                     double duration_s, double sample_rate,
                                     uint64_t seed) {
  if (count < 1 || snrs.empty() || cleans.empty() || noises.empty())
    throw ConfigError("dataset: need count >= 1 and nonempty kind/SNR lists");
  DatasetManifest m;
  m.duration_s = duration_s;
  m.sample_rate = sample_rate;
  for (long i = 0; i < count; ++i) {
    Rng rng(Rng::mix(seed, 0xDA7A + uint64_t(i)));
    MixtureSpec s;
    s.clean = cleans[size_t(rng.uniform_int(long(cleans.size())))];
    s.noise = noises[size_t(rng.uniform_int(long(noises.size())))];
    s.snr_db = snrs[size_t(i) % snrs.size()];
    s.seed = Rng::mix(seed, 0x5EED + uint64_t(i));
    m.items.push_back(s);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelSpec model;
  LossWeights loss;
  long steps = 2000;
  long batch = 4;
  long segment = 16000;
  double lr = 5e-4;
  uint64_t seed = 1234;
  long checkpoint_every = 0;  // 0: only the final write
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;

  void validate() const {
    model.validate();
    loss.validate();
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (segment < model.stft().win_len)
      throw ConfigError("train: segment must cover one STFT window");
    if (!(lr >= 0.0)) throw ConfigError("train: negative learning rate");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
  }
};

struct TrainStats {
  long steps_run = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

// Parameters and Adam moments are rounded to float32 after every update so
// checkpoints (float32 blobs) are lossless and resume replays bitwise.
inline void round_f32(Tensor& t) {
  for (long i = 0; i < t.size(); ++i) t.data()[i] = double(float(t.data()[i]));
}

inline double lr_at(double lr0, long step, long total) {
  int halvings = 0;
  for (double frac : {0.3, 0.6, 0.9}) {
    long edge = long(frac * double(total));
    if (edge > 0 && step >= edge) ++halvings;
  }
  return lr0 * std::pow(0.5, halvings);
}

struct ItemGrad {
  double loss = 0.0;
  CompositeBreakdown breakdown;
  std::vector<std::vector<double>> grads;
};

}  // namespace detail

inline TrainStats train(const TrainConfig& cfg, const DatasetManifest& data,
                        const std::string& out_path,
                        const std::string& resume_path = "",
                        std::ostream* log = nullptr) {
  cfg.validate();
  if (data.items.empty()) throw ConfigError("train: empty dataset");
  const long wave_len = long(data.duration_s * data.sample_rate);
  if (cfg.segment > wave_len)
    throw ConfigError("train: segment longer than dataset utterances");
  if (data.sample_rate != cfg.model.stft().sample_rate)
    throw ConfigError("train: dataset sample rate does not match model config");

  const bool is_basic = cfg.model.kind == "basic";
  BasicModel bm;
  AdvancedModel am;
  long start_step = 0;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (ck.kind != cfg.model.kind)
      throw ConfigError("train: resume checkpoint is a '" + ck.kind +
                        "' model");
    if (to_json(cfg.model).at("config") != ck.config)
      throw ConfigError("train: resume checkpoint config differs");
    if (ck.seed != cfg.seed)
      throw ConfigError("train: resume checkpoint seed differs");
    if (is_basic)
      bm = restore_basic(ck);
    else
      am = restore_advanced(ck);
    start_step = ck.step;
    if (start_step >= cfg.steps)
      throw ConfigError("train: checkpoint already at or past target steps");
    // Adam state picked up below once parameter registry exists.
  } else {
    if (is_basic)
      bm = BasicModel::init(cfg.model.basic, cfg.seed);
    else
      am = AdvancedModel::init(cfg.model.advanced, cfg.seed);
  }

  std::vector<NamedTensor> params = is_basic ? bm.parameters() : am.parameters();
  for (auto& p : params) detail::round_f32(p.tensor);

  // Adam moments, float32-representable like the parameters.
  std::vector<Tensor> adam_m, adam_v;
  for (const auto& p : params) {
    adam_m.push_back(Tensor::zeros(p.tensor.shape()));
    adam_v.push_back(Tensor::zeros(p.tensor.shape()));
  }
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    std::map<std::string, const Checkpoint::Blob*> opt;
    for (const auto& b : ck.opt_state) opt[b.name] = &b;
    for (size_t i = 0; i < params.size(); ++i) {
      auto want = [&](const std::string& prefix, Tensor& dst) {
        auto it = opt.find(prefix + params[i].name);
        if (it == opt.end())
          throw IoError("train: resume checkpoint lacks optimizer state for '" +
                        params[i].name + "'");
        if (it->second->shape != dst.shape())
          throw IoError("train: optimizer state shape mismatch");
        for (long k = 0; k < dst.size(); ++k)
          dst.data()[k] = double(it->second->data[size_t(k)]);
      };
      want("m.", adam_m[i]);
      want("v.", adam_v[i]);
    }
  }

  // All mixtures synthesized up front; deterministic per item seed.
  std::vector<std::pair<std::vector<double>, std::vector<double>>> waves;
  waves.reserve(data.items.size());
  for (const auto& it : data.items)
    waves.push_back(synth_pair(it, data.duration_s, data.sample_rate));

  auto save = [&](long step) {
    std::vector<NamedTensor> opt_state;
    for (size_t i = 0; i < params.size(); ++i) {
      opt_state.push_back({"m." + params[i].name, adam_m[i]});
      opt_state.push_back({"v." + params[i].name, adam_v[i]});
    }
    save_checkpoint(out_path,
                    make_checkpoint(cfg.model, params, opt_state, step, cfg.seed));
  };

  const Compression comp = is_basic ? cfg.model.basic.compression
                                    : Compression::kPower;
  const double power_c = is_basic ? cfg.model.basic.power_c
                                  : cfg.model.advanced.power_c;

  TrainStats stats;
  for (long step = start_step; step < cfg.steps; ++step) {
    Rng srng(Rng::mix(cfg.seed, 0x57E9 + uint64_t(step)));
    struct Draw {
      long item;
      long offset;
    };
    std::vector<Draw> batch;
    for (long b = 0; b < cfg.batch; ++b) {
      Draw d;
      d.item = srng.uniform_int(long(data.items.size()));
      d.offset = srng.uniform_int(wave_len - cfg.segment + 1);
      batch.push_back(d);
    }

    std::vector<detail::ItemGrad> results(size_t(cfg.batch));
    auto run_item = [&](long b) {
      const Draw& d = batch[size_t(b)];
      const auto& [cw, nw] = waves[size_t(d.item)];
      std::vector<double> cseg(cw.begin() + d.offset,
                               cw.begin() + d.offset + cfg.segment);
      std::vector<double> nseg(nw.begin() + d.offset,
                               nw.begin() + d.offset + cfg.segment);
      Tensor clean = Tensor::from({cfg.segment}, std::move(cseg));
      Tensor noisy = Tensor::from({cfg.segment}, std::move(nseg));
      Tape tape;
      Tensor loss;
      std::vector<NamedTensor> bound_params;
      try {
        if (is_basic) {
          BasicModel local = bm.bound(tape);
          bound_params = local.parameters();
          Spectrogram sn = stft(noisy, cfg.model.basic.stft);
          Spectrogram sc = stft(clean, cfg.model.basic.stft);
          Tensor x = compress(sn.mag, comp, power_c);
          Tensor target = compress(sc.mag, comp, power_c);
          loss = mag_mae(local.enhance_cmag(x), target);
        } else {
          AdvancedModel local = am.bound(tape);
          bound_params = local.parameters();
          auto fo = local.forward_train(noisy);
          loss = composite_loss(fo.wave, fo.spec, clean, cfg.loss, comp,
                                power_c, &results[size_t(b)].breakdown);
        }
        results[size_t(b)].loss = loss.item();
        backward(loss);
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << " [step " << step << " batch " << b << " item "
           << d.item << " seed " << data.items[size_t(d.item)].seed
           << " offset " << d.offset << "]";
        throw NumericError(os.str());
      }
      for (const auto& p : bound_params)
        results[size_t(b)].grads.push_back(p.tensor.grad().vec());
    };

    if (cfg.threads <= 1 || cfg.batch == 1) {
      for (long b = 0; b < cfg.batch; ++b) run_item(b);
    } else {
      // Tapes are thread-confined; items are independent and the reduction
      // below is serial in batch order, so the result matches the
      // single-threaded run bit for bit.
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errs(size_t(cfg.threads));
      const long nt = std::min<long>(cfg.threads, cfg.batch);
      for (long t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
          try {
            for (long b = t; b < cfg.batch; b += nt) run_item(b);
          } catch (...) {
            errs[size_t(t)] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    }

    double loss_avg = 0.0;
    CompositeBreakdown bd_avg;
    for (const auto& r : results) {
      loss_avg += r.loss / double(cfg.batch);
      bd_avg.time += r.breakdown.time / double(cfg.batch);
      bd_avg.mag += r.breakdown.mag / double(cfg.batch);
      bd_avg.complex_part += r.breakdown.complex_part / double(cfg.batch);
      bd_avg.phase += r.breakdown.phase / double(cfg.batch);
      bd_avg.consistency += r.breakdown.consistency / double(cfg.batch);
    }
    if (!std::isfinite(loss_avg))
      throw NumericError("train: non-finite loss at step " +
                         std::to_string(step));
    if (step == start_step) stats.first_loss = loss_avg;
    stats.final_loss = loss_avg;

    // serial reduction in batch order, then Adam
    double gn2 = 0.0;
    const double lr = detail::lr_at(cfg.lr, step, cfg.steps);
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step + 1));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step + 1));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].tensor;
      std::vector<double> g(size_t(p.size()), 0.0);
      for (const auto& r : results)
        for (long k = 0; k < p.size(); ++k)
          g[size_t(k)] += r.grads[i][size_t(k)];
      for (long k = 0; k < p.size(); ++k) {
        double gk = g[size_t(k)] / double(cfg.batch);
        gn2 += gk * gk;
        double m = cfg.beta1 * adam_m[i].data()[k] + (1.0 - cfg.beta1) * gk;
        double v = cfg.beta2 * adam_v[i].data()[k] + (1.0 - cfg.beta2) * gk * gk;
        adam_m[i].data()[k] = double(float(m));
        adam_v[i].data()[k] = double(float(v));
        double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        p.data()[k] = double(float(p.data()[k] - update));
      }
    }

    if (log) {
      std::ostringstream os;
      os << "step=" << step + 1 << " loss=" << loss_avg;
      if (!is_basic)
        os << " time=" << bd_avg.time << " mag=" << bd_avg.mag
           << " complex=" << bd_avg.complex_part << " phase=" << bd_avg.phase
           << " consistency=" << bd_avg.consistency;
      os << " lr=" << lr << " grad_norm=" << std::sqrt(gn2);
      *log << os.str() << "\n";
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps)
      save(step + 1);
    stats.steps_run = step + 1 - start_step;
  }
  save(cfg.steps);
  return stats;
}

// ---------------------------------------------------------------------------
// Enhancement
// ---------------------------------------------------------------------------

struct EnhanceResult {
  long clipped = 0;
  long total = 0;
};

inline EnhanceResult enhance_file(const std::string& in_path,
                                  const std::string& ckpt_path,
                                  const std::string& out_path,
                                  const PcsTable* pcs = nullptr,
                                  const std::string& expect_kind = "") {
  WavData in = read_wav(in_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (!expect_kind.empty() && ck.kind != expect_kind)
    throw ConfigError("enhance: checkpoint holds a '" + ck.kind +
                      "' model, expected '" + expect_kind + "'");
  ModelSpec spec = spec_from_checkpoint(ck);
  if (double(in.sample_rate) != spec.stft().sample_rate)
    throw IoError("enhance: input is " + std::to_string(in.sample_rate) +
                  " Hz but the model expects " +
                  std::to_string(long(spec.stft().sample_rate)) +
                  " Hz; resampling is not performed");
  Tensor noisy = Tensor::from({long(in.samples.size())}, in.samples);
  Tensor out;
  if (ck.kind == "basic") {
    BasicModel m = restore_basic(ck);
    out = m.forward_wave(noisy, pcs);
  } else {
    AdvancedModel m = restore_advanced(ck);
    out = m.forward_wave(noisy, pcs);
  }
  EnhanceResult res;
  res.total = out.size();
  res.clipped = write_wav(out_path, out.vec(), in.sample_rate);
  return res;
}

// ---------------------------------------------------------------------------
// Config files (TOML)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_known_keys(const Toml& t, const std::string& section,
                             const std::vector<std::string>& known) {
  for (const std::string& k : t.section_keys(section)) {
    bool ok = false;
    for (const std::string& good : known) ok = ok || k == good;
    if (!ok)
      throw ConfigError("config: unknown key '" + section + "." + k + "'");
  }
}

}  // namespace detail

inline StftConfig stft_from_toml(const Toml& t, const std::string& section) {
  detail::check_known_keys(t, section, {"n_fft", "hop", "win_len", "sample_rate"});
  StftConfig c;
  c.n_fft = t.get_int(section + ".n_fft", c.n_fft);
  c.hop = t.get_int(section + ".hop", c.hop);
  c.win_len = t.get_int(section + ".win_len", c.n_fft);
  c.sample_rate = t.get_double(section + ".sample_rate", c.sample_rate);
  return c;
}

inline ModelSpec model_spec_from_toml(const Toml& t) {
  ModelSpec spec;
  spec.kind = t.get_string("model.kind", "basic");
  StftConfig stft = stft_from_toml(t, "stft");
  if (spec.kind == "basic") {
    detail::check_known_keys(
        t, "model",
        {"kind", "causal", "enc_channels", "enc_freq_stride", "enc_kernel",
         "d_model", "n_mamba", "d_state", "expand", "conv_kernel",
         "compression", "power_c"});
    BasicModelConfig& c = spec.basic;
    c.stft = stft;
    c.causal = t.get_bool("model.causal", c.causal);
    if (t.has("model.enc_channels")) {
      auto v = t.get_int_array("model.enc_channels");
      if (v.size() != 4) throw ConfigError("config: enc_channels needs 4 entries");
      for (int i = 0; i < 4; ++i) c.enc_channels[size_t(i)] = v[size_t(i)];
    }
    if (t.has("model.enc_freq_stride")) {
      auto v = t.get_int_array("model.enc_freq_stride");
      if (v.size() != 4)
        throw ConfigError("config: enc_freq_stride needs 4 entries");
      for (int i = 0; i < 4; ++i) c.enc_freq_stride[size_t(i)] = v[size_t(i)];
    }
    c.enc_kernel = t.get_int("model.enc_kernel", c.enc_kernel);
    c.d_model = t.get_int("model.d_model", c.d_model);
    c.n_mamba = t.get_int("model.n_mamba", c.n_mamba);
    c.d_state = t.get_int("model.d_state", c.d_state);
    c.expand = t.get_int("model.expand", c.expand);
    c.conv_kernel = t.get_int("model.conv_kernel", c.conv_kernel);
    std::string comp = t.get_string("model.compression", "log1p");
    if (comp != "log1p" && comp != "power")
      throw ConfigError("config: compression must be 'log1p' or 'power'");
    c.compression = comp == "log1p" ? Compression::kLog1p : Compression::kPower;
    c.power_c = t.get_double("model.power_c", c.power_c);
  } else if (spec.kind == "advanced") {
    detail::check_known_keys(
        t, "model",
        {"kind", "bidirectional", "channels", "dense_layers", "n_tf",
         "d_state", "expand", "conv_kernel", "power_c"});
    AdvancedModelConfig& c = spec.advanced;
    c.stft = stft;
    c.bidirectional = t.get_bool("model.bidirectional", c.bidirectional);
    c.channels = t.get_int("model.channels", c.channels);
    c.dense_layers = t.get_int("model.dense_layers", c.dense_layers);
    c.n_tf = t.get_int("model.n_tf", c.n_tf);
    c.d_state = t.get_int("model.d_state", c.d_state);
    c.expand = t.get_int("model.expand", c.expand);
    c.conv_kernel = t.get_int("model.conv_kernel", c.conv_kernel);
    c.power_c = t.get_double("model.power_c", c.power_c);
  } else {
    throw ConfigError("config: model.kind must be 'basic' or 'advanced'");
  }
  spec.validate();
  return spec;
}

inline LossWeights loss_weights_from_toml(const Toml& t) {
  // w_gan is recognized but rejected: the adversarial metric-discriminator
  // term is out of this toolkit's scope.
  if (t.has("loss.w_gan"))
    throw ConfigError(
        "config: loss.w_gan (metric-discriminator adversarial term) is not "
        "implemented in this toolkit");
  detail::check_known_keys(
      t, "loss", {"w_time", "w_mag", "w_complex", "w_phase", "w_consistency"});
  LossWeights w;
  w.w_time = t.get_double("loss.w_time", w.w_time);
  w.w_mag = t.get_double("loss.w_mag", w.w_mag);
  w.w_complex = t.get_double("loss.w_complex", w.w_complex);
  w.w_phase = t.get_double("loss.w_phase", w.w_phase);
  w.w_consistency = t.get_double("loss.w_consistency", w.w_consistency);
  w.validate();
  return w;
}

inline TrainConfig train_config_from_toml(const Toml& t) {
  detail::check_known_keys(t, "train",
                           {"steps", "batch", "segment", "lr", "seed",
                            "checkpoint_every", "threads", "beta1", "beta2",
                            "adam_eps"});
  TrainConfig c;
  c.model = model_spec_from_toml(t);
  c.loss = loss_weights_from_toml(t);
  c.steps = t.get_int("train.steps", c.steps);
  c.batch = t.get_int("train.batch", c.batch);
  c.segment = t.get_int("train.segment", c.segment);
  c.lr = t.get_double("train.lr", c.lr);
  c.seed = uint64_t(t.get_int("train.seed", long(c.seed)));
  c.checkpoint_every = t.get_int("train.checkpoint_every", c.checkpoint_every);
  c.threads = int(t.get_int("train.threads", c.threads));
  c.beta1 = t.get_double("train.beta1", c.beta1);
  c.beta2 = t.get_double("train.beta2", c.beta2);
  c.adam_eps = t.get_double("train.adam_eps", c.adam_eps);
  c.validate();
  return c;
}

struct DatasetSpec {
  long count = 100;
  double duration_s = 1.0;
  double sample_rate = 16000.0;
  std::vector<double> snrs;
  std::vector<CleanKind> cleans;
  std::vector<NoiseKind> noises;
};

inline DatasetSpec dataset_spec_from_toml(const Toml& t) {
  detail::check_known_keys(
      t, "", {"count", "duration_s", "sample_rate", "snr_db", "clean", "noise"});
  DatasetSpec d;
  d.count = t.get_int("count", d.count);
  d.duration_s = t.get_double("duration_s", d.duration_s);
  d.sample_rate = t.get_double("sample_rate", d.sample_rate);
  d.snrs = t.has("snr_db") ? t.get_double_array("snr_db")
                           : std::vector<double>{0.0, 5.0, 10.0, 15.0};
  if (t.has("clean"))
    for (const auto& s : t.get_string_array("clean"))
      d.cleans.push_back(clean_kind_from(s));
  else
    d.cleans = {CleanKind::kHarmonic, CleanKind::kArNoise};
  if (t.has("noise"))
    for (const auto& s : t.get_string_array("noise"))
      d.noises.push_back(noise_kind_from(s));
  else
    d.noises = {NoiseKind::kWhite, NoiseKind::kPink, NoiseKind::kBabble};
  return d;
}

}  // namespace semamba
