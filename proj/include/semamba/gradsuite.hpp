// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "semamba/gradcheck.hpp"
#include "semamba/losses.hpp"
#include "semamba/models.hpp"
#include "semamba/ops.hpp"
#include "semamba/spectral.hpp"
#include "semamba/ssm.hpp"

namespace semamba {

// Finite-difference verification suites shared by the gradcheck CLI command
// and the acceptance tests: every primitive at 1e-6, composed blocks, both
// full models and all losses at 1e-4.

struct GradSuiteItem {
  std::string name;
  double tol;
  GradCheckResult result;
};

constexpr double kPrimitiveTol = 1e-6;
constexpr double kComposedTol = 1e-4;

namespace gradsuite_detail {

inline Tensor rnd(Shape s, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::rand_uniform(std::move(s), rng, lo, hi);
}

// values bounded away from 0 so |x| and relu kinks stay clear of the
// difference step
inline Tensor rnd_away(Shape s, Rng& rng, double lo = 0.1, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (long i = 0; i < t.size(); ++i) {
    double m = rng.uniform(lo, hi);
    t.data()[i] = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline void check1(std::vector<GradSuiteItem>& out, const std::string& name,
                   const std::function<Tensor(const Tensor&)>& fn,
                   const Tensor& point, double tol) {
  out.push_back({name, tol, grad_check(fn, point, tol)});
}

inline void check_leaves(
    std::vector<GradSuiteItem>& out, const std::string& name,
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    const std::vector<Tensor>& leaves, double tol) {
  out.push_back({name, tol, grad_check_leaves(fn, leaves, tol)});
}

// Projection-reduced scalar loss over a tensor output.
inline std::function<Tensor(const std::vector<Tensor>&)> reduce(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn, Shape out_shape,
    uint64_t seed = 0x9a3c12d4) {
  Rng rng(seed);
  Tensor r = Tensor::rand_uniform(std::move(out_shape), rng, -1.0, 1.0);
  return [fn, r](const std::vector<Tensor>& vals) {
    return sum(mul(fn(vals), r));
  };
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteItem> gradcheck_primitives() {
  using namespace gradsuite_detail;
  std::vector<GradSuiteItem> out;
  Rng rng(0xFEED5);
  const double tol = kPrimitiveTol;

  Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng);
  Tensor row = rnd({4}, rng), sc = rnd({1}, rng);
  check_leaves(out, "add", reduce([](const std::vector<Tensor>& v) { return add(v[0], v[1]); }, {3, 4}), {a, b}, tol);
  check_leaves(out, "add_row", reduce([](const std::vector<Tensor>& v) { return add(v[0], v[1]); }, {3, 4}), {a, row}, tol);
  check_leaves(out, "add_scalar", reduce([](const std::vector<Tensor>& v) { return add(v[0], v[1]); }, {3, 4}), {a, sc}, tol);
  check_leaves(out, "sub", reduce([](const std::vector<Tensor>& v) { return sub(v[0], v[1]); }, {3, 4}), {a, b}, tol);
  check_leaves(out, "mul", reduce([](const std::vector<Tensor>& v) { return mul(v[0], v[1]); }, {3, 4}), {a, b}, tol);
  check_leaves(out, "mul_row", reduce([](const std::vector<Tensor>& v) { return mul(v[0], v[1]); }, {3, 4}), {a, row}, tol);
  check_leaves(out, "atan2", reduce([](const std::vector<Tensor>& v) { return atan2t(v[0], v[1]); }, {3, 4}), {rnd_away({3, 4}, rng), rnd_away({3, 4}, rng)}, tol);

  check1(out, "neg", [](const Tensor& x) { return neg(x); }, rnd({2, 3}, rng), tol);
  check1(out, "exp", [](const Tensor& x) { return exp(x); }, rnd({2, 3}, rng), tol);
  check1(out, "exp_point5", [](const Tensor& x) { return exp(x); }, Tensor::from({1}, {0.5}), tol);
  check1(out, "log1p", [](const Tensor& x) { return log1p(x); }, rnd({2, 3}, rng, 0.0, 2.0), tol);
  check1(out, "expm1", [](const Tensor& x) { return expm1(x); }, rnd({2, 3}, rng), tol);
  check1(out, "sqrt", [](const Tensor& x) { return sqrt(x); }, rnd({2, 3}, rng, 0.5, 2.0), tol);
  check1(out, "abs", [](const Tensor& x) { return abs(x); }, rnd_away({2, 3}, rng), tol);
  check1(out, "sin", [](const Tensor& x) { return sin(x); }, rnd({2, 3}, rng), tol);
  check1(out, "cos", [](const Tensor& x) { return cos(x); }, rnd({2, 3}, rng), tol);
  check1(out, "tanh", [](const Tensor& x) { return tanh(x); }, rnd({2, 3}, rng), tol);
  check1(out, "sigmoid", [](const Tensor& x) { return sigmoid(x); }, rnd({2, 3}, rng), tol);
  check1(out, "silu", [](const Tensor& x) { return silu(x); }, rnd({2, 3}, rng), tol);
  check1(out, "softplus", [](const Tensor& x) { return softplus(x); }, rnd({2, 3}, rng), tol);
  check1(out, "relu", [](const Tensor& x) { return relu(x); }, rnd_away({2, 3}, rng), tol);
  check1(out, "scale", [](const Tensor& x) { return scale(x, -1.7); }, rnd({2, 3}, rng), tol);
  check1(out, "add_const", [](const Tensor& x) { return add_const(x, 0.3); }, rnd({2, 3}, rng), tol);
  check1(out, "pow_0.3", [](const Tensor& x) { return pow_const(x, 0.3); }, rnd({2, 3}, rng, 0.3, 2.0), tol);
  check1(out, "pow_1over0.3", [](const Tensor& x) { return pow_const(x, 1.0 / 0.3); }, rnd({2, 3}, rng, 0.1, 1.5), tol);

  check_leaves(out, "matmul", reduce([](const std::vector<Tensor>& v) { return matmul(v[0], v[1]); }, {3, 5}),
               {rnd({3, 4}, rng), rnd({4, 5}, rng)}, tol);
  check_leaves(out, "conv1d_depthwise_causal",
               reduce([](const std::vector<Tensor>& v) { return conv1d_depthwise_causal(v[0], v[1]); }, {6, 3}),
               {rnd({6, 3}, rng), rnd({3, 3}, rng)}, tol);
  {
    Conv2dGeom g;
    g.stride_w = 2;
    g.pad_top = 2;
    g.pad_left = 1;
    g.pad_right = 1;
    g.dil_h = 2;
    check_leaves(out, "conv2d",
                 reduce([g](const std::vector<Tensor>& v) { return conv2d(v[0], v[1], v[2], g); }, {3, 3, 3}),
                 {rnd({2, 5, 6}, rng), rnd({3, 2, 3, 3}, rng), rnd({3}, rng)}, tol);
  }
  {
    Conv2dGeom g;
    g.stride_w = 2;
    g.pad_top = 1;
    g.pad_bottom = 1;
    g.pad_left = 1;
    g.pad_right = 1;
    check_leaves(out, "transposed_conv2d",
                 reduce([g](const std::vector<Tensor>& v) { return transposed_conv2d(v[0], v[1], v[2], g); }, {3, 4, 6}),
                 {rnd({2, 4, 4}, rng), rnd({2, 3, 3, 3}, rng), rnd({3}, rng)}, tol);
  }
  check_leaves(out, "layernorm",
               reduce([](const std::vector<Tensor>& v) { return layernorm(v[0], v[1], v[2]); }, {4, 5}),
               {rnd({4, 5}, rng), rnd({5}, rng, 0.5, 1.5), rnd({5}, rng)}, tol);
  check_leaves(out, "concat",
               reduce([](const std::vector<Tensor>& v) { return concat({v[0], v[1]}, 1); }, {3, 7}),
               {rnd({3, 4}, rng), rnd({3, 3}, rng)}, tol);
  check1(out, "slice", [](const Tensor& x) { return slice(x, 1, 1, 2); }, rnd({3, 5}, rng), tol);
  check1(out, "pad", [](const Tensor& x) { return pad(x, 0, 1, 2); }, rnd({3, 4}, rng), tol);
  check1(out, "flip", [](const Tensor& x) { return flip(x, 0); }, rnd({4, 3}, rng), tol);
  check1(out, "reshape", [](const Tensor& x) { return reshape(x, {2, 6}); }, rnd({3, 4}, rng), tol);
  check1(out, "permute", [](const Tensor& x) { return permute(x, {2, 0, 1}); }, rnd({2, 3, 4}, rng), tol);
  check1(out, "sum", [](const Tensor& x) { return sum(x); }, rnd({3, 4}, rng), tol);
  check1(out, "mean", [](const Tensor& x) { return mean(x); }, rnd({3, 4}, rng), tol);

  {
    StftConfig cfg;
    cfg.n_fft = 16;
    cfg.hop = 4;
    cfg.win_len = 16;
    check1(out, "stft_ri",
           [cfg](const Tensor& x) {
             auto [re, im] = stft_ri(x, cfg);
             return concat({re, im}, 1);
           },
           rnd({40}, rng), tol);
    const long T = cfg.num_frames(40), F = cfg.num_bins();
    check_leaves(out, "istft_ri",
                 reduce([cfg](const std::vector<Tensor>& v) { return istft_ri(v[0], v[1], cfg, 40); }, {40}),
                 {rnd({T, F}, rng), rnd({T, F}, rng)}, tol);
  }

  // selective scan against all six inputs, both schedules
  for (ScanMode mode : {ScanMode::kSequential, ScanMode::kParallel}) {
    const long T = mode == ScanMode::kSequential ? 7 : 70;  // cross block edges
    const long C = 2, S = 3;
    std::vector<Tensor> leaves = {
        rnd({T, C}, rng),                    // x
        rnd({T, C}, rng, 0.05, 0.6),         // delta > 0
        rnd({C, S}, rng, -2.5, -0.2),        // A < 0
        rnd({T, S}, rng),                    // B
        rnd({T, S}, rng),                    // C
        rnd({C}, rng),                       // D
    };
    check_leaves(out,
                 mode == ScanMode::kSequential ? "selective_scan_sequential"
                                               : "selective_scan_parallel",
                 reduce([mode](const std::vector<Tensor>& v) {
                   return selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], mode);
                 }, {T, C}),
                 leaves, tol);
  }
  return out;
}

inline std::vector<GradSuiteItem> gradcheck_ssm() {
  using namespace gradsuite_detail;
  std::vector<GradSuiteItem> out;
  Rng rng(0x55A11);
  const double tol = kComposedTol;

  {
    // input-dependent selection feeding the scan
    const long T = 6, C = 3, S = 2;
    std::vector<Tensor> leaves = {
        rnd({T, C}, rng),             // x
        rnd({C, S}, rng, -1.0, 1.0),  // a_log
        rnd({C}, rng),                // d_skip
        rnd({C, C}, rng),             // w_dt
        rnd({C}, rng, -2.0, 0.0),     // dt_bias
        rnd({C, S}, rng),             // w_b
        rnd({C, S}, rng),             // w_c
    };
    check_leaves(out, "selection_project+scan",
                 reduce([](const std::vector<Tensor>& v) {
                   SsmParams p;
                   p.a_log = v[1];
                   p.d_skip = v[2];
                   p.w_dt = v[3];
                   p.dt_bias = v[4];
                   p.w_b = v[5];
                   p.w_c = v[6];
                   SelectionOut sel = selection_project(v[0], p);
                   Tensor A = neg(exp(p.a_log));
                   return selective_scan_parallel(v[0], sel.delta, A, sel.b,
                                                  sel.c, p.d_skip);
                 }, {T, C}),
                 leaves, tol);
  }

  {
    MambaBlockParams mp = MambaBlockParams::init(4, 3, 2, 3, rng);
    Tensor x = rnd({6, 4}, rng, -1.0, 1.0);
    std::vector<NamedTensor> reg = [&] {
      std::vector<NamedTensor> r{{"x", x}};
      mp.collect("p", r);
      return r;
    }();
    Rng prj(0x7777);
    Tensor proj = Tensor::rand_uniform({6, 4}, prj, -1.0, 1.0);
    auto value = [&] {
      return sum(mul(mamba_block_forward(x, mp), proj)).item();
    };
    auto analytic = [&] {
      Tape tape;
      Tensor bx = x.bound_copy(tape);
      MambaBlockParams bp = mp.bound(tape);
      backward(sum(mul(mamba_block_forward(bx, bp), proj)));
      std::vector<NamedTensor> breg{{"x", bx}};
      bp.collect("p", breg);
      std::vector<std::vector<double>> g;
      for (auto& e : breg) g.push_back(e.tensor.grad().vec());
      return g;
    };
    out.push_back({"mamba_block", tol,
                   run_named_grad_check(reg, value, analytic, tol)});
  }

  {
    BiMambaParams bp = BiMambaParams::init(3, 2, 2, 2, rng);
    Tensor x = rnd({5, 3}, rng, -1.0, 1.0);
    std::vector<NamedTensor> reg = [&] {
      std::vector<NamedTensor> r{{"x", x}};
      bp.collect("p", r);
      return r;
    }();
    Rng prj(0x8181);
    Tensor proj = Tensor::rand_uniform({5, 3}, prj, -1.0, 1.0);
    auto value = [&] { return sum(mul(bimamba_forward(x, bp), proj)).item(); };
    auto analytic = [&] {
      Tape tape;
      Tensor bx = x.bound_copy(tape);
      BiMambaParams b2 = bp.bound(tape);
      backward(sum(mul(bimamba_forward(bx, b2), proj)));
      std::vector<NamedTensor> breg{{"x", bx}};
      b2.collect("p", breg);
      std::vector<std::vector<double>> g;
      for (auto& e : breg) g.push_back(e.tensor.grad().vec());
      return g;
    };
    out.push_back({"bimamba", tol,
                   run_named_grad_check(reg, value, analytic, tol)});
  }
  return out;
}

inline std::vector<GradSuiteItem> gradcheck_models() {
  using namespace gradsuite_detail;
  std::vector<GradSuiteItem> out;
  Rng rng(0x30DE15);
  const double tol = kComposedTol;

  {
    // spec-sized probe: channels 2, T 6, F 5
    TfBlockParams tp = TfBlockParams::init(true, 2, 2, 2, 2, rng);
    Tensor x = rnd({2, 6, 5}, rng, -1.0, 1.0);
    std::vector<NamedTensor> reg = [&] {
      std::vector<NamedTensor> r{{"x", x}};
      tp.collect("p", r);
      return r;
    }();
    Rng prj(0x9191);
    Tensor proj = Tensor::rand_uniform({2, 6, 5}, prj, -1.0, 1.0);
    auto value = [&] { return sum(mul(tf_mamba_block(x, tp), proj)).item(); };
    auto analytic = [&] {
      Tape tape;
      Tensor bx = x.bound_copy(tape);
      TfBlockParams b2 = tp.bound(tape);
      backward(sum(mul(tf_mamba_block(bx, b2), proj)));
      std::vector<NamedTensor> breg{{"x", bx}};
      b2.collect("p", breg);
      std::vector<std::vector<double>> g;
      for (auto& e : breg) g.push_back(e.tensor.grad().vec());
      return g;
    };
    out.push_back({"tf_mamba_block", tol,
                   run_named_grad_check(reg, value, analytic, tol)});
  }

  StftConfig tiny;
  tiny.n_fft = 16;
  tiny.hop = 8;
  tiny.win_len = 16;
  tiny.sample_rate = 16000;

  {
    BasicModelConfig cfg;
    cfg.causal = true;
    cfg.enc_channels = {2, 2, 3, 3};
    cfg.enc_freq_stride = {1, 2, 2, 1};
    cfg.d_model = 6;
    cfg.n_mamba = 1;
    cfg.d_state = 2;
    cfg.expand = 2;
    cfg.conv_kernel = 2;
    cfg.stft = tiny;
    BasicModel m = BasicModel::init(cfg, 0xBEE);
    Rng wr(0xA0);
    Tensor noisy = Tensor::rand_normal({64}, wr, 0.3);
    Tensor clean = Tensor::rand_normal({64}, wr, 0.3);
    Spectrogram sn = stft(noisy, tiny);
    Spectrogram sc = stft(clean, tiny);
    Tensor x = compress_log1p(sn.mag);
    Tensor target = compress_log1p(sc.mag);
    auto value = [&] { return mag_mae(m.enhance_cmag(x), target).item(); };
    auto analytic = [&] {
      Tape tape;
      BasicModel b = m.bound(tape);
      backward(mag_mae(b.enhance_cmag(x), target));
      std::vector<std::vector<double>> g;
      for (auto& e : b.parameters()) g.push_back(e.tensor.grad().vec());
      return g;
    };
    out.push_back({"basic_model_mag_mae", tol,
                   run_named_grad_check(m.parameters(), value, analytic, tol)});
  }

  {
    AdvancedModelConfig cfg;
    cfg.bidirectional = true;
    cfg.channels = 3;
    cfg.dense_layers = 2;
    cfg.n_tf = 1;
    cfg.d_state = 2;
    cfg.expand = 2;
    cfg.conv_kernel = 2;
    cfg.stft = tiny;
    AdvancedModel m = AdvancedModel::init(cfg, 0xCAFE);
    Rng wr(0xA1);
    Tensor noisy = Tensor::rand_normal({48}, wr, 0.3);
    Tensor clean = Tensor::rand_normal({48}, wr, 0.3);
    LossWeights w;  // defaults exercise every term
    auto value = [&] {
      auto fo = m.forward_train(noisy);
      return composite_loss(fo.wave, fo.spec, clean, w, Compression::kPower,
                            cfg.power_c)
          .item();
    };
    auto analytic = [&] {
      Tape tape;
      AdvancedModel b = m.bound(tape);
      auto fo = b.forward_train(noisy);
      backward(composite_loss(fo.wave, fo.spec, clean, w, Compression::kPower,
                              cfg.power_c));
      std::vector<std::vector<double>> g;
      for (auto& e : b.parameters()) g.push_back(e.tensor.grad().vec());
      return g;
    };
    out.push_back({"advanced_model_composite", tol,
                   run_named_grad_check(m.parameters(), value, analytic, tol)});
  }
  return out;
}

inline std::vector<GradSuiteItem> gradcheck_losses() {
  using namespace gradsuite_detail;
  std::vector<GradSuiteItem> out;
  Rng rng(0x10555);
  const double tol = kComposedTol;

  check_leaves(out, "mag_mae",
               [](const std::vector<Tensor>& v) { return mag_mae(v[0], v[1]); },
               {rnd({4, 5}, rng, 0.0, 2.0), rnd({4, 5}, rng, 0.0, 2.0)}, tol);
  check_leaves(out, "phase_distance",
               [](const std::vector<Tensor>& v) { return phase_distance(v[0], v[1]); },
               {rnd({4, 5}, rng, -3.0, 3.0), rnd({4, 5}, rng, -3.0, 3.0)}, tol);

  StftConfig tiny;
  tiny.n_fft = 16;
  tiny.hop = 4;
  tiny.win_len = 16;
  const long L = 48;
  const long T = tiny.num_frames(L), F = tiny.num_bins();

  check_leaves(out, "consistency_loss",
               [tiny](const std::vector<Tensor>& v) {
                 return consistency_loss(SpectroTensors{v[0], v[1], tiny, L});
               },
               {rnd({T, F}, rng, 0.05, 1.5), rnd({T, F}, rng, -3.0, 3.0)}, tol);

  {
    Rng wr(0xB2);
    Tensor target = Tensor::rand_normal({L}, wr, 0.3);
    LossWeights w;
    check_leaves(out, "composite_loss",
                 [tiny, target, w](const std::vector<Tensor>& v) {
                   SpectroTensors sp{v[1], v[2], tiny, L};
                   return composite_loss(v[0], sp, target, w,
                                         Compression::kPower, 0.3);
                 },
                 {rnd({L}, rng, -1.0, 1.0), rnd({T, F}, rng, 0.05, 1.5),
                  rnd({T, F}, rng, -3.0, 3.0)},
                 tol);
  }
  return out;
}

inline std::vector<GradSuiteItem> gradcheck_module(const std::string& module) {
  if (module == "primitives") return gradcheck_primitives();
  if (module == "ssm") return gradcheck_ssm();
  if (module == "models") return gradcheck_models();
  if (module == "losses") return gradcheck_losses();
  if (module == "all") {
    std::vector<GradSuiteItem> out = gradcheck_primitives();
    for (auto&& suite : {gradcheck_ssm(), gradcheck_models(), gradcheck_losses()})
      out.insert(out.end(), suite.begin(), suite.end());
    return out;
  }
  throw ConfigError("gradcheck: unknown module '" + module +
                    "' (expected ssm, models, losses, primitives or all)");
}

}  // namespace semamba
