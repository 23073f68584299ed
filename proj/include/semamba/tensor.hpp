// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace semamba {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (usage 2, numeric 3, I/O 4).
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using Shape = std::vector<long>;

inline long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is bit-exact across platforms; the uniform
// and normal transforms below are spelled out so draws never depend on
// libstdc++ distribution internals.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one spare kept between calls.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // [0, n)
  long uniform_int(long n) {
    return n <= 1 ? 0 : long(gen_() % uint64_t(n));
  }

  // splitmix64-style mixing for derived streams (per-item, per-step seeds).
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Tensor + Tape: reverse-mode substrate. Tensors are contiguous row-major
// float64. A tensor participates in differentiation when it is bound to a
// Tape (leaves via bind(), op outputs via propagation). Tapes are single-use
// and thread-confined together with every tensor recorded on them; shared
// parameters are cloned per tape.
// ---------------------------------------------------------------------------

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  Tape* tape = nullptr;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(s);
    t.impl_->data.assign(numel(t.impl_->shape), 0.0);
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.impl_->data) x = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<double> d) {
    if (numel(s) != long(d.size()))
      throw ShapeError("Tensor::from: " + shape_str(s) + " holds " +
                       std::to_string(numel(s)) + " values, got " +
                       std::to_string(d.size()));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(s);
    t.impl_->data = std::move(d);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor rand_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.impl_->data) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor rand_normal(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.impl_->data) x = stddev * rng.normal();
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long rank() const { return long(impl_->shape.size()); }
  long dim(long i) const { return impl_->shape[size_t(i)]; }
  long size() const { return long(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double item() const {
    if (size() != 1)
      throw ShapeError("item(): tensor has " + std::to_string(size()) +
                       " elements");
    return impl_->data[0];
  }

  double at(std::initializer_list<long> idx) const {
    return impl_->data[offset(idx)];
  }
  void set(std::initializer_list<long> idx, double v) {
    impl_->data[offset(idx)] = v;
  }

  Tape* tape() const { return impl_ ? impl_->tape : nullptr; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  // Deep copy without tape participation.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  // Mark this tensor as a differentiable leaf of `tape`.
  void bind(Tape& tape) {
    impl_->requires_grad = true;
    impl_->tape = &tape;
  }

  // Leaf clone bound to a tape; the original stays untouched.
  Tensor bound_copy(Tape& tape) const {
    Tensor t = detach();
    t.bind(tape);
    return t;
  }

  // Gradient as a tensor (zeros if backward never touched this leaf).
  Tensor grad() const {
    Tensor g = Tensor::zeros(impl_->shape);
    if (!impl_->grad.empty()) g.impl_->data = impl_->grad;
    return g;
  }

  std::vector<double>& grad_vec() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  long offset(std::initializer_list<long> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size())
      throw ShapeError("index rank mismatch for " + shape_str(s));
    long off = 0;
    size_t k = 0;
    for (long i : idx) {
      if (i < 0 || i >= s[k])
        throw ShapeError("index out of range for " + shape_str(s));
      off = off * s[k] + i;
      ++k;
    }
    return off;
  }

  std::shared_ptr<TensorImpl> impl_;
};

// Name -> tensor pairing used by parameter registries and checkpoints.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Backward functions run in reverse recording order; each reads the
  // output's grad and accumulates into the inputs' grads.
  void record(const char* op, std::function<void()> backward_fn) {
    entries_.push_back({op, std::move(backward_fn)});
  }

  size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void run_backward(const Tensor& loss) {
    if (consumed_) throw Error("backward: tape already consumed");
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(loss.shape()));
    consumed_ = true;
    auto li = loss.impl();
    li->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
    entries_.clear();
  }

 private:
  struct Entry {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

inline void backward(const Tensor& loss) {
  if (!loss.tape()) throw Error("backward: loss was not recorded on a tape");
  loss.tape()->run_backward(loss);
}

// Hard error on any non-finite op output.
inline void check_finite(const char* op, const Tensor& t) {
  for (double v : t.vec())
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite output");
}

}  // namespace semamba
