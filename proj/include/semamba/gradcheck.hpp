// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "semamba/ops.hpp"
#include "semamba/tensor.hpp"

namespace semamba {

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool pass = false;
  std::string worst;  // where the largest deviation sits

  std::string str() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err;
    if (!worst.empty()) os << " at " << worst;
    return os.str();
  }
};

namespace detail {

inline double rel_err(double a, double n) {
  double d = std::fabs(a - n);
  double s = std::max({1.0, std::fabs(a), std::fabs(n)});
  return d / s;
}

}  // namespace detail

// Central-difference check of a scalar loss against the analytic gradients of
// the given leaves. `forward` must rebuild the graph on each call from the
// tensor values it is handed; it runs taped once for the analytic pass and
// untaped 2*numel times for the differences. step follows the oracle
// definition used across the test suite (1e-5).
inline GradCheckResult grad_check_leaves(
    const std::function<Tensor(const std::vector<Tensor>&)>& forward,
    const std::vector<Tensor>& leaves, double tol, double step = 1e-5) {
  // Non-determinism guard: two value-mode passes must agree bitwise.
  {
    std::vector<Tensor> vals;
    for (const Tensor& l : leaves) vals.push_back(l.detach());
    double f1 = forward(vals).item();
    double f2 = forward(vals).item();
    if (std::memcmp(&f1, &f2, sizeof(double)) != 0)
      throw NumericError("grad_check: forward is not deterministic");
  }

  Tape tape;
  std::vector<Tensor> bound;
  for (const Tensor& l : leaves) bound.push_back(l.bound_copy(tape));
  Tensor loss = forward(bound);
  if (loss.size() != 1)
    throw ShapeError("grad_check: forward must return a scalar");
  backward(loss);

  GradCheckResult res;
  res.pass = true;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor analytic = bound[li].grad();
    std::vector<Tensor> vals;
    for (const Tensor& l : leaves) vals.push_back(l.detach());
    for (long j = 0; j < leaves[li].size(); ++j) {
      double orig = vals[li].data()[j];
      vals[li].data()[j] = orig + step;
      double fp = forward(vals).item();
      vals[li].data()[j] = orig - step;
      double fm = forward(vals).item();
      vals[li].data()[j] = orig;
      double num = (fp - fm) / (2.0 * step);
      double err = detail::rel_err(analytic.data()[j], num);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        std::ostringstream os;
        os << "leaf " << li << " elem " << j << " analytic "
           << analytic.data()[j] << " numeric " << num;
        res.worst = os.str();
      }
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

// Single-input form for tensor->tensor functions. The output is reduced by a
// fixed random projection so errors in off-diagonal Jacobian entries cannot
// cancel out.
inline GradCheckResult grad_check(
    const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
    double tol, double step = 1e-5, uint64_t proj_seed = 0x9a3c12d4) {
  Tensor probe = fn(point.detach());
  Rng rng(proj_seed);
  Tensor r = Tensor::rand_uniform(probe.shape(), rng, -1.0, 1.0);
  auto reduced = [&](const std::vector<Tensor>& vals) {
    return sum(mul(fn(vals[0]), r));
  };
  return grad_check_leaves(reduced, {point}, tol, step);
}

// Registry-driven form for deep parameter structs. `params` are live handles
// into the master copy (perturbed in place for the differences and then
// restored); `value_loss` evaluates the loss at the current master values;
// `analytic_grads` runs one taped forward/backward and returns gradients
// aligned with `params`.
inline GradCheckResult run_named_grad_check(
    std::vector<NamedTensor> params, const std::function<double()>& value_loss,
    const std::function<std::vector<std::vector<double>>()>& analytic_grads,
    double tol, double step = 1e-5) {
  {
    double f1 = value_loss();
    double f2 = value_loss();
    if (std::memcmp(&f1, &f2, sizeof(double)) != 0)
      throw NumericError("grad_check: forward is not deterministic");
  }
  std::vector<std::vector<double>> grads = analytic_grads();
  if (grads.size() != params.size())
    throw ShapeError("grad_check: gradient count does not match registry");
  GradCheckResult res;
  res.pass = true;
  for (size_t li = 0; li < params.size(); ++li) {
    Tensor t = params[li].tensor;
    if (long(grads[li].size()) != t.size())
      throw ShapeError("grad_check: gradient size mismatch for " +
                       params[li].name);
    for (long j = 0; j < t.size(); ++j) {
      double orig = t.data()[j];
      t.data()[j] = orig + step;
      double fp = value_loss();
      t.data()[j] = orig - step;
      double fm = value_loss();
      t.data()[j] = orig;
      double num = (fp - fm) / (2.0 * step);
      double err = detail::rel_err(grads[li][size_t(j)], num);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        std::ostringstream os;
        os << params[li].name << " elem " << j << " analytic "
           << grads[li][size_t(j)] << " numeric " << num;
        res.worst = os.str();
      }
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace semamba
