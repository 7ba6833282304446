#pragma once

// Central-difference gradient checking for tape ops.
//
// A case maps input tensors to a Var. Non-scalar outputs are reduced with a
// fixed random projection <r, y> so the VJP is exercised with a generic seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "frequnet/ops.hpp"
#include "frequnet/params.hpp"
#include "frequnet/tape.hpp"

namespace frequnet {

struct GradcheckCase {
  using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

  std::string name;
  std::vector<Tensor> inputs;
  Fn fn;
  double threshold = 1e-3;
  std::size_t max_samples = 0;  // total entries checked across inputs; 0 checks every entry
  double h = 1e-4;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

namespace detail {

inline Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

inline Var project(Tape& tape, const Var& y, const Tensor& r) {
  if (y.shape().numel() == 1) return y;
  return sum(mul(y, tape.constant(r)));
}

inline double evaluate_case(const GradcheckCase& c, const std::vector<Tensor>& inputs, const Tensor& r) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, false));
  return project(tape, c.fn(tape, vars), r).value().item();
}

}  // namespace detail

inline GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed = 7) {
  std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(c.name)));
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : c.inputs) vars.push_back(tape.leaf(t, true));
  Var y = c.fn(tape, vars);
  const Tensor r = detail::random_tensor(y.shape(), rng);
  Var loss = detail::project(tape, y, r);
  Gradients grads = tape.backward(loss);

  // (input, element) pairs to check
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < c.inputs.size(); ++i)
    for (std::size_t k = 0; k < c.inputs[i].size(); ++k) entries.emplace_back(i, k);
  if (c.max_samples != 0 && entries.size() > c.max_samples) {
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(c.max_samples);
  }

  GradcheckResult res{c.name, 0.0, c.threshold, 0, false};
  std::vector<Tensor> work = c.inputs;
  for (auto [i, k] : entries) {
    const double orig = work[i][k];
    work[i][k] = orig + c.h;
    const double up = detail::evaluate_case(c, work, r);
    work[i][k] = orig - c.h;
    const double down = detail::evaluate_case(c, work, r);
    work[i][k] = orig;
    const double numeric = (up - down) / (2.0 * c.h);
    const double analytic = grads[vars[i]][k];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    res.max_rel_error = std::max(res.max_rel_error, std::isfinite(err) ? err : INFINITY);
    ++res.checked;
  }
  res.passed = res.max_rel_error < c.threshold;
  return res;
}

}  // namespace frequnet
