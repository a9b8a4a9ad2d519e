#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fuse3d/ops.hpp"
#include "fuse3d/rng.hpp"
#include "fuse3d/tensor.hpp"

namespace fuse3d {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Deterministic random-projection scalarization: contracts an op output to a
// scalar with fixed uniform(-1,1) weights so one backward pass exercises
// every output coordinate. The same seed yields the same projection on
// every call, which the finite-difference re-evaluations rely on.
inline Tensor<double> project_to_scalar(const Tensor<double>& y,
                                        std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9a11));
  Tensor<double> r = Tensor<double>::zeros(y.shape());
  for (auto& v : r.values()) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, r));
}

// Central-difference gradient check in 64-bit mode. fn must rebuild the full
// forward pass from the current values of `inputs` on every call and return
// a scalar loss; inputs are perturbed in place. Step size is 1e-4 of the
// coordinate's value scale. The reported error is relative with a unit
// floor: |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradcheckReport gradcheck(const std::function<Tensor<double>()>& fn,
                                 std::vector<Tensor<double>> inputs,
                                 std::size_t max_coords_per_input = 0,
                                 std::uint64_t seed = 7) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    TapeScope<double> scope;
    Tensor<double> loss = fn();
    scope.backward(loss);
  }
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad());

  GradcheckReport report;
  Rng rng(derive_seed(seed, 0x6fd));
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    Tensor<double>& t = inputs[which];
    const std::size_t n = t.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    std::size_t m = n;
    if (max_coords_per_input > 0 && max_coords_per_input < n) {
      m = max_coords_per_input;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k =
            j + static_cast<std::size_t>(rng.uniform_index(n - j));
        std::swap(coords[j], coords[k]);
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = coords[j];
      const double v0 = t.data()[i];
      const double h = 1e-4 * std::max(1.0, std::abs(v0));
      t.data()[i] = v0 + h;
      const double f_plus = fn().item();
      t.data()[i] = v0 - h;
      const double f_minus = fn().item();
      t.data()[i] = v0;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double ana = analytic[which][i];
      const double rel = std::abs(ana - numeric) /
                         std::max({1.0, std::abs(ana), std::abs(numeric)});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = which;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace fuse3d
