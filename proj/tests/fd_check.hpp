#pragma once

// Central finite-difference gradient oracle, independent of the tape's
// backward rules. Used with the double instantiation of the tensor core.

#include <cmath>
#include <functional>
#include <vector>

#include "etclip/rng.hpp"
#include "etclip/tensor.hpp"

namespace fd {

struct Result {
  double max_rel_err = 0.0;
  int checked = 0;
};

// loss_fn must recompute the full forward from current parameter values.
// Checks up to max_coords coordinates sampled across all params.
inline Result check(const std::vector<etclip::TensorT<double>>& params,
                    const std::function<double()>& loss_fn,
                    const std::function<void()>& backward_fn,
                    etclip::Rng& rng, int max_coords, double h = 1e-3,
                    double rel_tol = 1e-3, double abs_floor = 1e-6) {
  backward_fn();  // populates grads via the tape
  std::vector<std::pair<int, int>> coords;
  std::size_t total = 0;
  for (auto& p : params) total += p->numel();
  for (int c = 0; c < max_coords; ++c) {
    std::size_t flat =
        static_cast<std::size_t>(rng.uniform() * static_cast<double>(total));
    if (flat >= total) flat = total - 1;
    std::size_t off = flat;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      if (off < params[pi]->numel()) {
        coords.emplace_back(static_cast<int>(pi), static_cast<int>(off));
        break;
      }
      off -= params[pi]->numel();
    }
  }
  Result res;
  for (auto [pi, i] : coords) {
    auto& p = params[static_cast<std::size_t>(pi)];
    double orig = p->value[static_cast<std::size_t>(i)];
    p->value[static_cast<std::size_t>(i)] = orig + h;
    double fp = loss_fn();
    p->value[static_cast<std::size_t>(i)] = orig - h;
    double fm = loss_fn();
    p->value[static_cast<std::size_t>(i)] = orig;
    double num = (fp - fm) / (2.0 * h);
    // empty grad means the tape never reached this leaf: gradient is zero
    double ana = p->grad.empty() ? 0.0 : p->grad[static_cast<std::size_t>(i)];
    double denom = std::max({std::abs(num), std::abs(ana), abs_floor / rel_tol});
    double rel = std::abs(num - ana) / denom;
    res.max_rel_err = std::max(res.max_rel_err, rel);
    ++res.checked;
  }
  return res;
}

}  // namespace fd
