#pragma once

#include <functional>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

// Compares reverse-mode gradients with central differences. The returned
// error is max over coordinates of |analytic - numeric| / max(1, |analytic|).
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// `loss` must rebuild its graph from `leaves` on every call; leaves are
// perturbed in place and restored before returning.
GradCheck check_gradients(const std::function<Tensor()>& loss,
                          std::vector<Tensor>& leaves, double h = 1e-5);

// Single-input form: f is evaluated at `point` (which is copied).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double h = 1e-5);

}  // namespace acl
