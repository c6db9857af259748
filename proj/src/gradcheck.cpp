#include "acl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace acl {

GradCheck check_gradients(const std::function<Tensor()>& loss,
                          std::vector<Tensor>& leaves, double h) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves)
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  GradCheck result;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_rel_error)
        result = {err, l, i, a, numeric};
    }
  }
  return result;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double h) {
  std::vector<Tensor> leaves{point.detach()};
  return check_gradients([&] { return f(leaves[0]); }, leaves, h).max_rel_error;
}

}  // namespace acl
