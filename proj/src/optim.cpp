#include "acl/optim.hpp"

#include <cmath>

#include "acl/error.hpp"

namespace acl {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd-momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(const std::string& text) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adam})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown optimizer '" + text + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be finite and non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw Error("optimizer given a tensor that does not require grad");
    first_.emplace_back(p.numel(), 0.0);
    second_.emplace_back(config_.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++steps_;
  const double lr = config_.learning_rate;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t t = 0; t < params_.size(); ++t) {
    auto w = params_[t].mutable_values();
    const auto g = params_[t].grad();
    auto& m = first_[t];
    auto& v = second_[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      switch (config_.kind) {
        case OptimizerKind::sgd:
          w[i] -= lr * g[i];
          break;
        case OptimizerKind::sgd_momentum:
          m[i] = config_.momentum * m[i] + g[i];
          w[i] -= lr * m[i];
          break;
        case OptimizerKind::adam:
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
          w[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + config_.adam_epsilon);
          break;
      }
    }
  }
}

}  // namespace acl
