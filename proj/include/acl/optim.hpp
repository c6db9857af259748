#pragma once

#include <string>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

enum class OptimizerKind { sgd, sgd_momentum, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_epsilon = 1e-8;

  void validate() const;
};

// First-order update of leaf tensors from their accumulated gradients.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig config);

  void step();
  void zero_grad();
  const OptimizerConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_, second_;
  std::size_t steps_ = 0;
};

}  // namespace acl
