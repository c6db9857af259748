#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acl/data.hpp"
#include "acl/network.hpp"
#include "acl/tensor.hpp"

namespace acl {

enum class AttackKind { none, fgsm, pgd };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& text);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // L-infinity budget in input units
  std::size_t pgd_steps = 10;
  double pgd_alpha = 2.0 / 255.0;
  bool random_start = true;  // PGD only
  std::uint64_t seed = 0;

  void validate() const;
};

// Scalar loss of a (B x d) input batch that the attacker maximises.
using AttackLoss = std::function<Tensor(const Tensor& x)>;

// Largest/smallest doubles the attack may move x to: the [0,1] box
// intersected with the epsilon ball, shrunk by an ulp where rounding would
// otherwise let |x_adv - x| exceed epsilon.
double ball_upper(double x, double epsilon);
double ball_lower(double x, double epsilon);

// Exact containment test: every |x_adv - x| <= epsilon and x_adv in [0,1].
bool within_ball(std::span<const double> x_adv, std::span<const double> x, double epsilon);

// x + epsilon * sign(dL/dx), clipped to [0,1]; sign(0) is 0.
Tensor fgsm(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg);
// Projected signed-gradient ascent from x (or a uniform point of the ball).
Tensor pgd(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg);

// Cross-entropy over softmax(model.scores(x)): the decoder itself for ACL
// models, the head logits for the baselines.
AttackLoss classifier_loss(const Classifier& model, std::span<const std::size_t> labels);

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
            const AttackConfig& cfg);
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
           const AttackConfig& cfg);

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  // Adversarial examples generated, and how many passed within_ball.
  std::size_t generated = 0;
  std::size_t contained = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct EvalOptions {
  std::size_t batch_size = 256;
  // When non-null, receives the attacked inputs (clean ones for `none`).
  Dataset* adversarial = nullptr;
};

// Accuracy on clean or attacked inputs. Batch b of a PGD run draws its
// random start from (cfg.seed, b), so results do not depend on batching
// order elsewhere.
EvalResult evaluate(const Classifier& model, const Dataset& data, AttackKind attack,
                    const AttackConfig& cfg, const EvalOptions& options = {});

}  // namespace acl
