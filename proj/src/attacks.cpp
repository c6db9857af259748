#include "acl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "acl/error.hpp"
#include "acl/losses.hpp"

namespace acl {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "clean";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& text) {
  if (text == "clean" || text == "none") return AttackKind::none;
  if (text == "fgsm") return AttackKind::fgsm;
  if (text == "pgd") return AttackKind::pgd;
  throw ConfigError("unknown attack '" + text + "' (expected clean, fgsm or pgd)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    throw ConfigError("attack.epsilon must be finite and non-negative");
  if (pgd_steps == 0) throw ConfigError("attack.pgd_steps must be at least 1");
  if (!(pgd_alpha > 0.0 && pgd_alpha <= epsilon) && epsilon > 0.0)
    throw ConfigError("attack.pgd_alpha must lie in (0, epsilon]");
}

// x +- epsilon rounds to within an ulp or two of the true bound, so a short
// walk in either direction lands on the extreme admissible double.
double ball_upper(double x, double epsilon) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double hi = std::min(1.0, x + epsilon);
  while (hi - x > epsilon) hi = std::nextafter(hi, -inf);
  for (double up = std::nextafter(hi, inf); up <= 1.0 && up - x <= epsilon;
       up = std::nextafter(up, inf))
    hi = up;
  return std::max(hi, x);
}

double ball_lower(double x, double epsilon) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double lo = std::max(0.0, x - epsilon);
  while (x - lo > epsilon) lo = std::nextafter(lo, inf);
  for (double down = std::nextafter(lo, -inf); down >= 0.0 && x - down <= epsilon;
       down = std::nextafter(down, -inf))
    lo = down;
  return std::min(lo, x);
}

bool within_ball(std::span<const double> x_adv, std::span<const double> x, double epsilon) {
  if (x_adv.size() != x.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x_adv[i];
    if (!(a >= 0.0 && a <= 1.0)) return false;
    if (!(a - x[i] <= epsilon && x[i] - a <= epsilon)) return false;
  }
  return true;
}

namespace {

double sign(double g) { return g > 0.0 ? 1.0 : g < 0.0 ? -1.0 : 0.0; }

std::vector<double> input_gradient(const AttackLoss& loss, std::span<const double> point,
                                   const Shape& shape) {
  Tensor x(shape, std::vector<double>(point.begin(), point.end()), true);
  const Tensor l = loss(x);
  if (l.numel() != 1) throw ShapeError("attack loss must be a scalar");
  l.backward();
  const auto g = x.grad();
  for (double v : g)
    if (!std::isfinite(v)) throw NumericError("non-finite input gradient during attack");
  return {g.begin(), g.end()};
}

// One signed step from `current`, projected onto the ball around x0 and the
// [0,1] box. FGSM is exactly this step from x0 with alpha = epsilon.
void signed_step(const AttackLoss& loss, std::vector<double>& current,
                 std::span<const double> x0, const Shape& shape, double alpha, double epsilon) {
  const auto g = input_gradient(loss, current, shape);
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double moved = current[i] + alpha * sign(g[i]);
    current[i] = std::clamp(moved, ball_lower(x0[i], epsilon), ball_upper(x0[i], epsilon));
  }
}

void check_input(const Tensor& x) {
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("attack input outside [0,1]");
}

}  // namespace

Tensor fgsm(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg) {
  cfg.validate();
  check_input(x);
  std::vector<double> out(x.values().begin(), x.values().end());
  signed_step(loss, out, x.values(), x.shape(), cfg.epsilon, cfg.epsilon);
  return Tensor(x.shape(), std::move(out));
}

Tensor pgd(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg) {
  cfg.validate();
  check_input(x);
  const auto x0 = x.values();
  std::vector<double> out(x0.begin(), x0.end());
  if (cfg.random_start && cfg.epsilon > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(x0[i] + u(rng), ball_lower(x0[i], cfg.epsilon),
                          ball_upper(x0[i], cfg.epsilon));
  }
  for (std::size_t s = 0; s < cfg.pgd_steps; ++s)
    signed_step(loss, out, x0, x.shape(), cfg.pgd_alpha, cfg.epsilon);
  return Tensor(x.shape(), std::move(out));
}

AttackLoss classifier_loss(const Classifier& model, std::span<const std::size_t> labels) {
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return [&model, y = std::move(y)](const Tensor& x) {
    return cross_entropy_with_logits(model.scores(x), y);
  };
}

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
            const AttackConfig& cfg) {
  return fgsm(classifier_loss(model, labels), x, cfg);
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
           const AttackConfig& cfg) {
  return pgd(classifier_loss(model, labels), x, cfg);
}

EvalResult evaluate(const Classifier& model, const Dataset& data, AttackKind attack,
                    const AttackConfig& cfg, const EvalOptions& options) {
  cfg.validate();
  if (options.batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const Classifier target = model.frozen();
  EvalResult result;
  if (options.adversarial) {
    *options.adversarial = data;
    options.adversarial->inputs.clear();
  }
  std::vector<std::size_t> idx, y;
  for (std::size_t start = 0, b = 0; start < data.size(); start += options.batch_size, ++b) {
    idx.resize(std::min(options.batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    y.clear();
    for (auto i : idx) y.push_back(data.labels[i]);
    const Tensor x = data.batch(idx);
    Tensor input = x;
    if (attack != AttackKind::none) {
      AttackConfig batch_cfg = cfg;
      batch_cfg.seed = mix_seed(cfg.seed, b);
      input = attack == AttackKind::fgsm ? fgsm(target, x, y, batch_cfg)
                                         : pgd(target, x, y, batch_cfg);
      const std::size_t d = data.shape.size();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        ++result.generated;
        result.contained += within_ball(input.values().subspan(r * d, d),
                                        x.values().subspan(r * d, d), cfg.epsilon);
      }
    }
    const auto pred = target.predict(input);
    for (std::size_t r = 0; r < idx.size(); ++r) result.correct += pred[r] == y[r];
    result.total += idx.size();
    if (options.adversarial)
      options.adversarial->inputs.insert(options.adversarial->inputs.end(),
                                         input.values().begin(), input.values().end());
  }
  return result;
}

}  // namespace acl
