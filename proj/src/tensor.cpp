#include "acl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "acl/error.hpp"

namespace acl {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

thread_local bool t_grad_enabled = true;

void check_finite(const char* op, std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite ") + what + " in " + op);
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> fn) {
  check_finite(op, value, "value");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool track =
      t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                    [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw Error("use of an undefined tensor");
  return t.node();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.dim() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     to_string(a.shape()));
}

void require_mask(const char* op, std::span<const std::uint8_t> mask, std::size_t n) {
  if (!mask.empty() && mask.size() != n)
    throw ShapeError(std::string(op) + ": mask size does not match tensor");
}

// Elementwise unary op: value f(x), local derivative df(x, y).
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  const auto& pa = node_of(a);
  std::vector<double> out(pa->value.size());
  std::transform(pa->value.begin(), pa->value.end(), out.begin(), f);
  return make_result(op, pa->shape, std::move(out), {pa}, [df](Node& self) {
    auto& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (acl::numel(shape) != values.size())
    throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                     std::to_string(acl::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  check_finite("tensor", values, "value");
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = acl::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::size_t Tensor::numel() const { return node_of(*this)->value.size(); }

std::size_t Tensor::rows() const {
  require_matrix("rows", *this);
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_matrix("cols", *this);
  return shape()[1];
}

std::span<const double> Tensor::values() const { return node_of(*this)->value; }

std::span<double> Tensor::mutable_values() {
  const auto& n = node_of(*this);
  if (!n->parents.empty()) throw Error("only leaf tensors can be written in place");
  return n->value;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return values()[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  const auto& n = node_of(*this);
  if (!n->parents.empty()) throw Error("requires_grad can only be set on leaves");
  n->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_of(*this)->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_of(*this)->grad_buffer(); }

void Tensor::zero_grad() {
  auto& g = node_of(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = node_of(*this);
  return Tensor(n->shape, n->value, false);
}

const char* Tensor::op_name() const { return node_of(*this)->op; }

void Tensor::backward() const {
  const auto& root = node_of(*this);
  if (root->value.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     to_string(root->shape));
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reverse of it is a valid backward order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->parents.empty()) n->grad.clear();
  root->grad_buffer()[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.empty()) continue;
    check_finite(n->op, n->grad, "gradient");
    if (n->backward) n->backward(*n);
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto &pa = node_of(a), &pb = node_of(b);
  std::vector<double> out(pa->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i];
  return make_result("add", pa->shape, std::move(out), {pa, pb}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto &pa = node_of(a), &pb = node_of(b);
  std::vector<double> out(pa->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] - pb->value[i];
  return make_result("sub", pa->shape, std::move(out), {pa, pb}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto &pa = node_of(a), &pb = node_of(b);
  std::vector<double> out(pa->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * pb->value[i];
  return make_result("mul", pa->shape, std::move(out), {pa, pb}, [](Node& self) {
    auto& x = *self.parents[0];
    auto& y = *self.parents[1];
    if (x.requires_grad) {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const auto &pa = node_of(a), &pb = node_of(b);
  std::vector<double> out(pa->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pb->value[i] == 0.0) throw DomainError("div: division by zero");
    out[i] = pa->value[i] / pb->value[i];
  }
  return make_result("div", pa->shape, std::move(out), {pa, pb}, [](Node& self) {
    auto& x = *self.parents[0];
    auto& y = *self.parents[1];
    if (x.requires_grad) {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y.value[i];
    }
    if (y.requires_grad) {
      auto g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * self.value[i] / y.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; },
               [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : node_of(a)->value)
    if (!(x > 0.0)) throw DomainError("log of a non-positive value");
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor apply_mask(const Tensor& a, std::span<const std::uint8_t> mask) {
  require_mask("apply_mask", mask, a.numel());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const auto& pa = node_of(a);
  std::vector<double> out(pa->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? pa->value[i] : 0.0;
  return make_result("apply_mask", pa->shape, std::move(out), {pa},
                     [m = std::move(m)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (m[i]) g[i] += self.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  const auto& pa = node_of(a);
  double s = 0.0;
  for (double x : pa->value) s += x;
  return make_result("sum", {}, {s}, {pa}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor l2_norm(const Tensor& a) {
  const auto& pa = node_of(a);
  double s = 0.0;
  for (double x : pa->value) s += x * x;
  return make_result("l2_norm", {}, {std::sqrt(s)}, {pa}, [](Node& self) {
    const double norm = self.value[0];
    if (norm == 0.0) throw DomainError("l2_norm: gradient undefined at zero");
    auto& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * p.value[i] / norm;
  });
}

Tensor sum_rows(const Tensor& a) {
  require_matrix("sum_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  const auto& pa = node_of(a);
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += pa->value[i * c + j];
  return make_result("sum_rows", {r}, std::move(out), {pa}, [r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

Tensor logsumexp_rows(const Tensor& a, std::span<const std::uint8_t> mask) {
  require_matrix("logsumexp_rows", a);
  require_mask("logsumexp_rows", mask, a.numel());
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  if (m.empty()) m.assign(r * c, 1);
  const auto& pa = node_of(a);
  const auto& v = pa->value;
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (m[i * c + j]) hi = std::max(hi, v[i * c + j]);
    if (std::isinf(hi)) throw ShapeError("logsumexp_rows: a row has no unmasked entry");
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (m[i * c + j]) s += std::exp(v[i * c + j] - hi);
    out[i] = hi + std::log(s);
  }
  return make_result("logsumexp_rows", {r}, std::move(out), {pa},
                     [r, c, m = std::move(m)](Node& self) {
                       auto& p = *self.parents[0];
                       auto g = p.grad_buffer();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           if (m[i * c + j])
                             g[i * c + j] += self.grad[i] *
                                             std::exp(p.value[i * c + j] - self.value[i]);
                     });
}

Tensor masked_max(const Tensor& a, std::span<const std::uint8_t> mask) {
  require_mask("masked_max", mask, a.numel());
  const auto& pa = node_of(a);
  std::size_t best = pa->value.size();
  for (std::size_t i = 0; i < pa->value.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (best == pa->value.size() || pa->value[i] > pa->value[best]) best = i;
  }
  if (best == pa->value.size()) throw ShapeError("masked_max: nothing selected");
  return make_result("masked_max", {}, {pa->value[best]}, {pa}, [best](Node& self) {
    self.parents[0]->grad_buffer()[best] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto &pa = node_of(a), &pb = node_of(b);
  std::vector<double> out(m * n);
  kernels::parallel::matmul(pa->value, pb->value, out, m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {pa, pb}, [m, k, n](Node& self) {
    auto& x = *self.parents[0];
    auto& y = *self.parents[1];
    if (x.requires_grad)
      kernels::parallel::matmul_a_bt_acc(self.grad, y.value, x.grad_buffer(), m, k, n);
    if (y.requires_grad)
      kernels::parallel::matmul_at_b_acc(x.value, self.grad, y.grad_buffer(), m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  const auto& pa = node_of(a);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = pa->value[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {pa}, [r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix("add_bias", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.numel() != c)
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " for input " +
                     to_string(x.shape()));
  const auto &px = node_of(x), &pb = node_of(bias);
  std::vector<double> out(px->value);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += pb->value[j];
  return make_result("add_bias", {r, c}, std::move(out), {px, pb}, [r, c](Node& self) {
    auto& xs = *self.parents[0];
    auto& bs = *self.parents[1];
    if (xs.requires_grad) {
      auto g = xs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bs.requires_grad) {
      auto g = bs.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  const auto& pa = node_of(a);
  return make_result("reshape", std::move(shape), pa->value, {pa}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column count mismatch");
    total += p.rows();
    inputs.push_back(node_of(p));
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : inputs) out.insert(out.end(), p->value.begin(), p->value.end());
  return make_result("concat_rows", {total, c}, std::move(out), std::move(inputs),
                     [](Node& self) {
                       std::size_t offset = 0;
                       for (auto& p : self.parents) {
                         const std::size_t len = p->value.size();
                         if (p->requires_grad) {
                           auto g = p->grad_buffer();
                           for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
                         }
                         offset += len;
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  if (begin > end || end > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of " + to_string(a.shape()));
  const std::size_t c = a.cols();
  const auto& pa = node_of(a);
  std::vector<double> out(pa->value.begin() + begin * c, pa->value.begin() + end * c);
  return make_result("slice_rows", {end - begin, c}, std::move(out), {pa},
                     [offset = begin * c](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[offset + i] += self.grad[i];
                     });
}

Tensor index_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix("index_rows", a);
  const std::size_t c = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (auto r : idx)
    if (r >= a.rows()) throw ShapeError("index_rows: row index out of range");
  const auto& pa = node_of(a);
  const std::size_t n = idx.size();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(pa->value.begin() + idx[i] * c, c, out.begin() + i * c);
  return make_result("index_rows", {n, c}, std::move(out), {pa},
                     [c, idx = std::move(idx)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           g[idx[i] * c + j] += self.grad[i * c + j];
                     });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> cols) {
  require_matrix("pick", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (cols.size() != r) throw ShapeError("pick: one column index per row required");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (auto j : idx)
    if (j >= c) throw ShapeError("pick: column index out of range");
  const auto& pa = node_of(a);
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = pa->value[i * c + idx[i]];
  return make_result("pick", {r}, std::move(out), {pa},
                     [c, idx = std::move(idx)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         g[i * c + idx[i]] += self.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Normalisation and similarity

Tensor normalize_rows(const Tensor& a) {
  require_matrix("normalize_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  const auto& pa = node_of(a);
  std::vector<double> norms(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += pa->value[i * c + j] * pa->value[i * c + j];
    if (s == 0.0)
      throw DomainError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = pa->value[i * c + j] / norms[i];
  }
  return make_result("normalize_rows", {r, c}, std::move(out), {pa},
                     [r, c, norms = std::move(norms)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.value.data() + i * c;
                         const double* gy = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape("cosine_similarity", a, b);
  const auto zero = [](const Tensor& t) {
    const auto v = t.values();
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  };
  if (zero(a) || zero(b)) throw DomainError("cosine_similarity: zero-norm input");
  return sum(mul(a, b)) / (l2_norm(a) * l2_norm(b));
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_matrix: width mismatch");
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

Tensor softmax_rows(const Tensor& logits) {
  require_matrix("softmax_rows", logits);
  const std::size_t r = logits.rows(), c = logits.cols();
  const auto& pa = node_of(logits);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = pa->value.data() + i * c;
    const double hi = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] = std::exp(x[j] - hi);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return make_result("softmax", pa->shape, std::move(out), {pa}, [r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.data() + i * c;
      const double* gy = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor softmax(const Tensor& logits) {
  if (logits.dim() != 1) throw ShapeError("softmax expects a vector");
  return reshape(softmax_rows(reshape(logits, {1, logits.numel()})), {logits.numel()});
}

// ---------------------------------------------------------------------------
// Images

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias,
              const kernels::ConvGeometry& geo) {
  require_matrix("conv2d", x);
  require_matrix("conv2d", weights);
  const std::size_t batch = x.rows();
  const std::size_t in = geo.channels * geo.height * geo.width;
  const std::size_t ps = geo.patch_size();
  const std::size_t out_ch = weights.cols();
  const std::size_t pos = geo.out_height() * geo.out_width();
  if (x.cols() != in || weights.rows() != ps || bias.numel() != out_ch)
    throw ShapeError("conv2d: input " + to_string(x.shape()) + ", weights " +
                     to_string(weights.shape()) + ", bias " + to_string(bias.shape()));

  const auto &px = node_of(x), &pw = node_of(weights), &pb = node_of(bias);
  auto cols = std::make_shared<std::vector<double>>(batch * pos * ps);
  std::vector<double> out(batch * out_ch * pos);
  std::vector<double> tmp(pos * out_ch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<double> cb(cols->data() + b * pos * ps, pos * ps);
    kernels::parallel::im2col(std::span(px->value).subspan(b * in, in), cb, geo);
    kernels::parallel::matmul(cb, pw->value, tmp, pos, ps, out_ch);
    double* ob = out.data() + b * out_ch * pos;
    for (std::size_t p = 0; p < pos; ++p)
      for (std::size_t o = 0; o < out_ch; ++o)
        ob[o * pos + p] = tmp[p * out_ch + o] + pb->value[o];
  }
  return make_result(
      "conv2d", {batch, out_ch * pos}, std::move(out), {px, pw, pb},
      [geo, batch, in, ps, out_ch, pos, cols](Node& self) {
        auto& xs = *self.parents[0];
        auto& ws = *self.parents[1];
        auto& bs = *self.parents[2];
        std::vector<double> gt(pos * out_ch), dcols(pos * ps);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = self.grad.data() + b * out_ch * pos;
          for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t p = 0; p < pos; ++p) gt[p * out_ch + o] = gb[o * pos + p];
          std::span<const double> cb(cols->data() + b * pos * ps, pos * ps);
          if (ws.requires_grad)
            kernels::parallel::matmul_at_b_acc(cb, gt, ws.grad_buffer(), pos, ps, out_ch);
          if (bs.requires_grad) {
            auto g = bs.grad_buffer();
            for (std::size_t p = 0; p < pos; ++p)
              for (std::size_t o = 0; o < out_ch; ++o) g[o] += gt[p * out_ch + o];
          }
          if (xs.requires_grad) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            kernels::parallel::matmul_a_bt_acc(gt, ws.value, dcols, pos, ps, out_ch);
            kernels::parallel::col2im_acc(dcols, xs.grad_buffer().subspan(b * in, in), geo);
          }
        }
      });
}

Tensor maxpool2x2(const Tensor& x, std::size_t channels, std::size_t height,
                  std::size_t width) {
  require_matrix("maxpool2x2", x);
  if (height % 2 || width % 2 || x.cols() != channels * height * width)
    throw ShapeError("maxpool2x2: bad geometry for input " + to_string(x.shape()));
  const std::size_t batch = x.rows();
  const std::size_t oh = height / 2, ow = width / 2;
  const std::size_t out_cols = channels * oh * ow;
  const auto& px = node_of(x);
  std::vector<double> out(batch * out_cols);
  std::vector<std::size_t> src(batch * out_cols);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const std::size_t base = b * x.cols() + (ch * height + 2 * y) * width + 2 * xo;
          std::size_t best = base;
          for (std::size_t off : {base + 1, base + width, base + width + 1})
            if (px->value[off] > px->value[best]) best = off;
          const std::size_t o = b * out_cols + (ch * oh + y) * ow + xo;
          out[o] = px->value[best];
          src[o] = best;
        }
  return make_result("maxpool2x2", {batch, out_cols}, std::move(out), {px},
                     [src = std::move(src)](Node& self) {
                       auto g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

}  // namespace acl
