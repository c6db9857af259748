#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "acl/kernels.hpp"

namespace acl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the define-by-run graph. Interior nodes keep their parents
// alive until the result goes out of scope.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Handle to a float64 array that records the operations producing it.
///
/// Copies share the underlying node (like a reference). A graph is built
/// fresh on every forward pass and is confined to the thread that built it;
/// `detach()` yields a graph-free copy that may cross threads.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // Row/column counts of a 2-D tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable storage; only leaves may be written (optimizer updates).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Gradient buffer; all zeros when backward has not reached this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;
  // Reverse sweep from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise ----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Multiplies by a constant 0/1 mask without recording the mask.
Tensor apply_mask(const Tensor& a, std::span<const std::uint8_t> mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---- reductions -----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2_norm(const Tensor& a);
// Per-row sums of a 2-D tensor, shape (rows).
Tensor sum_rows(const Tensor& a);
// Row-wise log-sum-exp over the entries whose mask byte is nonzero; the
// empty mask means all entries. Every row must keep at least one entry.
Tensor logsumexp_rows(const Tensor& a, std::span<const std::uint8_t> mask = {});
// Maximum over masked entries; the gradient goes to the first maximiser in
// row-major order.
Tensor masked_max(const Tensor& a, std::span<const std::uint8_t> mask = {});

// ---- linear algebra and layout --------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x (rows x n) + bias (n), broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
// Gathers rows by index (repeats allowed).
Tensor index_rows(const Tensor& a, std::span<const std::size_t> rows);
// out[i] = a[i, cols[i]]
Tensor pick(const Tensor& a, std::span<const std::size_t> cols);

// ---- normalisation and similarity -----------------------------------------
// Divides every row by its L2 norm; zero rows are a DomainError.
Tensor normalize_rows(const Tensor& a);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// (rows(a) x rows(b)) matrix of row-pair cosine similarities.
Tensor cosine_matrix(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& logits);
Tensor softmax_rows(const Tensor& logits);

// ---- images (rows are flattened C,H,W samples) ----------------------------
// weights: (patch_size x out_channels), bias: (out_channels).
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias,
              const kernels::ConvGeometry& geometry);
// 2x2 max pooling with stride 2; H and W must be even.
Tensor maxpool2x2(const Tensor& x, std::size_t channels, std::size_t height,
                  std::size_t width);

}  // namespace acl
