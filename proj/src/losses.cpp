#include "acl/losses.hpp"

#include <cmath>

#include "acl/error.hpp"

namespace acl {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("loss.tau must be positive");
  if (!(lambda_csl >= 0.0)) throw ConfigError("loss.lambda must be non-negative");
}

Tensor column_separation_loss(const Tensor& codewords, CslPairs pairs) {
  if (codewords.rows() < 2) throw ShapeError("column separation needs a batch of at least 2");
  const std::size_t n = codewords.cols();
  const Tensor columns = normalize_rows(transpose(codewords));
  const Tensor sims = matmul(columns, transpose(columns));
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k) mask[j * n + k] = 1;
  const Tensor upper = sum(apply_mask(sims, mask));
  // sims is symmetric bit for bit, so the ordered sum is exactly twice this.
  return pairs == CslPairs::unordered ? upper : scale(upper, 2.0);
}

std::vector<std::size_t> paired_view_partners(std::size_t pairs) {
  std::vector<std::size_t> partner(2 * pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    partner[i] = i + pairs;
    partner[i + pairs] = i;
  }
  return partner;
}

Tensor info_nce_loss(const Tensor& projections, std::span<const std::size_t> partner,
                     double tau) {
  const std::size_t m = projections.rows();
  if (m < 4 || m % 2) throw ShapeError("info_nce needs an even batch of at least 4 views");
  if (partner.size() != m) throw ShapeError("info_nce: one partner per row required");
  for (std::size_t i = 0; i < m; ++i)
    if (partner[i] >= m || partner[i] == i || partner[partner[i]] != i)
      throw ShapeError("info_nce: partner table is not a pairing");
  const Tensor logits = scale(cosine_matrix(projections, projections), 1.0 / tau);
  std::vector<std::uint8_t> others(m * m, 1);
  for (std::size_t i = 0; i < m; ++i) others[i * m + i] = 0;
  return mean(logsumexp_rows(logits, others) - pick(logits, partner));
}

std::vector<std::ptrdiff_t> choose_positives(std::span<const std::size_t> labels,
                                             std::mt19937_64& rng) {
  std::vector<std::ptrdiff_t> out(labels.size(), kNoPositive);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (j != i && labels[j] == labels[i]) candidates.push_back(j);
    if (candidates.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_one(0, candidates.size() - 1);
    out[i] = static_cast<std::ptrdiff_t>(candidates[pick_one(rng)]);
  }
  return out;
}

Tensor row_separation_loss(const Tensor& predicted, std::span<const std::size_t> labels,
                           std::span<const std::ptrdiff_t> positives, const Tensor& book,
                           const LossConfig& cfg) {
  const std::size_t b = predicted.rows(), k = book.rows();
  if (labels.size() != b || positives.size() != b)
    throw ShapeError("row_separation_loss: labels/positives do not match the batch");
  if (book.cols() != predicted.cols())
    throw ShapeError("row_separation_loss: codeword length differs from codebook");

  std::vector<std::size_t> anchors, partners;
  for (std::size_t i = 0; i < b; ++i) {
    if (positives[i] == kNoPositive) continue;
    anchors.push_back(i);
    partners.push_back(static_cast<std::size_t>(positives[i]));
  }
  if (anchors.empty()) return Tensor::scalar(0.0);

  const Tensor anchor = index_rows(predicted, anchors);
  const Tensor positive = index_rows(predicted, partners);
  const Tensor numerator =
      scale(sum_rows(normalize_rows(anchor) * normalize_rows(positive)), 1.0 / cfg.tau);

  const std::size_t a = anchors.size();
  Tensor denominator;
  if (cfg.rsl_denominator == RslDenominator::classes_excluding_true) {
    if (k < 2) throw ShapeError("row_separation_loss needs at least two classes");
    std::vector<std::uint8_t> mask(a * k, 1);
    for (std::size_t r = 0; r < a; ++r) {
      const std::size_t y = labels[anchors[r]];
      if (y >= k) throw ShapeError("row_separation_loss: label out of range");
      mask[r * k + y] = 0;
    }
    denominator = logsumexp_rows(scale(cosine_matrix(anchor, book), 1.0 / cfg.tau), mask);
  } else {
    std::vector<std::uint8_t> mask(a * b, 1);
    for (std::size_t r = 0; r < a; ++r) mask[r * b + anchors[r]] = 0;
    denominator =
        logsumexp_rows(scale(cosine_matrix(anchor, predicted), 1.0 / cfg.tau), mask);
  }
  return mean(denominator - numerator);
}

Tensor codeword_scores(const Tensor& predicted, const Tensor& book) {
  return cosine_matrix(predicted, book);
}

Tensor decoder_probabilities(const Tensor& predicted, const Tensor& book) {
  return softmax_rows(codeword_scores(predicted, book));
}

Tensor cross_entropy_loss(const Tensor& probabilities, std::span<const std::size_t> labels) {
  return mean(-log(pick(probabilities, labels)));
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  return mean(logsumexp_rows(logits) - pick(logits, labels));
}

Tensor hinge_codeword_loss(const Tensor& predicted, const Tensor& true_rows, double margin) {
  if (predicted.shape() != true_rows.shape())
    throw ShapeError("hinge_codeword_loss: shape mismatch");
  const Tensor sims = sum_rows(normalize_rows(predicted) * normalize_rows(true_rows));
  return mean(relu(add_scalar(-sims, margin)));
}

Tensor mcsm_loss(const Tensor& book) {
  const std::size_t k = book.rows();
  if (k < 2) throw ShapeError("mcsm_loss needs at least two codewords");
  std::vector<std::uint8_t> off_diagonal(k * k, 1);
  for (std::size_t i = 0; i < k; ++i) off_diagonal[i * k + i] = 0;
  return masked_max(cosine_matrix(book, book), off_diagonal);
}

Tensor pretrain_loss(const Tensor& info_nce, const Tensor& column_separation, double lambda) {
  return info_nce + scale(column_separation, lambda);
}

Tensor finetune_loss(const FinetuneParts& parts, FinetuneVariant variant) {
  Tensor total = parts.cross_entropy + parts.hinge + parts.row_separation;
  if (variant == FinetuneVariant::cfpc) {
    if (!parts.mcsm.defined()) throw Error("cfpc fine-tuning needs the mcsm term");
    total = total + parts.mcsm;
  }
  return total;
}

}  // namespace acl
