#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

enum class RslDenominator {
  classes_excluding_true,  // sum over codebook rows k != y_i
  batch,                   // sum over other codewords in the batch
};

enum class CslPairs {
  unordered,  // each column pair once
  ordered,    // both (j,k) and (k,j); exactly twice the unordered value
};

struct LossConfig {
  double tau = 0.5;
  double lambda_csl = 1.0;
  double hinge_margin = 0.5;
  RslDenominator rsl_denominator = RslDenominator::classes_excluding_true;
  CslPairs csl_pairs = CslPairs::unordered;

  void validate() const;
};

// Sum of cosine similarities between the columns of a (B x n) batch of
// codewords; each column is one base classifier's outputs over the batch.
Tensor column_separation_loss(const Tensor& codewords, CslPairs pairs = CslPairs::unordered);

// Partner table for a (2B x d) batch laid out as [view A rows; view B rows].
std::vector<std::size_t> paired_view_partners(std::size_t pairs);

// NT-Xent over 2B projections: every row is an anchor, its partner is the
// positive and the other 2B-1 rows form the denominator. Mean over anchors.
Tensor info_nce_loss(const Tensor& projections, std::span<const std::size_t> partner,
                     double tau);

inline constexpr std::ptrdiff_t kNoPositive = -1;

// For each sample, a uniformly drawn other batch member of the same class,
// or kNoPositive when it has none.
std::vector<std::ptrdiff_t> choose_positives(std::span<const std::size_t> labels,
                                             std::mt19937_64& rng);

// Contrastive row separation against class codewords. Anchors without a
// positive are skipped; an all-skipped batch yields a constant zero.
Tensor row_separation_loss(const Tensor& predicted, std::span<const std::size_t> labels,
                           std::span<const std::ptrdiff_t> positives, const Tensor& book,
                           const LossConfig& cfg);

// Cosine similarity of every codeword to every codebook row (B x K).
Tensor codeword_scores(const Tensor& predicted, const Tensor& book);
// Softmax of codeword_scores: the ECOC decoder's class probabilities.
Tensor decoder_probabilities(const Tensor& predicted, const Tensor& book);

// Mean of -log p[i, y_i] over rows of a probability matrix.
Tensor cross_entropy_loss(const Tensor& probabilities, std::span<const std::size_t> labels);
// Same loss computed stably from unnormalised scores.
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const std::size_t> labels);

// Mean of max(margin - cos(c_i, row_i), 0).
Tensor hinge_codeword_loss(const Tensor& predicted, const Tensor& true_rows,
                           double margin = 0.5);

// Largest cosine similarity between two distinct codebook rows.
Tensor mcsm_loss(const Tensor& book);

Tensor pretrain_loss(const Tensor& info_nce, const Tensor& column_separation, double lambda);

enum class FinetuneVariant { pf, cfpc, tfc };

struct FinetuneParts {
  Tensor cross_entropy;
  Tensor hinge;
  Tensor row_separation;
  Tensor mcsm;  // required for cfpc; logged only for tfc
};

// pf and tfc: ce + hinge + rsl. cfpc adds the mcsm term.
Tensor finetune_loss(const FinetuneParts& parts, FinetuneVariant variant);

}  // namespace acl
