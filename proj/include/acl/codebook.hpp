#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

enum class CodebookSource { generated, loaded, fixed_binary };

std::string to_string(CodebookSource source);

/// K x n matrix of class codewords; row k is the codeword of class k.
///
/// Class ids are zero-based throughout the library. A codebook is immutable
/// once built and may be shared freely between threads.
class Codebook {
 public:
  Codebook(std::size_t classes, std::size_t length, std::vector<double> rows,
           CodebookSource source);

  std::size_t classes() const { return classes_; }
  std::size_t length() const { return length_; }
  CodebookSource source() const { return source_; }
  std::span<const double> rows() const { return rows_; }
  std::span<const double> row(std::size_t k) const;
  double at(std::size_t k, std::size_t j) const { return rows_[k * length_ + j]; }

  bool is_binary() const;
  // Constant (no-grad) K x n tensor of the rows.
  Tensor as_tensor() const;
  // FNV-1a over the raw row bits; equal books hash equal.
  std::uint64_t hash() const;

  bool operator==(const Codebook&) const = default;

 private:
  std::size_t classes_;
  std::size_t length_;
  std::vector<double> rows_;
  CodebookSource source_;
};

// Rows closer than this (max abs difference) count as identical.
inline constexpr double kDuplicateRowTolerance = 1e-9;

// Per-class mean of `codewords` (N x n) as a K x n tensor that stays on the
// graph of `codewords`. Every class must have at least one member.
Tensor class_means(const Tensor& codewords, std::span<const std::size_t> labels,
                   std::size_t classes);

// Average codeword of each class; rejects empty classes and duplicate rows.
Codebook generate_codebook(const Tensor& codewords, std::span<const std::size_t> labels,
                           std::size_t classes);

struct HammingDecision {
  std::size_t label = 0;
  std::size_t distance = 0;
  std::vector<std::size_t> distances;
};

// Nearest binary codeword by bit disagreements; ties go to the lowest id.
HammingDecision hamming_decode(std::span<const std::uint8_t> predicted, const Codebook& book);

struct CosineDecision {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

// Softmax over cosine similarities to each codeword; ties go to the lowest id.
CosineDecision cosine_decode(std::span<const double> predicted, const Codebook& book);

struct BinarizeRule {
  enum class Kind { column_median, threshold };
  Kind kind = Kind::column_median;
  double threshold = 0.5;
};

// Entry becomes 1 when strictly above the column median (or fixed threshold).
Codebook binarize(const Codebook& book, BinarizeRule rule = {});

struct SeparationReport {
  std::size_t min_pairwise_hamming = 0;
  double mean_pairwise_hamming = 0.0;
  double min_pairwise_cosine_distance = 0.0;
  double mean_pairwise_cosine_distance = 0.0;
  double max_pairwise_cosine = 0.0;
  // Mean |Pearson r| over column pairs; constant columns are left out.
  double mean_column_correlation = 0.0;
};

// Row and column separation statistics. Hamming figures use the book itself
// when binary, otherwise its column-median binarisation. Cosine figures skip
// pairs involving an all-zero word and are NaN when no pair remains.
SeparationReport separation_report(const Codebook& book);

void save_codebook(const Codebook& book, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

// CSV text form used by the files above: "K,n" then K comma-separated rows.
std::string codebook_to_csv(const Codebook& book);
Codebook codebook_from_csv(const std::string& text);

}  // namespace acl
