#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acl/tensor.hpp"

namespace acl {

// Either a flat feature vector (features > 0) or a C x H x W image.
struct SampleShape {
  std::size_t features = 0;
  std::size_t channels = 0, height = 0, width = 0;

  static SampleShape vector(std::size_t d) { return {d, 0, 0, 0}; }
  static SampleShape image(std::size_t c, std::size_t h, std::size_t w) { return {0, c, h, w}; }
  bool is_image() const { return features == 0; }
  std::size_t size() const { return is_image() ? channels * height * width : features; }
  bool operator==(const SampleShape&) const = default;
};

std::string to_string(const SampleShape& shape);

/// Row-major samples in [0,1] with zero-based class labels.
///
/// `origin` records each sample's index in the dataset it was cut from, so
/// splits can be audited against their source.
struct Dataset {
  SampleShape shape;
  std::size_t classes = 0;
  std::vector<double> inputs;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> origin;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const;
  // Throws on out-of-range labels, inputs outside [0,1] or size mismatches.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Constant (rows x features) tensor of the chosen samples.
  Tensor batch(std::span<const std::size_t> indices) const;
  Tensor all_inputs() const;
  std::vector<std::size_t> class_counts() const;
};

struct SplitRatios {
  double train = 0.0, test = 0.0, generation = 0.0, validation = 0.0;
  void validate() const;
};

struct Splits {
  Dataset train, test, generation, validation;
};

// Target split sizes for n samples: floors, then the leftover samples go to
// the largest fractional parts (ties to the earlier split).
std::vector<std::size_t> split_sizes(std::size_t n, const SplitRatios& ratios);

// Stratified, seed-deterministic four-way split. Global sizes follow
// split_sizes exactly and each class's share of every split is within one
// sample of its proportional value.
Splits split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

// Stratified subsample of n samples.
Dataset take_stratified(const Dataset& data, std::size_t n, std::uint64_t seed);

struct AugmentConfig {
  std::size_t crop_padding = 0;  // images only
  double flip_prob = 0.0;        // images only, horizontal
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Two independent views of x. The draw depends only on (cfg.seed,
// call_index), so a call can be replayed exactly.
std::pair<std::vector<double>, std::vector<double>> augment_pair(std::span<const double> x,
                                                                 const SampleShape& shape,
                                                                 const AugmentConfig& cfg,
                                                                 std::uint64_t call_index);

// (2B x features) tensor laid out [first views; second views]; sample b
// uses call index first_call + b.
Tensor augment_batch(const Dataset& data, std::span<const std::size_t> indices,
                     const AugmentConfig& cfg, std::uint64_t first_call);

// 1-channel images become 3 identical channels; 3-channel data passes through.
std::vector<double> replicate_channels(std::span<const double> x, const SampleShape& shape);
Dataset replicate_channels(const Dataset& data);

struct BlobsConfig {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 8;
  double spread = 0.05;
  std::uint64_t seed = 0;
};

// Gaussian clusters around centres drawn in [0.1, 0.9]^d with pairwise
// distance at least 4 * spread; samples are clipped to [0,1].
Dataset make_blobs(const BlobsConfig& cfg);
std::vector<std::vector<double>> blob_centers(const BlobsConfig& cfg);

// IDX (big-endian) image and label files; pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx(const std::string& images, const std::string& labels);

// Header "d" or "C,H,W", then one sample per row with the label last.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& text);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

// SplitMix64 finaliser, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace acl
