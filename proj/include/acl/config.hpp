#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "acl/attacks.hpp"
#include "acl/data.hpp"
#include "acl/network.hpp"
#include "acl/training.hpp"

namespace acl {

enum class DatasetKind { blobs, idx, csv };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::blobs;
  BlobsConfig blobs;
  std::filesystem::path images, labels;  // idx
  std::filesystem::path path;            // csv
  std::size_t subset = 0;                // 0 keeps every sample
  std::uint64_t subset_seed = 0;
  bool replicate_channels = false;
};

/// Everything one `run` needs. Relative paths are resolved against the
/// directory of the config file.
struct ExperimentConfig {
  DatasetSpec dataset;
  SplitRatios ratios{0.5, 0.2, 0.15, 0.15};
  std::uint64_t split_seed = 0;
  std::vector<ModelKind> models;
  std::vector<std::uint64_t> seeds;
  // Dataset-dependent fields (input size, classes) are filled in at run time.
  NetworkConfig network;
  TrainConfig train;
  AttackConfig attack;
  std::vector<AttackKind> conditions{AttackKind::none, AttackKind::fgsm, AttackKind::pgd};
  // "cfpc" trains acl-cfpc first and reuses its codebook; anything else is a
  // codebook CSV path. Empty means unset.
  std::string tfc_codebook;
  std::size_t eval_batch_size = 256;
  std::filesystem::path output = "results";
  std::size_t workers = 1;

  // Cross-field checks; a ConfigError here means nothing has been trained.
  void validate() const;
};

// Parses `key = value` lines; '#' starts a comment. Unknown keys, repeated
// keys and malformed values are ConfigErrors naming the line.
ExperimentConfig parse_config(const std::string& text,
                              const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

// Splits a `key = value` file into an ordered map, for tools that only need
// a few keys.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace acl
