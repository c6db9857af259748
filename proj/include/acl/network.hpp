#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acl/codebook.hpp"
#include "acl/tensor.hpp"

namespace acl {

enum class ExtractorKind {
  mlp,   // dense + relu layers over flat vectors
  conv,  // conv3x3-relu, conv3x3-relu, 2x2 max pool, dense-relu
};

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& text);

struct NetworkConfig {
  ExtractorKind extractor = ExtractorKind::mlp;
  // mlp input width; ignored for conv.
  std::size_t input_dim = 0;
  // conv input geometry; ignored for mlp. Height and width must be even.
  std::size_t channels = 0, height = 0, width = 0;
  // mlp hidden widths before the feature layer.
  std::vector<std::size_t> hidden = {64};
  std::size_t conv1_channels = 8, conv2_channels = 8;
  std::size_t feature_dim = 64;      // d_h
  std::size_t code_length = 32;      // n
  std::size_t projection_dim = 0;    // d_z; 0 means n / 2
  std::size_t projection_hidden = 0;  // 0 means n
  std::size_t classes = 0;           // K, for the baseline head

  void validate() const;
  std::size_t input_size() const;
  std::size_t effective_projection_dim() const;
  std::size_t effective_projection_hidden() const;

  // Flat key/value form, sorted by key; also what the checkpoint hash covers.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static NetworkConfig from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
  std::uint64_t hash() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Weight is (in x out) so a forward step is x * W + b.
struct Dense {
  Tensor weight;
  Tensor bias;
};

struct NetworkParams {
  NetworkConfig config;
  // conv weights are (patch x out_channels).
  std::vector<Dense> conv;
  // mlp hidden layers plus the final feature layer; for conv, only the latter.
  std::vector<Dense> extractor;
  Dense encoder;
  Dense projection1, projection2;
  Dense head;

  // Every parameter with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  // Tensors of f and E only.
  std::vector<Tensor> backbone() const;
};

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

// Deep copy with fresh leaves.
NetworkParams clone(const NetworkParams& params, bool requires_grad = true);

// Fresh parameters for `seed` with f and E copied from `pretrained`.
NetworkParams transfer_pretrained(const NetworkParams& pretrained, std::uint64_t seed);

// FNV-1a over the values of the given tensors, in order.
std::uint64_t checksum(const std::vector<Tensor>& tensors);

struct ForwardOutputs {
  Tensor h;  // features, B x d_h
  Tensor c;  // codewords in (-1, 1), B x n
  Tensor z;  // projections, pretraining only
  Tensor p;  // decoder probabilities, fine-tuning only
};

Tensor extract_features(const NetworkParams& params, const Tensor& x);
Tensor encode(const NetworkParams& params, const Tensor& h);
Tensor project(const NetworkParams& params, const Tensor& c);

// x rows are flattened inputs in [0,1].
ForwardOutputs forward_pretrain(const NetworkParams& params, const Tensor& x);
// `book` is normally a constant; a book with a graph is differentiated too.
ForwardOutputs forward_finetune(const NetworkParams& params, const Tensor& x, const Tensor& book);
ForwardOutputs forward_finetune(const NetworkParams& params, const Tensor& x,
                                const Codebook& book);
Tensor forward_baseline(const NetworkParams& params, const Tensor& x);

enum class ModelKind { standard, simclr, acl_pf, acl_cfpc, acl_tfc };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);
// ACL models decode against a codebook; the baselines use the linear head.
bool uses_codebook(ModelKind kind);

/// A trained K-way classifier as seen by evaluation and the attacks.
///
/// Scores are cosine similarities to the codebook rows for ACL models and
/// head logits for the baselines; both predict by argmax and both are
/// attacked through cross-entropy over softmax(scores).
struct Classifier {
  ModelKind kind = ModelKind::standard;
  NetworkParams params;
  std::optional<Codebook> book;

  Tensor scores(const Tensor& x) const;
  std::vector<std::size_t> predict(const Tensor& x) const;
  // Same model with gradient tracking switched off on the parameters.
  Classifier frozen() const;
};

std::size_t argmax_row(std::span<const double> row);

struct Checkpoint {
  ModelKind kind;
  NetworkParams params;
  std::optional<Codebook> book;

  Classifier classifier() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint whose network config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);

}  // namespace acl
