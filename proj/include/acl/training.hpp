#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "acl/codebook.hpp"
#include "acl/data.hpp"
#include "acl/error.hpp"
#include "acl/losses.hpp"
#include "acl/network.hpp"
#include "acl/optim.hpp"

namespace acl {

enum class CodebookRefresh {
  none,                 // baselines
  once_after_pretrain,  // acl-pf
  every_batch,          // acl-cfpc
  fixed_external,       // acl-tfc
};

CodebookRefresh refresh_mode(ModelKind kind);

struct TrainConfig {
  std::size_t epochs_pretrain = 10;
  std::size_t epochs_finetune = 20;
  std::size_t batch_size = 32;
  OptimizerConfig pretrain_optimizer{OptimizerKind::sgd_momentum, 0.05};
  OptimizerConfig finetune_optimizer{OptimizerKind::sgd_momentum, 0.01};
  LossConfig loss;
  AugmentConfig augment;
  // Co-finetuning knobs. With refresh off the first generated codebook is
  // kept; ema blends each regenerated book into the running one per class.
  bool cfpc_refresh = true;
  bool cfpc_ema = false;
  double ema_momentum = 0.9;
  double mcsm_weight = 1.0;
  std::uint64_t seed = 0;
  // When set, pretraining writes a checkpoint here after every epoch.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

// A non-finite loss or gradient during training.
struct DivergenceError : NumericError {
  DivergenceError(std::string phase, std::size_t epoch, std::size_t step,
                  const std::string& cause);
  std::string phase;
  std::size_t epoch, step;
};

struct StepRecord {
  std::size_t epoch = 0, step = 0;
  std::vector<double> components;
  double total = 0.0;
  std::uint64_t codebook_hash = 0;  // 0 when the phase has no codebook
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<double> components;  // means over the epoch's steps
  double total = 0.0;
  double val_accuracy = 0.0;
  double wall_ms = 0.0;
};

struct PhaseReport {
  std::string phase;
  std::vector<std::string> component_names;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  // Index into `epochs` of the highest validation accuracy; ties go to the
  // later epoch.
  std::size_t best_epoch = 0;

  bool empty() const { return epochs.empty(); }
  std::vector<double> component_trace(const std::string& name) const;
  std::vector<double> val_trace() const;
};

struct TrainReport {
  ModelKind model = ModelKind::standard;
  PhaseReport pretrain;
  PhaseReport finetune;
  // Codebook of the selected (best-validation) model.
  std::optional<Codebook> codebook;
  // Co-finetuning only: the book before the first step and after the last.
  std::optional<Codebook> initial_codebook, last_codebook;
  std::uint64_t initial_backbone_checksum = 0;
  double wall_ms = 0.0;
};

struct PretrainResult {
  NetworkParams params;
  PhaseReport report;
};

struct TrainResult {
  Classifier model;
  TrainReport report;
};

// Contrastive pretraining of f, E and g on augmented pairs from the train
// split. Validation accuracy decodes against a codebook generated from the
// generation split.
PretrainResult pretrain(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data);

TrainResult finetune_pf(const NetworkParams& pretrained, const TrainConfig& cfg,
                        const Splits& data);
TrainResult finetune_cfpc(const NetworkParams& pretrained, const TrainConfig& cfg,
                          const Splits& data);
TrainResult train_tfc(const Codebook& fixed_book, const NetworkConfig& net,
                      const TrainConfig& cfg, const Splits& data);
TrainResult train_standard(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data);
TrainResult train_simclr(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data);

// Full pipeline for one model, pretraining included where it applies.
// acl-tfc needs `tfc_book`.
TrainResult train_model(ModelKind kind, const NetworkConfig& net, const TrainConfig& cfg,
                        const Splits& data, const Codebook* tfc_book = nullptr);

double accuracy(const Classifier& model, const Dataset& data);

// Columns: epoch, one per component, total, val_accuracy, wall_ms.
std::string metrics_csv(const PhaseReport& phase);
void write_metrics_csv(const std::filesystem::path& path, const PhaseReport& phase);

}  // namespace acl
