#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acl/config.hpp"

namespace acl {

struct ResultRow {
  ModelKind model = ModelKind::standard;
  std::uint64_t seed = 0;
  AttackKind condition = AttackKind::none;
  double accuracy = 0.0;
  std::size_t epochs = 0;
  double wall_ms = 0.0;
};

// Loads, optionally subsamples and channel-replicates the configured dataset.
Dataset load_experiment_data(const DatasetSpec& spec);

/// Trains every (model, seed) pair, evaluates it on the test split under
/// each condition and writes into cfg.output:
///   results.csv                          one row per (model, seed, condition)
///   <model>_seed<s>.ckpt                 selected model
///   <model>_seed<s>_<phase>.csv          per-epoch metrics
///   <model>_seed<s>_codebook.csv         ACL models only
/// Runs fan out over cfg.workers threads; each run owns its state.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

// Columns: model, seed, condition, accuracy, epochs, wall_ms.
std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);

struct SummaryCell {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
  std::size_t n = 0;
};

struct Summary {
  std::vector<ModelKind> models;
  std::vector<AttackKind> conditions;
  std::map<std::pair<ModelKind, AttackKind>, SummaryCell> cells;

  std::optional<SummaryCell> cell(ModelKind m, AttackKind c) const;
};

Summary summarize(const std::vector<ResultRow>& rows);
// Model x condition table of mean +- std in percent; absent cells show "-".
std::string summary_text(const Summary& summary);
// One row per model; absent cells are left empty.
std::string summary_csv(const Summary& summary);

// Reads <dir>/results.csv, writes summary.csv and summary.txt next to it.
Summary report(const std::filesystem::path& dir);

}  // namespace acl
