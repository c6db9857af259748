#include "acl/config.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "acl/error.hpp"
#include "acl/textio.hpp"

namespace acl {

void ExperimentConfig::validate() const {
  if (models.empty()) throw ConfigError("models: at least one model is required");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (conditions.empty()) throw ConfigError("conditions: at least one condition is required");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  const bool tfc = std::find(models.begin(), models.end(), ModelKind::acl_tfc) != models.end();
  if (tfc && tfc_codebook.empty())
    throw ConfigError("acl-tfc needs a codebook source: set tfc.codebook = cfpc or a CSV path");
  if (tfc && tfc_codebook != "cfpc" && !std::filesystem::exists(tfc_codebook))
    throw ConfigError("tfc.codebook: no such file " + tfc_codebook);
  ratios.validate();
  train.validate();
  attack.validate();
  if (dataset.kind == DatasetKind::idx && (dataset.images.empty() || dataset.labels.empty()))
    throw ConfigError("dataset.kind = idx needs dataset.images and dataset.labels");
  if (dataset.kind == DatasetKind::csv && dataset.path.empty())
    throw ConfigError("dataset.kind = csv needs dataset.path");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(n) + ": expected 'key = value'");
    std::string key(trim(std::string_view(line).substr(0, eq)));
    std::string value(trim(std::string_view(line).substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(n) + ": empty key");
    if (!out.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(n) + ": key '" + key + "' given twice");
  }
  return out;
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw FormatError("expected a boolean, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& cell : split(v, ','))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  const std::filesystem::path p(v);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  auto& net = c.network;
  auto& tr = c.train;
  using Setter = std::function<void(const std::string&)>;
  const auto size = [](std::size_t& f) -> Setter { return [&f](auto& v) { f = parse_size(v); }; };
  const auto real = [](double& f) -> Setter { return [&f](auto& v) { f = parse_double(v); }; };
  const auto flag = [](bool& f) -> Setter { return [&f](auto& v) { f = parse_bool(v); }; };
  const auto seed = [](std::uint64_t& f) -> Setter {
    return [&f](auto& v) { f = parse_size(v); };
  };

  const std::map<std::string, Setter> setters{
      {"dataset.kind",
       [&](auto& v) {
         if (v == "blobs") c.dataset.kind = DatasetKind::blobs;
         else if (v == "idx") c.dataset.kind = DatasetKind::idx;
         else if (v == "csv") c.dataset.kind = DatasetKind::csv;
         else throw FormatError("expected blobs, idx or csv");
       }},
      {"dataset.classes", size(c.dataset.blobs.classes)},
      {"dataset.per_class", size(c.dataset.blobs.per_class)},
      {"dataset.dim", size(c.dataset.blobs.dim)},
      {"dataset.spread", real(c.dataset.blobs.spread)},
      {"dataset.seed", seed(c.dataset.blobs.seed)},
      {"dataset.images", [&](auto& v) { c.dataset.images = resolve(base_dir, v); }},
      {"dataset.labels", [&](auto& v) { c.dataset.labels = resolve(base_dir, v); }},
      {"dataset.path", [&](auto& v) { c.dataset.path = resolve(base_dir, v); }},
      {"dataset.subset", size(c.dataset.subset)},
      {"dataset.subset_seed", seed(c.dataset.subset_seed)},
      {"dataset.replicate_channels", flag(c.dataset.replicate_channels)},
      {"split.train", real(c.ratios.train)},
      {"split.test", real(c.ratios.test)},
      {"split.generation", real(c.ratios.generation)},
      {"split.validation", real(c.ratios.validation)},
      {"split.seed", seed(c.split_seed)},
      {"models",
       [&](auto& v) {
         for (auto& m : parse_list(v)) c.models.push_back(parse_model_kind(m));
       }},
      {"seeds",
       [&](auto& v) {
         for (auto& s : parse_list(v)) c.seeds.push_back(parse_size(s));
       }},
      {"conditions",
       [&](auto& v) {
         c.conditions.clear();
         for (auto& s : parse_list(v)) c.conditions.push_back(parse_attack_kind(s));
       }},
      {"network.extractor", [&](auto& v) { net.extractor = parse_extractor_kind(v); }},
      {"network.hidden",
       [&](auto& v) {
         net.hidden.clear();
         for (auto& s : parse_list(v)) net.hidden.push_back(parse_size(s));
       }},
      {"network.conv1_channels", size(net.conv1_channels)},
      {"network.conv2_channels", size(net.conv2_channels)},
      {"network.feature_dim", size(net.feature_dim)},
      {"network.code_length", size(net.code_length)},
      {"network.projection_dim", size(net.projection_dim)},
      {"network.projection_hidden", size(net.projection_hidden)},
      {"train.epochs_pretrain", size(tr.epochs_pretrain)},
      {"train.epochs_finetune", size(tr.epochs_finetune)},
      {"train.batch_size", size(tr.batch_size)},
      {"train.optimizer",
       [&](auto& v) {
         tr.pretrain_optimizer.kind = tr.finetune_optimizer.kind = parse_optimizer_kind(v);
       }},
      {"train.optimizer_pretrain",
       [&](auto& v) { tr.pretrain_optimizer.kind = parse_optimizer_kind(v); }},
      {"train.optimizer_finetune",
       [&](auto& v) { tr.finetune_optimizer.kind = parse_optimizer_kind(v); }},
      {"train.lr_pretrain", real(tr.pretrain_optimizer.learning_rate)},
      {"train.lr_finetune", real(tr.finetune_optimizer.learning_rate)},
      {"train.momentum",
       [&](auto& v) {
         tr.pretrain_optimizer.momentum = tr.finetune_optimizer.momentum = parse_double(v);
       }},
      {"loss.tau", real(tr.loss.tau)},
      {"loss.lambda", real(tr.loss.lambda_csl)},
      {"loss.hinge_margin", real(tr.loss.hinge_margin)},
      {"loss.rsl_denominator",
       [&](auto& v) {
         if (v == "classes") tr.loss.rsl_denominator = RslDenominator::classes_excluding_true;
         else if (v == "batch") tr.loss.rsl_denominator = RslDenominator::batch;
         else throw FormatError("expected classes or batch");
       }},
      {"loss.csl_pairs",
       [&](auto& v) {
         if (v == "unordered") tr.loss.csl_pairs = CslPairs::unordered;
         else if (v == "ordered") tr.loss.csl_pairs = CslPairs::ordered;
         else throw FormatError("expected unordered or ordered");
       }},
      {"augment.crop_padding", size(tr.augment.crop_padding)},
      {"augment.flip_prob", real(tr.augment.flip_prob)},
      {"augment.noise_sigma", real(tr.augment.noise_sigma)},
      {"augment.seed", seed(tr.augment.seed)},
      {"cfpc.refresh", flag(tr.cfpc_refresh)},
      {"cfpc.ema", flag(tr.cfpc_ema)},
      {"cfpc.ema_momentum", real(tr.ema_momentum)},
      {"cfpc.mcsm_weight", real(tr.mcsm_weight)},
      {"tfc.codebook",
       [&](auto& v) {
         c.tfc_codebook = v == "cfpc" || v.empty() ? v : resolve(base_dir, v).string();
       }},
      {"attack.epsilon", real(c.attack.epsilon)},
      {"attack.pgd_steps", size(c.attack.pgd_steps)},
      {"attack.pgd_alpha", real(c.attack.pgd_alpha)},
      {"attack.random_start", flag(c.attack.random_start)},
      {"attack.seed", seed(c.attack.seed)},
      {"eval.batch_size", size(c.eval_batch_size)},
      {"output", [&](auto& v) { c.output = resolve(base_dir, v); }},
      {"workers", size(c.workers)},
  };

  c.output = base_dir / "results";
  // std::map order would apply train.optimizer after its per-phase
  // overrides; the shared key goes first instead.
  auto entries = parse_key_values(text);
  std::vector<std::pair<std::string, std::string>> ordered;
  if (const auto it = entries.find("train.optimizer"); it != entries.end()) {
    ordered.emplace_back(*it);
    entries.erase(it);
  }
  ordered.insert(ordered.end(), entries.begin(), entries.end());
  for (const auto& [key, value] : ordered) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    } catch (const FormatError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace acl
