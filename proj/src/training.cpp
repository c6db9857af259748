#include "acl/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "acl/textio.hpp"

namespace acl {

CodebookRefresh refresh_mode(ModelKind kind) {
  switch (kind) {
    case ModelKind::acl_pf: return CodebookRefresh::once_after_pretrain;
    case ModelKind::acl_cfpc: return CodebookRefresh::every_batch;
    case ModelKind::acl_tfc: return CodebookRefresh::fixed_external;
    default: return CodebookRefresh::none;
  }
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (epochs_finetune == 0) throw ConfigError("train.epochs_finetune must be positive");
  pretrain_optimizer.validate();
  finetune_optimizer.validate();
  loss.validate();
  augment.validate();
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0))
    throw ConfigError("cfpc.ema_momentum must lie in [0, 1)");
  if (!(mcsm_weight >= 0.0)) throw ConfigError("cfpc.mcsm_weight must be non-negative");
}

DivergenceError::DivergenceError(std::string phase_, std::size_t epoch_, std::size_t step_,
                                 const std::string& cause)
    : NumericError(phase_ + " diverged at epoch " + std::to_string(epoch_) + ", step " +
                   std::to_string(step_) + ": " + cause),
      phase(std::move(phase_)),
      epoch(epoch_),
      step(step_) {}

std::vector<double> PhaseReport::component_trace(const std::string& name) const {
  const auto it = std::find(component_names.begin(), component_names.end(), name);
  if (it == component_names.end()) throw Error("phase " + phase + " has no component " + name);
  const std::size_t j = static_cast<std::size_t>(it - component_names.begin());
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.components[j]);
  return out;
}

std::vector<double> PhaseReport::val_trace() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.val_accuracy);
  return out;
}

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.size() == 0) throw ShapeError("accuracy of an empty dataset");
  constexpr std::size_t chunk = 512;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.resize(std::min(chunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = model.predict(data.batch(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct StepLoss {
  std::vector<Tensor> parts;  // summed in order to form the step's loss
  std::uint64_t codebook_hash = 0;
};

// Minibatch loop shared by every phase. `step` builds the loss parts for one
// batch; `end_epoch` returns the validation accuracy after an epoch.
template <typename StepFn, typename EndFn>
PhaseReport run_phase(std::string phase, std::vector<std::string> names, std::size_t epochs,
                      std::size_t train_size, std::size_t batch_size, std::size_t min_batch,
                      std::uint64_t shuffle_seed, Optimizer& optimizer, StepFn&& step,
                      EndFn&& end_epoch) {
  PhaseReport report;
  report.phase = std::move(phase);
  report.component_names = std::move(names);
  const std::size_t parts = report.component_names.size();
  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto started = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = e;
    record.components.assign(parts, 0.0);
    std::size_t steps = 0;
    for (std::size_t start = 0; start < train_size; start += batch_size) {
      const std::size_t end = std::min(train_size, start + batch_size);
      if (end - start < min_batch) continue;
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      StepRecord s;
      s.epoch = e;
      s.step = ++steps;
      optimizer.zero_grad();
      try {
        StepLoss loss = step(batch);
        Tensor total = loss.parts.at(0);
        for (std::size_t i = 1; i < loss.parts.size(); ++i) total = total + loss.parts[i];
        for (const auto& p : loss.parts) s.components.push_back(p.item());
        s.total = total.item();
        s.codebook_hash = loss.codebook_hash;
        total.backward();
      } catch (const NumericError& err) {
        throw DivergenceError(report.phase, e, s.step, err.what());
      }
      optimizer.step();
      for (std::size_t i = 0; i < parts; ++i) record.components[i] += s.components[i];
      record.total += s.total;
      report.steps.push_back(std::move(s));
    }
    if (steps == 0)
      throw ConfigError(report.phase + ": training split is smaller than one usable batch");
    for (auto& c : record.components) c /= static_cast<double>(steps);
    record.total /= static_cast<double>(steps);
    record.val_accuracy = end_epoch(e);
    record.wall_ms = elapsed_ms(started);
    report.epochs.push_back(std::move(record));
  }
  for (std::size_t i = 1; i < report.epochs.size(); ++i)
    if (report.epochs[i].val_accuracy >= report.epochs[report.best_epoch].val_accuracy)
      report.best_epoch = i;
  return report;
}

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<Tensor> extractor_and_head(const NetworkParams& p) {
  std::vector<Tensor> out;
  for (const auto& d : p.conv) out.insert(out.end(), {d.weight, d.bias});
  for (const auto& d : p.extractor) out.insert(out.end(), {d.weight, d.bias});
  out.insert(out.end(), {p.head.weight, p.head.bias});
  return out;
}

Tensor codewords(const NetworkParams& p, const Tensor& x) {
  return encode(p, extract_features(p, x));
}

Codebook to_codebook(const Tensor& book) {
  return Codebook(book.rows(), book.cols(),
                  std::vector<double>(book.values().begin(), book.values().end()),
                  CodebookSource::generated);
}

Codebook generation_codebook(const NetworkParams& p, const Dataset& generation) {
  NoGradGuard guard;
  return generate_codebook(codewords(p, generation.all_inputs()), generation.labels,
                           generation.classes);
}

Codebook blend(const Codebook& running, const Codebook& fresh, double momentum) {
  std::vector<double> rows(running.rows().begin(), running.rows().end());
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i] = momentum * rows[i] + (1.0 - momentum) * fresh.rows()[i];
  return Codebook(running.classes(), running.length(), std::move(rows),
                  CodebookSource::generated);
}

void check_splits(const Splits& data) {
  data.train.validate();
  data.validation.validate();
  if (data.train.size() == 0 || data.validation.size() == 0)
    throw ConfigError("train and validation splits must be non-empty");
}

PretrainResult pretrain_for(ModelKind owner, const NetworkConfig& net, const TrainConfig& cfg,
                            const Splits& data) {
  cfg.validate();
  check_splits(data);
  PretrainResult result;
  result.params = init_params(net, mix_seed(cfg.seed, 1));
  auto& params = result.params;
  Optimizer opt(concat(params.backbone(), {params.projection1.weight, params.projection1.bias,
                                           params.projection2.weight, params.projection2.bias}),
                cfg.pretrain_optimizer);
  AugmentConfig aug = cfg.augment;
  aug.seed = mix_seed(mix_seed(cfg.seed, 5), cfg.augment.seed);
  std::uint64_t calls = 0;
  const double lambda = cfg.loss.lambda_csl;

  auto step = [&](std::span<const std::size_t> batch) {
    const Tensor x = augment_batch(data.train, batch, aug, calls);
    calls += batch.size();
    const auto out = forward_pretrain(params, x);
    const auto partner = paired_view_partners(batch.size());
    Tensor nce = info_nce_loss(out.z, partner, cfg.loss.tau);
    Tensor csl = scale(column_separation_loss(out.c, cfg.loss.csl_pairs), lambda);
    return StepLoss{{nce, csl}};
  };
  auto end_epoch = [&](std::size_t epoch) {
    if (!cfg.checkpoint_dir.empty())
      save_checkpoint(cfg.checkpoint_dir / ("pretrain_epoch" + std::to_string(epoch) + ".ckpt"),
                      {owner, params, std::nullopt});
    if (data.generation.size() == 0) return 0.0;
    // A collapsed encoder yields duplicate rows; that should show up as poor
    // accuracy here rather than abort pretraining.
    NoGradGuard guard;
    const Tensor means = class_means(codewords(params, data.generation.all_inputs()),
                                     data.generation.labels, data.generation.classes);
    return accuracy({owner, params, to_codebook(means)}, data.validation);
  };
  result.report = run_phase("pretrain", {"info_nce", "column_separation"}, cfg.epochs_pretrain,
                            data.train.size(), cfg.batch_size, 2, mix_seed(cfg.seed, 3), opt,
                            step, end_epoch);
  return result;
}

// Fine-tuning against codebook targets, shared by pf, cfpc and tfc.
TrainResult finetune_codebook(ModelKind kind, NetworkParams params, const TrainConfig& cfg,
                              const Splits& data, std::optional<Codebook> fixed) {
  cfg.validate();
  check_splits(data);
  const bool cfpc = kind == ModelKind::acl_cfpc;
  const Dataset& gen = data.generation;
  if (kind != ModelKind::acl_tfc && gen.size() == 0)
    throw ConfigError("codebook generation needs a non-empty generation split");
  const std::size_t k = data.train.classes;

  TrainResult result;
  result.report.model = kind;
  result.report.initial_backbone_checksum = checksum(params.backbone());
  Optimizer opt(params.backbone(), cfg.finetune_optimizer);
  Codebook target = fixed ? *fixed : generation_codebook(params, gen);
  if (target.classes() != k || target.length() != params.config.code_length)
    throw ShapeError("codebook is " + std::to_string(target.classes()) + "x" +
                     std::to_string(target.length()) + ", model needs " + std::to_string(k) +
                     "x" + std::to_string(params.config.code_length));
  if (cfpc) result.report.initial_codebook = target;
  const Tensor gen_inputs = gen.size() ? gen.all_inputs() : Tensor();
  std::mt19937_64 positive_rng(mix_seed(cfg.seed, 4));
  const double w = cfg.mcsm_weight;

  // The book the next step would train against, for the current weights.
  auto current_book = [&]() {
    if (!cfpc || !cfg.cfpc_refresh) return target;
    const Codebook fresh = generation_codebook(params, gen);
    return cfg.cfpc_ema ? blend(target, fresh, cfg.ema_momentum) : fresh;
  };

  auto step = [&](std::span<const std::size_t> batch) {
    std::vector<std::size_t> y;
    for (auto i : batch) y.push_back(data.train.labels[i]);
    const Tensor x = data.train.batch(batch);

    // Co-finetuning regenerates the class means over the generation split.
    // They are targets, so no graph is kept and the mcsm term is a logged
    // constant with zero gradient.
    Tensor live;
    if (cfpc && (cfg.cfpc_refresh || w > 0.0)) {
      {
        NoGradGuard guard;
        live = class_means(codewords(params, gen_inputs), gen.labels, k);
      }
      if (cfg.cfpc_refresh) {
        const Codebook fresh = to_codebook(live);
        target = cfg.cfpc_ema ? blend(target, fresh, cfg.ema_momentum) : fresh;
      }
    }
    const Tensor book = target.as_tensor();
    const Tensor c = codewords(params, x);
    const auto positives = choose_positives(y, positive_rng);
    StepLoss loss;
    loss.parts.push_back(cross_entropy_loss(decoder_probabilities(c, book), y));
    loss.parts.push_back(hinge_codeword_loss(c, index_rows(book, y), cfg.loss.hinge_margin));
    loss.parts.push_back(row_separation_loss(c, y, positives, book, cfg.loss));
    if (cfpc) loss.parts.push_back(w > 0.0 ? scale(mcsm_loss(live), w) : Tensor::scalar(0.0));
    loss.codebook_hash = target.hash();
    return loss;
  };

  double best = -1.0;
  auto end_epoch = [&](std::size_t) {
    const Codebook book = current_book();
    const double acc = accuracy({kind, params, book}, data.validation);
    if (acc >= best) {
      best = acc;
      result.model = {kind, clone(params), book};
    }
    if (cfpc) result.report.last_codebook = book;
    return acc;
  };

  std::vector<std::string> names{"cross_entropy", "hinge", "row_separation"};
  if (cfpc) names.push_back("mcsm");
  const auto started = Clock::now();
  result.report.finetune = run_phase(cfpc ? "finetune_cfpc"
                                     : kind == ModelKind::acl_pf ? "finetune_pf"
                                                                 : "train_tfc",
                                     names, cfg.epochs_finetune, data.train.size(),
                                     cfg.batch_size, 1, mix_seed(cfg.seed, 6), opt, step,
                                     end_epoch);
  result.report.wall_ms = elapsed_ms(started);
  result.report.codebook = result.model.book;
  return result;
}

// Supervised cross-entropy on the linear head, for both baselines.
TrainResult finetune_head(ModelKind kind, NetworkParams params, const TrainConfig& cfg,
                          const Splits& data) {
  cfg.validate();
  check_splits(data);
  TrainResult result;
  result.report.model = kind;
  result.report.initial_backbone_checksum = checksum(params.backbone());
  Optimizer opt(extractor_and_head(params), cfg.finetune_optimizer);
  auto step = [&](std::span<const std::size_t> batch) {
    std::vector<std::size_t> y;
    for (auto i : batch) y.push_back(data.train.labels[i]);
    return StepLoss{{cross_entropy_with_logits(forward_baseline(params, data.train.batch(batch)),
                                               y)}};
  };
  double best = -1.0;
  auto end_epoch = [&](std::size_t) {
    const double acc = accuracy({kind, params, std::nullopt}, data.validation);
    if (acc >= best) {
      best = acc;
      result.model = {kind, clone(params), std::nullopt};
    }
    return acc;
  };
  const auto started = Clock::now();
  result.report.finetune =
      run_phase(kind == ModelKind::standard ? "train_standard" : "finetune_simclr",
                {"cross_entropy"}, cfg.epochs_finetune, data.train.size(), cfg.batch_size, 1,
                mix_seed(cfg.seed, 6), opt, step, end_epoch);
  result.report.wall_ms = elapsed_ms(started);
  return result;
}

}  // namespace

PretrainResult pretrain(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data) {
  return pretrain_for(ModelKind::acl_pf, net, cfg, data);
}

TrainResult finetune_pf(const NetworkParams& pretrained, const TrainConfig& cfg,
                        const Splits& data) {
  return finetune_codebook(ModelKind::acl_pf, transfer_pretrained(pretrained, mix_seed(cfg.seed, 2)),
                           cfg, data, std::nullopt);
}

TrainResult finetune_cfpc(const NetworkParams& pretrained, const TrainConfig& cfg,
                          const Splits& data) {
  return finetune_codebook(ModelKind::acl_cfpc,
                           transfer_pretrained(pretrained, mix_seed(cfg.seed, 2)), cfg, data,
                           std::nullopt);
}

TrainResult train_tfc(const Codebook& fixed_book, const NetworkConfig& net,
                      const TrainConfig& cfg, const Splits& data) {
  return finetune_codebook(ModelKind::acl_tfc, init_params(net, mix_seed(cfg.seed, 2)), cfg, data,
                           fixed_book);
}

TrainResult train_standard(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data) {
  return finetune_head(ModelKind::standard, init_params(net, mix_seed(cfg.seed, 1)), cfg, data);
}

TrainResult train_simclr(const NetworkConfig& net, const TrainConfig& cfg, const Splits& data) {
  TrainConfig contrastive = cfg;
  contrastive.loss.lambda_csl = 0.0;
  const auto started = Clock::now();
  auto pre = pretrain_for(ModelKind::simclr, net, contrastive, data);
  auto result = finetune_head(ModelKind::simclr,
                              transfer_pretrained(pre.params, mix_seed(cfg.seed, 2)), cfg, data);
  result.report.pretrain = std::move(pre.report);
  result.report.wall_ms = elapsed_ms(started);
  return result;
}

TrainResult train_model(ModelKind kind, const NetworkConfig& net, const TrainConfig& cfg,
                        const Splits& data, const Codebook* tfc_book) {
  switch (kind) {
    case ModelKind::standard: return train_standard(net, cfg, data);
    case ModelKind::simclr: return train_simclr(net, cfg, data);
    case ModelKind::acl_tfc:
      if (!tfc_book) throw ConfigError("acl-tfc needs a fixed codebook");
      return train_tfc(*tfc_book, net, cfg, data);
    case ModelKind::acl_pf:
    case ModelKind::acl_cfpc: {
      const auto started = Clock::now();
      auto pre = pretrain_for(kind, net, cfg, data);
      auto result = kind == ModelKind::acl_pf ? finetune_pf(pre.params, cfg, data)
                                              : finetune_cfpc(pre.params, cfg, data);
      result.report.pretrain = std::move(pre.report);
      result.report.wall_ms = elapsed_ms(started);
      return result;
    }
  }
  throw Error("unknown model kind");
}

std::string metrics_csv(const PhaseReport& phase) {
  std::string out = "epoch";
  for (const auto& n : phase.component_names) out += "," + n;
  out += ",total,val_accuracy,wall_ms\n";
  for (const auto& e : phase.epochs) {
    out += std::to_string(e.epoch);
    for (double c : e.components) out += "," + format_double(c);
    out += "," + format_double(e.total) + "," + format_double(e.val_accuracy) + "," +
           format_double(e.wall_ms) + "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const PhaseReport& phase) {
  write_file(path, metrics_csv(phase));
}

}  // namespace acl
