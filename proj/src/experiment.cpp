#include "acl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>

#include "acl/error.hpp"
#include "acl/textio.hpp"

namespace acl {

namespace {

constexpr ModelKind kModelOrder[] = {ModelKind::standard, ModelKind::simclr, ModelKind::acl_pf,
                                     ModelKind::acl_cfpc, ModelKind::acl_tfc};
constexpr AttackKind kConditionOrder[] = {AttackKind::none, AttackKind::fgsm, AttackKind::pgd};

std::size_t condition_rank(AttackKind c) {
  return static_cast<std::size_t>(
      std::find(std::begin(kConditionOrder), std::end(kConditionOrder), c) -
      std::begin(kConditionOrder));
}

NetworkConfig network_for(const NetworkConfig& base, const Dataset& data) {
  NetworkConfig net = base;
  net.classes = data.classes;
  if (net.extractor == ExtractorKind::conv) {
    if (!data.shape.is_image()) throw ConfigError("the conv extractor needs image data");
    net.channels = data.shape.channels;
    net.height = data.shape.height;
    net.width = data.shape.width;
  } else {
    net.input_dim = data.shape.size();
  }
  net.validate();
  return net;
}

std::string run_name(ModelKind m, std::uint64_t seed) {
  return to_string(m) + "_seed" + std::to_string(seed);
}

// One unit of work: models trained in order for one seed. A tfc run that
// takes its codebook from cfpc shares a job with that cfpc run.
struct Job {
  std::uint64_t seed;
  std::vector<std::pair<ModelKind, bool>> steps;  // (model, reported)
};

std::vector<Job> plan_jobs(const ExperimentConfig& cfg) {
  const auto has = [&](ModelKind m) {
    return std::find(cfg.models.begin(), cfg.models.end(), m) != cfg.models.end();
  };
  const bool chained = has(ModelKind::acl_tfc) && cfg.tfc_codebook == "cfpc";
  std::vector<Job> jobs;
  for (auto seed : cfg.seeds)
    for (auto m : cfg.models) {
      if (chained && (m == ModelKind::acl_cfpc || m == ModelKind::acl_tfc)) continue;
      jobs.push_back({seed, {{m, true}}});
    }
  if (chained)
    for (auto seed : cfg.seeds)
      jobs.push_back(
          {seed, {{ModelKind::acl_cfpc, has(ModelKind::acl_cfpc)}, {ModelKind::acl_tfc, true}}});
  return jobs;
}

std::vector<ResultRow> run_job(const Job& job, const ExperimentConfig& cfg,
                               const NetworkConfig& net, const Splits& splits,
                               const std::optional<Codebook>& external_book) {
  std::vector<ResultRow> rows;
  std::optional<Codebook> cfpc_book;
  for (const auto& [model, reported] : job.steps) {
    TrainConfig train = cfg.train;
    train.seed = job.seed;
    const Codebook* book = nullptr;
    if (model == ModelKind::acl_tfc) book = cfpc_book ? &*cfpc_book : &*external_book;
    const auto result = train_model(model, net, train, splits, book);
    if (model == ModelKind::acl_cfpc) cfpc_book = result.model.book;

    const std::string name = run_name(model, job.seed);
    save_checkpoint(cfg.output / (name + ".ckpt"),
                    {model, result.model.params, result.model.book});
    if (!result.report.pretrain.empty())
      write_metrics_csv(cfg.output / (name + "_pretrain.csv"), result.report.pretrain);
    write_metrics_csv(cfg.output / (name + "_finetune.csv"), result.report.finetune);
    if (result.model.book) save_codebook(*result.model.book, cfg.output / (name + "_codebook.csv"));
    if (!reported) continue;

    const std::size_t epochs =
        result.report.pretrain.epochs.size() + result.report.finetune.epochs.size();
    AttackConfig attack = cfg.attack;
    attack.seed = mix_seed(cfg.attack.seed, job.seed);
    for (auto condition : cfg.conditions) {
      const auto eval =
          evaluate(result.model, splits.test, condition, attack, {cfg.eval_batch_size, nullptr});
      if (eval.contained != eval.generated)
        throw Error(name + ": " + std::to_string(eval.generated - eval.contained) +
                    " adversarial examples left the epsilon ball");
      rows.push_back({model, job.seed, condition, eval.accuracy(), epochs, result.report.wall_ms});
    }
  }
  return rows;
}

}  // namespace

Dataset load_experiment_data(const DatasetSpec& spec) {
  Dataset data;
  switch (spec.kind) {
    case DatasetKind::blobs: data = make_blobs(spec.blobs); break;
    case DatasetKind::idx: data = load_idx(spec.images, spec.labels); break;
    case DatasetKind::csv: data = load_dataset(spec.path); break;
  }
  if (spec.subset) data = take_stratified(data, spec.subset, spec.subset_seed);
  if (spec.replicate_channels) data = replicate_channels(data);
  data.validate();
  return data;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset data = load_experiment_data(cfg.dataset);
  const Splits splits = split(data, cfg.ratios, cfg.split_seed);
  const NetworkConfig net = network_for(cfg.network, data);
  std::optional<Codebook> external_book;
  if (!cfg.tfc_codebook.empty() && cfg.tfc_codebook != "cfpc") {
    external_book = load_codebook(cfg.tfc_codebook);
    if (external_book->classes() != net.classes || external_book->length() != net.code_length)
      throw ConfigError("tfc.codebook shape does not match classes x network.code_length");
  }
  std::filesystem::create_directories(cfg.output);

  const auto jobs = plan_jobs(cfg);
  std::vector<std::vector<ResultRow>> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  const int workers = static_cast<int>(std::min(cfg.workers, jobs.size()));
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    try {
      rows[j] = run_job(jobs[j], cfg, net, splits, external_book);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<ResultRow> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  const auto model_pos = [&](ModelKind m) {
    return std::find(cfg.models.begin(), cfg.models.end(), m) - cfg.models.begin();
  };
  std::stable_sort(all.begin(), all.end(), [&](const ResultRow& a, const ResultRow& b) {
    if (a.model != b.model) return model_pos(a.model) < model_pos(b.model);
    if (a.seed != b.seed) return a.seed < b.seed;
    return condition_rank(a.condition) < condition_rank(b.condition);
  });
  write_file(cfg.output / "results.csv", results_csv(all));
  return all;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = "model,seed,condition,accuracy,epochs,wall_ms\n";
  for (const auto& r : rows)
    out += to_string(r.model) + "," + std::to_string(r.seed) + "," + to_string(r.condition) +
           "," + format_double(r.accuracy) + "," + std::to_string(r.epochs) + "," +
           format_double(r.wall_ms) + "\n";
  return out;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "model,seed,condition,accuracy,epochs,wall_ms")
    throw FormatError("results CSV: unexpected header");
  std::vector<ResultRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 6)
      throw FormatError("results CSV line " + std::to_string(n) + ": 6 cells expected");
    rows.push_back({parse_model_kind(cells[0]), parse_size(cells[1]), parse_attack_kind(cells[2]),
                    parse_double(cells[3]), parse_size(cells[4]), parse_double(cells[5])});
  }
  return rows;
}

std::optional<SummaryCell> Summary::cell(ModelKind m, AttackKind c) const {
  const auto it = cells.find({m, c});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

Summary summarize(const std::vector<ResultRow>& rows) {
  std::map<std::pair<ModelKind, AttackKind>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.model, r.condition}].push_back(r.accuracy);
  Summary s;
  for (auto m : kModelOrder)
    if (std::any_of(rows.begin(), rows.end(), [&](auto& r) { return r.model == m; }))
      s.models.push_back(m);
  for (auto c : kConditionOrder)
    if (std::any_of(rows.begin(), rows.end(), [&](auto& r) { return r.condition == c; }))
      s.conditions.push_back(c);
  for (const auto& [key, values] : groups) {
    SummaryCell cell;
    cell.n = values.size();
    for (double v : values) cell.mean += v;
    cell.mean /= static_cast<double>(cell.n);
    if (cell.n > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - cell.mean) * (v - cell.mean);
      cell.std = std::sqrt(ss / static_cast<double>(cell.n - 1));
    }
    s.cells[key] = cell;
  }
  return s;
}

std::string summary_text(const Summary& summary) {
  const auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::string out = pad("model", 10);
  for (auto c : summary.conditions) out += " | " + pad(to_string(c), 15);
  out += "\n" + std::string(10, '-');
  for (std::size_t i = 0; i < summary.conditions.size(); ++i) out += "-+-" + std::string(15, '-');
  out += "\n";
  for (auto m : summary.models) {
    out += pad(to_string(m), 10);
    for (auto c : summary.conditions) {
      std::string text = "-";
      if (const auto cell = summary.cell(m, c)) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%6.2f +- %5.2f", 100.0 * cell->mean, 100.0 * cell->std);
        text = buf;
      }
      out += " | " + pad(text, 15);
    }
    out += "\n";
  }
  return out;
}

std::string summary_csv(const Summary& summary) {
  std::string out = "model";
  for (auto c : summary.conditions) {
    const auto n = to_string(c);
    out += "," + n + "_mean," + n + "_std," + n + "_n";
  }
  out += "\n";
  for (auto m : summary.models) {
    out += to_string(m);
    for (auto c : summary.conditions) {
      if (const auto cell = summary.cell(m, c))
        out += "," + format_double(cell->mean) + "," + format_double(cell->std) + "," +
               std::to_string(cell->n);
      else
        out += ",,,";
    }
    out += "\n";
  }
  return out;
}

Summary report(const std::filesystem::path& dir) {
  const Summary s = summarize(parse_results_csv(read_file(dir / "results.csv")));
  write_file(dir / "summary.csv", summary_csv(s));
  write_file(dir / "summary.txt", summary_text(s));
  return s;
}

}  // namespace acl
