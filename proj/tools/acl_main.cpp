// acl: command-line front end.
//
//   acl run <config>                     train and evaluate the model grid
//   acl report <dir>                     aggregate <dir>/results.csv
//   acl attack <checkpoint> <dataset>    evaluate one checkpoint
//   acl codebook-stats <codebook.csv>    separation statistics of a codebook

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acl/attacks.hpp"
#include "acl/codebook.hpp"
#include "acl/config.hpp"
#include "acl/data.hpp"
#include "acl/error.hpp"
#include "acl/experiment.hpp"
#include "acl/network.hpp"
#include "acl/textio.hpp"

namespace {

int cmd_run(const std::string& config_path, std::size_t workers) {
  acl::ExperimentConfig cfg = acl::load_config(config_path);
  if (workers > 0) cfg.workers = workers;
  const auto rows = acl::run_experiment(cfg);
  const acl::Summary summary = acl::report(cfg.output);
  std::cout << rows.size() << " result rows written to " << (cfg.output / "results.csv").string()
            << "\n\n"
            << acl::summary_text(summary);
  return 0;
}

int cmd_report(const std::string& dir) {
  std::cout << acl::summary_text(acl::report(dir));
  return 0;
}

struct AttackArgs {
  std::string checkpoint, dataset, labels, save_adversarial;
  std::vector<std::string> conditions{"none", "fgsm", "pgd"};
  acl::AttackConfig attack;
  bool no_random_start = false;
  bool replicate = false;
  std::size_t batch_size = 256;
};

int cmd_attack(AttackArgs& args) {
  const acl::Checkpoint ckpt = acl::load_checkpoint(args.checkpoint);
  acl::Dataset data = args.labels.empty() ? acl::load_dataset(args.dataset)
                                          : acl::load_idx(args.dataset, args.labels);
  if (args.replicate) data = acl::replicate_channels(data);
  if (data.shape.size() != ckpt.params.config.input_size())
    throw acl::ConfigError("dataset samples have " + std::to_string(data.shape.size()) +
                           " values, the checkpoint expects " +
                           std::to_string(ckpt.params.config.input_size()));
  if (args.no_random_start) args.attack.random_start = false;
  args.attack.validate();

  const acl::Classifier model = ckpt.classifier().frozen();
  std::cout << "model " << acl::to_string(ckpt.kind) << ", " << data.size() << " samples\n";
  std::cout << "condition,accuracy,correct,total,contained\n";
  for (const auto& name : args.conditions) {
    const acl::AttackKind kind = acl::parse_attack_kind(name);
    acl::Dataset adversarial;
    acl::EvalOptions options;
    options.batch_size = args.batch_size;
    if (!args.save_adversarial.empty()) options.adversarial = &adversarial;
    const acl::EvalResult r = acl::evaluate(model, data, kind, args.attack, options);
    std::cout << acl::to_string(kind) << ',' << acl::format_double(r.accuracy()) << ','
              << r.correct << ',' << r.total << ',' << r.contained << '/' << r.generated << '\n';
    if (!args.save_adversarial.empty() && kind != acl::AttackKind::none)
      acl::save_dataset(args.save_adversarial + "." + acl::to_string(kind) + ".csv", adversarial);
  }
  return 0;
}

int cmd_codebook_stats(const std::string& path, bool binarize) {
  acl::Codebook book = acl::load_codebook(path);
  if (binarize) book = acl::binarize(book);
  const acl::SeparationReport r = acl::separation_report(book);
  std::cout << "classes " << book.classes() << "\n"
            << "code_length " << book.length() << "\n"
            << "binary " << (book.is_binary() ? "yes" : "no") << "\n"
            << "min_pairwise_hamming " << r.min_pairwise_hamming << "\n"
            << "mean_pairwise_hamming " << acl::format_double(r.mean_pairwise_hamming) << "\n"
            << "min_pairwise_cosine_distance "
            << acl::format_double(r.min_pairwise_cosine_distance) << "\n"
            << "mean_pairwise_cosine_distance "
            << acl::format_double(r.mean_pairwise_cosine_distance) << "\n"
            << "max_pairwise_cosine " << acl::format_double(r.max_pairwise_cosine) << "\n"
            << "mean_column_correlation " << acl::format_double(r.mean_column_correlation)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastively learned ECOC codebooks: training, attacks and reporting"};
  app.require_subcommand(1);

  std::string config_path;
  std::size_t workers = 0;
  auto* run = app.add_subcommand("run", "Train and evaluate every (model, seed) in a config");
  run->add_option("config", config_path, "key = value experiment file")->required();
  run->add_option("--workers", workers, "Override the config's worker count");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Summarise results.csv to mean +- std per cell");
  rep->add_option("dir", report_dir, "Directory holding results.csv")->required();

  AttackArgs aa;
  auto* att = app.add_subcommand("attack", "Clean/FGSM/PGD accuracy of one checkpoint");
  att->add_option("checkpoint", aa.checkpoint)->required();
  att->add_option("dataset", aa.dataset, "Dataset CSV, or IDX images with --labels")->required();
  att->add_option("--labels", aa.labels, "IDX label file");
  att->add_option("--conditions", aa.conditions, "Subset of none, fgsm, pgd");
  att->add_option("--epsilon", aa.attack.epsilon)->capture_default_str();
  att->add_option("--steps", aa.attack.pgd_steps)->capture_default_str();
  att->add_option("--alpha", aa.attack.pgd_alpha)->capture_default_str();
  att->add_option("--seed", aa.attack.seed)->capture_default_str();
  att->add_flag("--no-random-start", aa.no_random_start);
  att->add_flag("--replicate-channels", aa.replicate, "Copy grayscale into 3 channels");
  att->add_option("--batch-size", aa.batch_size)->capture_default_str();
  att->add_option("--save-adversarial", aa.save_adversarial,
                  "Prefix for <prefix>.<condition>.csv attacked datasets");

  std::string book_path;
  bool binarize = false;
  auto* cbs = app.add_subcommand("codebook-stats", "Row and column separation of a codebook");
  cbs->add_option("codebook", book_path)->required();
  cbs->add_flag("--binarize", binarize, "Report on the column-median binarisation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, workers);
    if (*rep) return cmd_report(report_dir);
    if (*att) return cmd_attack(aa);
    if (*cbs) return cmd_codebook_stats(book_path, binarize);
  } catch (const acl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
