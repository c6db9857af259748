// Acceptance run: one PASS/FAIL line per criterion, in order, with the
// measured values inline. Exit status is 0 only when every criterion passes.
//
//   acceptance            run all ten
//   acceptance 1 4 6      run a subset

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acl/attacks.hpp"
#include "acl/codebook.hpp"
#include "acl/config.hpp"
#include "acl/experiment.hpp"
#include "acl/gradcheck.hpp"
#include "acl/losses.hpp"
#include "acl/network.hpp"
#include "acl/textio.hpp"
#include "acl/training.hpp"
#include "oracles.hpp"
#include "smoke.hpp"

using namespace acl;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

Tensor from(const oracle::Matrix& m) {
  return Tensor::matrix(m.size(), m.front().size(), oracle::flatten(m));
}

std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % k;
  return y;
}

// Largest minus second-largest pairwise row cosine.
double mcsm_gap(const oracle::Matrix& book) {
  std::vector<double> cos;
  for (std::size_t a = 0; a < book.size(); ++a)
    for (std::size_t b = a + 1; b < book.size(); ++b) cos.push_back(oracle::cosine(book[a], book[b]));
  std::sort(cos.rbegin(), cos.rend());
  return cos.size() < 2 ? 1.0 : cos[0] - cos[1];
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

// ---------------------------------------------------------------------------

Outcome table_oracle() {
  const std::vector<double> rows{
      0, 0, 0, 0, 0, 0, 0, 0, 0, 0,  //
      0, 1, 1, 0, 1, 0, 1, 1, 1, 1,  //
      1, 1, 0, 1, 1, 1, 0, 0, 1, 1,  //
      1, 0, 1, 1, 0, 1, 1, 0, 0, 1,
  };
  const std::vector<std::uint8_t> query{1, 0, 1, 1, 0, 1, 0, 1, 1, 1};
  const Codebook book(4, 10, rows, CodebookSource::fixed_binary);
  const auto d = hamming_decode(query, book);

  // Independent count: pack each word into an integer and popcount the XOR.
  const auto pack = [](auto first, auto last) {
    unsigned v = 0;
    for (; first != last; ++first) v = (v << 1) | (*first != 0 ? 1u : 0u);
    return v;
  };
  const unsigned q = pack(query.begin(), query.end());
  std::vector<std::size_t> oracle_dist;
  for (std::size_t k = 0; k < 4; ++k)
    oracle_dist.push_back(std::popcount(q ^ pack(rows.begin() + k * 10, rows.begin() + (k + 1) * 10)));

  const std::vector<std::size_t> expected{7, 6, 4, 3};
  const bool ok = d.label == 3 && d.distances == expected && oracle_dist == expected;
  return {ok, "decoded class " + std::to_string(d.label + 1) + " (id " + std::to_string(d.label) +
                  "), distances " + std::to_string(d.distances[0]) + "," +
                  std::to_string(d.distances[1]) + "," + std::to_string(d.distances[2]) + "," +
                  std::to_string(d.distances[3]) + ", popcount oracle agrees: " +
                  (oracle_dist == expected ? "yes" : "no")};
}

Outcome gradient_suite() {
  std::mt19937_64 rng(2024);
  const auto labels = balanced_labels(6, 3);
  const auto partner = paired_view_partners(3);
  const LossConfig cfg;
  std::map<std::string, double> worst;
  for (int t = 0; t < 10; ++t) {
    oracle::Matrix book_m = oracle::random_matrix(rng, 3, 5);
    while (mcsm_gap(book_m) < 1e-3) book_m = oracle::random_matrix(rng, 3, 5);
    std::vector<Tensor> leaves{from(oracle::random_matrix(rng, 6, 5)), from(book_m)};
    const Tensor weights = from(oracle::random_matrix(rng, 6, 3));
    const auto pos = choose_positives(labels, rng);
    const Tensor& c = leaves[0];
    const Tensor& book = leaves[1];
    const auto parts = [&] {
      return FinetuneParts{cross_entropy_loss(decoder_probabilities(c, book), labels),
                           hinge_codeword_loss(c, index_rows(book, labels), cfg.hinge_margin),
                           row_separation_loss(c, labels, pos, book, cfg), mcsm_loss(book)};
    };
    const std::vector<std::pair<std::string, std::function<Tensor()>>> cases{
        {"csl", [&] { return column_separation_loss(c); }},
        {"info_nce", [&] { return info_nce_loss(c, partner, cfg.tau); }},
        {"rsl", [&] { return row_separation_loss(c, labels, pos, book, cfg); }},
        // Matrix-valued: contract against fixed random weights.
        {"decoder", [&] { return sum(mul(decoder_probabilities(c, book), weights)); }},
        {"ce", [&] { return cross_entropy_loss(decoder_probabilities(c, book), labels); }},
        {"hinge", [&] { return hinge_codeword_loss(c, index_rows(book, labels), cfg.hinge_margin); }},
        {"mcsm", [&] { return mcsm_loss(book); }},
        {"pretrain", [&] {
           return pretrain_loss(info_nce_loss(c, partner, cfg.tau), column_separation_loss(c), 0.7);
         }},
        {"finetune_pf", [&] { return finetune_loss(parts(), FinetuneVariant::pf); }},
        {"finetune_cfpc", [&] { return finetune_loss(parts(), FinetuneVariant::cfpc); }},
    };
    for (const auto& [name, f] : cases)
      worst[name] = std::max(worst[name], check_gradients(f, leaves, 1e-5).max_rel_error);
  }
  double max_err = 0.0;
  std::string which;
  for (const auto& [name, e] : worst)
    if (e >= max_err) max_err = e, which = name;
  return {max_err < 1e-4, std::to_string(worst.size()) + " losses x 10 points, max rel error " +
                              fmt(max_err) + " (" + which + "), limit 1e-4"};
}

Outcome codebook_oracle() {
  std::mt19937_64 rng(77);
  double max_diff = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng() % 5, n = 1 + rng() % 8, count = k + rng() % 40;
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = i < k ? i : rng() % k;
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto words = oracle::random_matrix(rng, count, n);
    const Codebook book = generate_codebook(from(words), labels, k);
    const auto expected = oracle::group_mean(words, labels, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < n; ++j)
        max_diff = std::max(max_diff, std::abs(book.at(a, j) - expected[a][j]));
  }
  return {max_diff < 1e-12, "100 random sets, max abs diff " + fmt(max_diff) + ", limit 1e-12"};
}

Outcome collapses() {
  // PGD with one full-size step and no random start is FGSM.
  const auto net = smoke::network();
  const Splits s = smoke::blobs(5);
  std::size_t compared = 0, identical = 0;
  Classifier baseline{ModelKind::standard, init_params(net, 3), std::nullopt};
  Classifier acl_model{ModelKind::acl_pf, init_params(net, 4), std::nullopt};
  {
    NoGradGuard guard;
    const Tensor words = encode(acl_model.params, extract_features(acl_model.params,
                                                                   s.generation.all_inputs()));
    acl_model.book = generate_codebook(words, s.generation.labels, net.classes);
  }
  for (const Classifier* model : {&baseline, &acl_model}) {
    const Classifier frozen = model->frozen();
    for (double eps : {8.0 / 255.0, 0.1, 0.5}) {
      AttackConfig a;
      a.epsilon = eps;
      a.pgd_alpha = eps;
      a.pgd_steps = 1;
      a.random_start = false;
      const Tensor x = s.test.all_inputs();
      const Tensor f = fgsm(frozen, x, s.test.labels, a);
      const Tensor p = pgd(frozen, x, s.test.labels, a);
      ++compared;
      if (std::equal(f.values().begin(), f.values().end(), p.values().begin(), p.values().end(),
                     [](double u, double v) { return std::bit_cast<std::uint64_t>(u) ==
                                                     std::bit_cast<std::uint64_t>(v); }))
        ++identical;
    }
  }

  // The co-finetuning objective is the plain one plus the mcsm term; ordered
  // column pairs count every pair twice.
  std::mt19937_64 rng(11);
  const auto labels = balanced_labels(8, 4);
  const LossConfig cfg;
  double max_mcsm_gap = 0.0;
  bool ordered_exact = true;
  for (int t = 0; t < 20; ++t) {
    const Tensor c = from(oracle::random_matrix(rng, 8, 6));
    const Tensor book = from(oracle::random_matrix(rng, 4, 6));
    const auto pos = choose_positives(labels, rng);
    const FinetuneParts parts{cross_entropy_loss(decoder_probabilities(c, book), labels),
                              hinge_codeword_loss(c, index_rows(book, labels)),
                              row_separation_loss(c, labels, pos, book, cfg), mcsm_loss(book)};
    const double diff = finetune_loss(parts, FinetuneVariant::cfpc).item() -
                        finetune_loss(parts, FinetuneVariant::pf).item();
    max_mcsm_gap = std::max(max_mcsm_gap, std::abs(diff - parts.mcsm.item()));
    ordered_exact &= column_separation_loss(c, CslPairs::ordered).item() ==
                     2.0 * column_separation_loss(c, CslPairs::unordered).item();
  }
  const bool ok = identical == compared && max_mcsm_gap < 1e-12 && ordered_exact;
  return {ok, "PGD-1 == FGSM bitwise " + std::to_string(identical) + "/" +
                  std::to_string(compared) + "; |(cfpc - pf) - mcsm| max " + fmt(max_mcsm_gap) +
                  " (limit 1e-12); ordered == 2 x unordered exactly: " +
                  (ordered_exact ? "yes" : "no")};
}

Outcome scale_invariance() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale_dist(0.05, 20.0);
  const auto scales = [&](std::size_t n) {
    std::vector<double> s(n);
    for (auto& v : s) v = scale_dist(rng);
    return s;
  };
  const auto scale_rows = [](oracle::Matrix m, const std::vector<double>& s) {
    for (std::size_t i = 0; i < m.size(); ++i)
      for (auto& v : m[i]) v *= s[i];
    return m;
  };
  const auto scale_cols = [](oracle::Matrix m, const std::vector<double>& s) {
    for (auto& row : m)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] *= s[j];
    return m;
  };

  const auto labels = balanced_labels(6, 3);
  const auto partner = paired_view_partners(3);
  const LossConfig cfg;
  double worst = 0.0;
  std::size_t argmax_changes = 0;
  for (int t = 0; t < 100; ++t) {
    const auto cm = oracle::random_matrix(rng, 6, 5);
    const auto bm = oracle::random_matrix(rng, 3, 5);
    const auto cr = scale_rows(cm, scales(6));
    const auto cc = scale_cols(cm, scales(5));
    const auto br = scale_rows(bm, scales(3));
    const Tensor c = from(cm), b = from(bm), c_rows = from(cr), c_cols = from(cc), b_rows = from(br);
    auto pos_rng = rng;
    const auto pos = choose_positives(labels, pos_rng);

    // Column separation compares columns, so it is rescaled per column; the
    // rest compare rows.
    worst = std::max({worst,
                      rel_diff(column_separation_loss(c).item(), column_separation_loss(c_cols).item()),
                      rel_diff(info_nce_loss(c, partner, cfg.tau).item(),
                               info_nce_loss(c_rows, partner, cfg.tau).item()),
                      rel_diff(row_separation_loss(c, labels, pos, b, cfg).item(),
                               row_separation_loss(c_rows, labels, pos, b_rows, cfg).item()),
                      rel_diff(cross_entropy_loss(decoder_probabilities(c, b), labels).item(),
                               cross_entropy_loss(decoder_probabilities(c_rows, b_rows), labels).item()),
                      rel_diff(hinge_codeword_loss(c, index_rows(b, labels)).item(),
                               hinge_codeword_loss(c_rows, index_rows(b_rows, labels)).item()),
                      rel_diff(mcsm_loss(b).item(), mcsm_loss(b_rows).item())});
    const Tensor p = decoder_probabilities(c, b), pr = decoder_probabilities(c_rows, b_rows);
    for (std::size_t i = 0; i < p.numel(); ++i) worst = std::max(worst, std::abs(p[i] - pr[i]));

    // Decoders: cosine on the real book, Hamming on sign bits of the query
    // against the column-median binarisation of the book.
    const Codebook book(3, 5, oracle::flatten(bm), CodebookSource::loaded);
    const Codebook book_scaled(3, 5, oracle::flatten(br), CodebookSource::loaded);
    const double k = scale_dist(rng);
    std::vector<double> q_scaled;
    for (double v : cm[0]) q_scaled.push_back(v * k);
    if (cosine_decode(cm[0], book).label != cosine_decode(q_scaled, book_scaled).label)
      ++argmax_changes;
    const auto bits = [](const std::vector<double>& q) {
      std::vector<std::uint8_t> out;
      for (double v : q) out.push_back(v > 0.0 ? 1 : 0);
      return out;
    };
    const Codebook uniform_scaled(3, 5, oracle::flatten(scale_rows(bm, {k, k, k})),
                                  CodebookSource::loaded);
    if (hamming_decode(bits(cm[0]), binarize(book)).label !=
        hamming_decode(bits(q_scaled), binarize(uniform_scaled)).label)
      ++argmax_changes;
  }
  return {worst < 1e-9 && argmax_changes == 0,
          "100 trials: max deviation " + fmt(worst) + " (limit 1e-9), decoder argmax changes " +
              std::to_string(argmax_changes)};
}

// ---------------------------------------------------------------------------
// The smoke suite feeds criteria 6, 8 and 9.

struct SmokeRun {
  std::uint64_t seed = 0;
  Splits data;
  std::map<ModelKind, TrainResult> results;
};

const std::vector<ModelKind> kSmokeModels{ModelKind::standard, ModelKind::simclr,
                                          ModelKind::acl_pf, ModelKind::acl_cfpc,
                                          ModelKind::acl_tfc};

std::vector<SmokeRun> train_smoke_suite() {
  std::vector<SmokeRun> runs;
  for (std::uint64_t seed : {0, 1, 2}) {
    SmokeRun run{seed, smoke::blobs(seed), {}};
    const auto net = smoke::network();
    const auto cfg = smoke::training(seed);
    for (ModelKind m : kSmokeModels) {
      const Codebook* book = nullptr;
      if (m == ModelKind::acl_tfc) book = &*run.results.at(ModelKind::acl_cfpc).report.codebook;
      run.results.emplace(m, train_model(m, net, cfg, run.data, book));
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

// Timing is the one column allowed to differ between identical runs.
std::string drop_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::vector<std::string> metrics_of(const std::vector<SmokeRun>& runs) {
  std::vector<std::string> out;
  for (const auto& run : runs)
    for (const auto& [m, r] : run.results) {
      if (!r.report.pretrain.empty()) out.push_back(metrics_csv(r.report.pretrain));
      out.push_back(metrics_csv(r.report.finetune));
    }
  return out;
}

Outcome smoke_training(const std::vector<SmokeRun>& runs, double train_ms) {
  bool ok = train_ms < 120000.0;
  std::string detail;
  for (ModelKind m : {ModelKind::standard, ModelKind::acl_pf, ModelKind::acl_cfpc,
                      ModelKind::acl_tfc}) {
    const double bar = m == ModelKind::acl_tfc ? 0.90 : 0.95;
    double lowest = 1.0;
    for (const auto& run : runs)
      lowest = std::min(lowest, accuracy(run.results.at(m).model, run.data.validation));
    ok &= lowest >= bar;
    detail += to_string(m) + " min " + fmt(100 * lowest, 4) + "% (>= " + fmt(100 * bar) + "%), ";
  }
  return {ok, "3 seeds, validation accuracy: " + detail + "training " + fmt(train_ms / 1000.0) +
                  " s (limit 120 s)"};
}

Outcome containment(const std::vector<SmokeRun>& runs) {
  std::size_t generated = 0, reported = 0, checked = 0;
  for (const auto& run : runs)
    for (const auto& [m, r] : run.results) {
      const Classifier model = r.model.frozen();
      for (AttackKind kind : {AttackKind::fgsm, AttackKind::pgd})
        for (const Dataset* split : {&run.data.test, &run.data.validation}) {
          AttackConfig a;
          a.seed = run.seed;
          Dataset adv;
          EvalOptions options;
          options.adversarial = &adv;
          const EvalResult e = evaluate(model, *split, kind, a, options);
          generated += e.generated;
          reported += e.contained;
          // Independent check on the returned examples.
          const std::size_t d = split->shape.size();
          for (std::size_t i = 0; i < adv.size(); ++i) {
            bool in = true;
            for (std::size_t j = 0; j < d; ++j) {
              const double xa = adv.inputs[i * d + j], x = split->inputs[i * d + j];
              in &= xa >= 0.0 && xa <= 1.0 && std::abs(xa - x) <= a.epsilon;
            }
            checked += in ? 1 : 0;
          }
        }
    }
  return {generated > 0 && reported == generated && checked == generated,
          std::to_string(checked) + "/" + std::to_string(generated) +
              " adversarial examples inside the eps ball and [0,1] (evaluator reports " +
              std::to_string(reported) + ")"};
}

Outcome determinism(const std::vector<SmokeRun>& first) {
  const auto again = train_smoke_suite();
  const auto a = metrics_of(first), b = metrics_of(again);
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    same += drop_wall_ms(a[i]) == drop_wall_ms(b[i]) ? 1 : 0;
  return {a.size() == b.size() && same == a.size() && !a.empty(),
          std::to_string(same) + "/" + std::to_string(a.size()) +
              " metrics CSVs identical on rerun (wall_ms column excluded)"};
}

Outcome robustness_trend() {
  ExperimentConfig cfg =
      load_config(std::filesystem::path(ACL_SOURCE_DIR) / "configs" / "robustness_blobs.cfg");
  cfg.output = std::filesystem::current_path() / "acceptance_robustness";
  const auto started = Clock::now();
  const Summary s = summarize(run_experiment(cfg));
  const double minutes = std::chrono::duration<double>(Clock::now() - started).count() / 60.0;
  const auto mean = [&](ModelKind m, AttackKind a) {
    const auto cell = s.cell(m, a);
    return cell ? cell->mean : std::nan("");
  };
  const double std_fgsm = mean(ModelKind::standard, AttackKind::fgsm);
  const double std_pgd = mean(ModelKind::standard, AttackKind::pgd);
  const double cfpc_fgsm = mean(ModelKind::acl_cfpc, AttackKind::fgsm);
  const double tfc_pgd = mean(ModelKind::acl_tfc, AttackKind::pgd);
  const bool ok = cfpc_fgsm > std_fgsm && tfc_pgd > std_pgd && minutes < 30.0;
  return {ok, "5000-sample 10-class blobs, eps 8/255, 3 seeds: FGSM acl-cfpc " +
                  fmt(100 * cfpc_fgsm, 4) + "% vs standard " + fmt(100 * std_fgsm, 4) +
                  "%; PGD acl-tfc " + fmt(100 * tfc_pgd, 4) + "% vs standard " +
                  fmt(100 * std_pgd, 4) + "% (clean: standard " +
                  fmt(100 * mean(ModelKind::standard, AttackKind::none), 4) + "%, acl-cfpc " +
                  fmt(100 * mean(ModelKind::acl_cfpc, AttackKind::none), 4) + "%, acl-tfc " +
                  fmt(100 * mean(ModelKind::acl_tfc, AttackKind::none), 4) + "%); " +
                  fmt(minutes) + " min (limit 30)"};
}

Outcome split_protocol() {
  struct Case {
    std::size_t n;
    SplitRatios ratios;
    std::vector<std::size_t> expected;  // train, test, generation, validation
  };
  const std::vector<Case> cases{
      {60000, {40000.0 / 60000, 10000.0 / 60000, 8000.0 / 60000, 2000.0 / 60000},
       {40000, 10000, 8000, 2000}},
      {70000, {48000.0 / 70000, 12000.0 / 70000, 8000.0 / 70000, 2000.0 / 70000},
       {48000, 12000, 8000, 2000}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    Dataset d;
    d.shape = SampleShape::vector(1);
    d.classes = 10;
    for (std::size_t i = 0; i < c.n; ++i) {
      d.inputs.push_back(0.0);
      d.labels.push_back(i % 10);
      d.origin.push_back(i);
    }
    const Splits s = split(d, c.ratios, 0);
    const std::vector<std::size_t> got{s.train.size(), s.test.size(), s.generation.size(),
                                       s.validation.size()};
    std::set<std::size_t> seen;
    for (const Dataset* part : {&s.train, &s.test, &s.generation, &s.validation})
      seen.insert(part->origin.begin(), part->origin.end());
    ok &= got == c.expected && seen.size() == c.n;
    detail += std::to_string(c.n) + " -> " + std::to_string(got[0]) + "/" +
              std::to_string(got[2]) + "/" + std::to_string(got[1]) + "/" +
              std::to_string(got[3]) + (seen.size() == c.n ? " disjoint" : " OVERLAP") + "; ";
  }
  return {ok, "train/generation/test/validation: " + detail.substr(0, detail.size() - 2)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const auto want = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

  int failed = 0, ran = 0;
  const auto report = [&](int id, const char* name, double budget_ms, const auto& body) {
    const auto started = Clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
    if (budget_ms > 0 && ms >= budget_ms) {
      o.pass = false;
      o.detail += "; over the " + fmt(budget_ms) + " ms budget";
    }
    ++ran;
    failed += o.pass ? 0 : 1;
    std::printf("%s  [%2d] %s: %s (%s ms)\n", o.pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str(), fmt(ms).c_str());
    std::fflush(stdout);
  };

  if (want(1)) report(1, "Hamming decoding oracle", 1.0, table_oracle);
  if (want(2)) report(2, "gradient suite", 10000.0, gradient_suite);
  if (want(3)) report(3, "codebook generation oracle", 1000.0, codebook_oracle);
  if (want(4)) report(4, "definitional collapses", 1000.0, collapses);
  if (want(5)) report(5, "scale invariances", 5000.0, scale_invariance);

  std::vector<SmokeRun> smoke_runs;
  double smoke_ms = 0.0;
  if (want(6) || want(8) || want(9)) {
    const auto started = Clock::now();
    smoke_runs = train_smoke_suite();
    smoke_ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
  }
  if (want(6)) report(6, "smoke training", 0.0, [&] { return smoke_training(smoke_runs, smoke_ms); });
  if (want(7)) report(7, "robustness ordering trend", 0.0, robustness_trend);
  if (want(8)) report(8, "attack containment", 0.0, [&] { return containment(smoke_runs); });
  if (want(9)) report(9, "determinism", 0.0, [&] { return determinism(smoke_runs); });
  if (want(10)) report(10, "split protocol", 0.0, split_protocol);

  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
