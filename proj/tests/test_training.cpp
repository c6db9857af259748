#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "acl/error.hpp"
#include "acl/textio.hpp"
#include "acl/training.hpp"
#include "doctest.h"
#include "smoke.hpp"

using namespace acl;

namespace {

bool same_trace(const PhaseReport& a, const PhaseReport& b, std::size_t components) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i)
    for (std::size_t c = 0; c < components; ++c)
      if (a.steps[i].components[c] != b.steps[i].components[c]) return false;
  return true;
}

void check_energy(const PhaseReport& phase) {
  for (const auto& s : phase.steps) {
    double sum = 0.0;
    for (double c : s.components) sum += c;
    CHECK(std::abs(sum - s.total) <= 1e-9);
  }
}

void check_shape(const PhaseReport& phase, std::size_t epochs) {
  CHECK(phase.epochs.size() == epochs);
  CHECK(phase.val_trace().size() == epochs);
  for (const auto& name : phase.component_names)
    CHECK(phase.component_trace(name).size() == epochs);
  const auto v = phase.val_trace();
  const double best = *std::max_element(v.begin(), v.end());
  CHECK(v[phase.best_epoch] == best);
  for (std::size_t e = phase.best_epoch + 1; e < v.size(); ++e) CHECK(v[e] < best);
}

double max_cosine(const Codebook& book) { return separation_report(book).max_pairwise_cosine; }

}  // namespace

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.finetune_optimizer.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.mcsm_weight = -0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("refresh modes follow the pipeline") {
  CHECK(refresh_mode(ModelKind::acl_pf) == CodebookRefresh::once_after_pretrain);
  CHECK(refresh_mode(ModelKind::acl_cfpc) == CodebookRefresh::every_batch);
  CHECK(refresh_mode(ModelKind::acl_tfc) == CodebookRefresh::fixed_external);
  CHECK(refresh_mode(ModelKind::standard) == CodebookRefresh::none);
}

TEST_CASE("pretraining loss falls from epoch one to two in most seeds") {
  int falls = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto cfg = smoke::training(seed);
    cfg.epochs_pretrain = 2;
    const auto r = pretrain(smoke::network(), cfg, smoke::blobs(seed));
    check_shape(r.report, 2);
    check_energy(r.report);
    falls += r.report.epochs[1].total < r.report.epochs[0].total;
  }
  CHECK(falls >= 2);
}

TEST_CASE("lambda zero is plain contrastive pretraining") {
  auto cfg = smoke::training(3);
  cfg.epochs_pretrain = 2;
  cfg.loss.lambda_csl = 0.0;
  const auto r = pretrain(smoke::network(), cfg, smoke::blobs(3));
  for (const auto& s : r.report.steps) {
    CHECK(s.components[1] == 0.0);
    CHECK(s.total == s.components[0]);
  }
  // The simclr pipeline pretrains exactly this way.
  const auto simclr = train_simclr(smoke::network(), cfg, smoke::blobs(3));
  CHECK(same_trace(simclr.report.pretrain, r.report, 2));
  CHECK(simclr.report.initial_backbone_checksum == checksum(r.params.backbone()));
}

TEST_CASE("one batch overfits") {
  auto data = smoke::blobs(4);
  std::vector<std::size_t> first(32);
  for (std::size_t i = 0; i < 32; ++i) first[i] = i;
  data.train = data.train.subset(first);
  auto cfg = smoke::training(4);
  cfg.epochs_pretrain = 11;
  cfg.augment = {};
  const auto r = pretrain(smoke::network(), cfg, data);
  REQUIRE(r.report.steps.size() == 11);
  int down = 0;
  for (std::size_t i = 1; i < 11; ++i)
    down += r.report.steps[i].total < r.report.steps[i - 1].total;
  CHECK(down >= 8);
}

TEST_CASE("pretraining writes a checkpoint per epoch") {
  const auto dir = std::filesystem::temp_directory_path() / "acl_test_pretrain_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto cfg = smoke::training(0);
  cfg.epochs_pretrain = 3;
  cfg.checkpoint_dir = dir;
  const auto r = pretrain(smoke::network(), cfg, smoke::blobs(0));
  for (int e = 1; e <= 3; ++e)
    CHECK(std::filesystem::exists(dir / ("pretrain_epoch" + std::to_string(e) + ".ckpt")));
  const auto last = load_checkpoint(dir / "pretrain_epoch3.ckpt", smoke::network());
  CHECK(checksum(last.params.tensors()) == checksum(r.params.tensors()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("divergence reports where it happened") {
  auto cfg = smoke::training(0);
  cfg.pretrain_optimizer = {OptimizerKind::sgd, 1e300};
  try {
    pretrain(smoke::network(), cfg, smoke::blobs(0));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.phase == "pretrain");
    CHECK(e.epoch >= 1);
    CHECK(e.step >= 1);
  }
}

TEST_CASE("too small a training split is a config error") {
  auto data = smoke::blobs(0);
  const std::vector<std::size_t> one{0};
  data.train = data.train.subset(one);
  CHECK_THROWS_AS(pretrain(smoke::network(), smoke::training(0), data), ConfigError);
}

TEST_CASE("ACL-PF keeps one codebook and learns") {
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto data = smoke::blobs(seed);
    const auto cfg = smoke::training(seed);
    const auto pre = pretrain(smoke::network(), cfg, data);
    const auto r = finetune_pf(pre.params, cfg, data);
    check_shape(r.report.finetune, 20);
    check_energy(r.report.finetune);
    std::set<std::uint64_t> hashes;
    for (const auto& s : r.report.finetune.steps) hashes.insert(s.codebook_hash);
    CHECK(hashes.size() == 1);
    CHECK(*hashes.begin() == r.model.book->hash());
    CHECK(r.report.initial_backbone_checksum == checksum(pre.params.backbone()));
    const auto v = r.report.finetune.val_trace();
    CHECK(*std::max_element(v.begin(), v.end()) >= 0.95);
  }
}

TEST_CASE("ACL-PF cross-entropy falls from first to last epoch") {
  for (std::uint64_t seed : {0, 1, 2}) {
    CAPTURE(seed);
    const auto data = smoke::blobs(seed);
    const auto cfg = smoke::training(seed);
    const auto r = finetune_pf(pretrain(smoke::network(), cfg, data).params, cfg, data);
    const auto ce = r.report.finetune.component_trace("cross_entropy");
    CHECK(ce.back() < ce.front());
  }
}

TEST_CASE("ACL-CFPC moves its codebook apart") {
  int separated = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto data = smoke::blobs(seed);
    const auto cfg = smoke::training(seed);
    const auto pre = pretrain(smoke::network(), cfg, data);
    const auto r = finetune_cfpc(pre.params, cfg, data);
    check_shape(r.report.finetune, 20);
    check_energy(r.report.finetune);
    const auto& steps = r.report.finetune.steps;
    CHECK(steps.front().codebook_hash != steps.back().codebook_hash);
    REQUIRE(r.report.initial_codebook);
    REQUIRE(r.report.last_codebook);
    separated += max_cosine(*r.report.last_codebook) < max_cosine(*r.report.initial_codebook);
  }
  CHECK(separated >= 2);
}

TEST_CASE("ACL-CFPC with a zero learning rate regenerates the same book") {
  auto cfg = smoke::training(1);
  cfg.epochs_finetune = 2;
  cfg.finetune_optimizer.learning_rate = 0.0;
  const auto data = smoke::blobs(1);
  const auto pre = pretrain(smoke::network(), cfg, data);
  const auto r = finetune_cfpc(pre.params, cfg, data);
  std::set<std::uint64_t> hashes;
  for (const auto& s : r.report.finetune.steps) hashes.insert(s.codebook_hash);
  CHECK(hashes.size() == 1);
}

TEST_CASE("ACL-CFPC without refresh or mcsm weight is ACL-PF") {
  auto cfg = smoke::training(2);
  cfg.epochs_finetune = 5;
  cfg.cfpc_refresh = false;
  cfg.mcsm_weight = 0.0;
  const auto data = smoke::blobs(2);
  const auto pre = pretrain(smoke::network(), cfg, data);
  const auto pf = finetune_pf(pre.params, cfg, data);
  const auto cf = finetune_cfpc(pre.params, cfg, data);
  CHECK(same_trace(pf.report.finetune, cf.report.finetune, 3));
  for (std::size_t i = 0; i < pf.report.finetune.steps.size(); ++i) {
    CHECK(cf.report.finetune.steps[i].total == pf.report.finetune.steps[i].total);
    CHECK(cf.report.finetune.steps[i].components[3] == 0.0);
  }
  CHECK(pf.model.book->hash() == cf.model.book->hash());
  CHECK(checksum(pf.model.params.tensors()) == checksum(cf.model.params.tensors()));
}

TEST_CASE("ACL-CFPC logs mcsm as a constant term") {
  auto cfg = smoke::training(0);
  cfg.epochs_finetune = 1;
  const auto data = smoke::blobs(0);
  const auto pre = pretrain(smoke::network(), cfg, data);
  auto heavy = cfg;
  heavy.mcsm_weight = 5.0;
  const auto a = finetune_cfpc(pre.params, cfg, data);
  const auto b = finetune_cfpc(pre.params, heavy, data);
  // The weight rescales the logged term but never the parameter updates.
  CHECK(checksum(a.model.params.tensors()) == checksum(b.model.params.tensors()));
  const auto& sa = a.report.finetune.steps.front();
  const auto& sb = b.report.finetune.steps.front();
  CHECK(sb.components[3] == doctest::Approx(5.0 * sa.components[3]).epsilon(1e-12));
  CHECK(sa.components[3] >= -1.0);
  CHECK(sa.components[3] <= 1.0);
}

TEST_CASE("EMA refresh blends towards the regenerated book") {
  auto cfg = smoke::training(0);
  cfg.epochs_finetune = 2;
  cfg.cfpc_ema = true;
  const auto data = smoke::blobs(0);
  const auto pre = pretrain(smoke::network(), cfg, data);
  const auto r = finetune_cfpc(pre.params, cfg, data);
  check_energy(r.report.finetune);
  const auto& steps = r.report.finetune.steps;
  CHECK(steps.front().codebook_hash != steps.back().codebook_hash);
}

TEST_CASE("ACL-TFC trains from scratch against a fixed book") {
  for (std::uint64_t seed : {0, 1}) {
    const auto data = smoke::blobs(seed);
    const auto cfg = smoke::training(seed);
    const auto pre = pretrain(smoke::network(), cfg, data);
    const auto cf = finetune_cfpc(pre.params, cfg, data);
    const auto r = train_tfc(*cf.model.book, smoke::network(), cfg, data);
    check_energy(r.report.finetune);
    CHECK(r.report.pretrain.empty());
    std::set<std::uint64_t> hashes;
    for (const auto& s : r.report.finetune.steps) hashes.insert(s.codebook_hash);
    CHECK(hashes.size() == 1);
    CHECK(*hashes.begin() == cf.model.book->hash());
    CHECK(r.report.initial_backbone_checksum != checksum(pre.params.backbone()));
    const auto again = train_tfc(*cf.model.book, smoke::network(), cfg, data);
    CHECK(same_trace(again.report.finetune, r.report.finetune, 3));
  }
}

TEST_CASE("ACL-TFC rejects a book of the wrong shape") {
  const Codebook book(2, 16, std::vector<double>(32, 0.5), CodebookSource::loaded);
  CHECK_THROWS(train_tfc(book, smoke::network(), smoke::training(0), smoke::blobs(0)));
  CHECK_THROWS_AS(train_model(ModelKind::acl_tfc, smoke::network(), smoke::training(0),
                              smoke::blobs(0), nullptr),
                  ConfigError);
}

TEST_CASE("Standard reaches the smoke bar") {
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto data = smoke::blobs(seed);
    const auto r = train_standard(smoke::network(), smoke::training(seed), data);
    check_shape(r.report.finetune, 20);
    CHECK(r.report.pretrain.empty());
    CHECK_FALSE(r.model.book);
    const auto v = r.report.finetune.val_trace();
    CHECK(*std::max_element(v.begin(), v.end()) >= 0.95);
    CHECK(accuracy(r.model, data.validation) == v[r.report.finetune.best_epoch]);
  }
}

TEST_CASE("metrics CSV has one row per epoch") {
  auto cfg = smoke::training(0);
  cfg.epochs_finetune = 3;
  const auto r = train_standard(smoke::network(), cfg, smoke::blobs(0));
  const auto text = metrics_csv(r.report.finetune);
  const auto lines = split(text, '\n');
  CHECK(lines[0] == "epoch,cross_entropy,total,val_accuracy,wall_ms");
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(lines[1].rfind("1,", 0) == 0);
}

TEST_CASE("runs replay bit for bit") {
  for (auto kind : {ModelKind::simclr, ModelKind::acl_cfpc}) {
    auto cfg = smoke::training(5);
    cfg.epochs_pretrain = 2;
    cfg.epochs_finetune = 2;
    const auto a = train_model(kind, smoke::network(), cfg, smoke::blobs(5));
    const auto b = train_model(kind, smoke::network(), cfg, smoke::blobs(5));
    CHECK(same_trace(a.report.pretrain, b.report.pretrain, 2));
    CHECK(same_trace(a.report.finetune, b.report.finetune,
                     a.report.finetune.component_names.size()));
    CHECK(checksum(a.model.params.tensors()) == checksum(b.model.params.tensors()));
  }
}
