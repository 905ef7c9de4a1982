#include "torch_doctest.hpp"

#include <cmath>
#include <random>
#include <set>

#include "brainssl/error.hpp"
#include "brainssl/train.hpp"
#include "model_configs.hpp"
#include "test_util.hpp"

using namespace brainssl;
using brainssl::testing::TempDir;
using brainssl::testing::file_bytes;

TEST_CASE("warmup cosine schedule examples") {
  CHECK(warmup_cosine_lr(0, 1e-3, 500, 1500) == 0.0);
  CHECK(warmup_cosine_lr(500, 1e-3, 500, 1500) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(warmup_cosine_lr(250, 1e-3, 500, 1500) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(warmup_cosine_lr(1000, 1e-3, 500, 1500) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(std::abs(warmup_cosine_lr(1500, 1e-3, 500, 1500)) < 1e-18);
  CHECK(warmup_cosine_lr(0, 2.0, 0, 10) == 2.0);
  CHECK_THROWS_AS(warmup_cosine_lr(0, 1e-3, 500, 500), ConfigError);
  CHECK_THROWS_AS(warmup_cosine_lr(0, 1e-3, 600, 500), ConfigError);
  CHECK_THROWS_AS(warmup_cosine_lr(501, 1e-3, 10, 500), ValidationError);
  CHECK_THROWS_AS(warmup_cosine_lr(-1, 1e-3, 10, 500), ValidationError);
}

TEST_CASE("schedule is continuous at the warmup end and nonincreasing after it") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t total = std::uniform_int_distribution<int64_t>(2, 3000)(rng);
    const int64_t warmup = std::uniform_int_distribution<int64_t>(0, total - 1)(rng);
    const double peak = std::exp(std::uniform_real_distribution<double>(-14.0, 0.0)(rng));
    const double at = warmup_cosine_lr(warmup, peak, warmup, total);
    CHECK(at == doctest::Approx(peak).epsilon(1e-12));
    if (warmup > 0) CHECK(std::abs(warmup_cosine_lr(warmup - 1, peak, warmup, total) - at) <= peak / warmup + 1e-15);
    if (warmup + 1 <= total) CHECK(at - warmup_cosine_lr(warmup + 1, peak, warmup, total) <= peak * 5.0 / (total - warmup));
    double prev = at;
    bool monotone = true;
    for (int64_t s = warmup; s <= total; s += std::max<int64_t>(1, (total - warmup) / 50)) {
      const double lr = warmup_cosine_lr(s, peak, warmup, total);
      monotone = monotone && lr <= prev && lr >= 0.0;
      prev = lr;
    }
    CHECK(monotone);
  }
}

TEST_CASE("train config validation and presets") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.warmup_steps = bad.total_steps;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.lr_peak = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.stage = "pretrain3";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  for (const auto& name : TrainConfig::preset_names()) {
    const auto p = TrainConfig::preset(name);
    CHECK_NOTHROW(p.validate());
    CHECK(p.beta1 == 0.9);
    CHECK(p.beta2 == 0.999);
    CHECK(p.weight_decay == 0.1);
    CHECK(p.warmup_steps == 500);
  }
  CHECK(TrainConfig::preset("stage1-table").lr_peak == 1e-6);
  CHECK(TrainConfig::preset("stage1-table").total_steps == 200000);
  CHECK(TrainConfig::preset("stage1-table").batch_size == 128);
  CHECK(TrainConfig::preset("stage1-text").lr_peak == 6e-6);
  CHECK(TrainConfig::preset("stage1-text").total_steps == 15000);
  CHECK(TrainConfig::preset("brats").lr_peak == 1e-4);
  CHECK(TrainConfig::preset("brats").total_steps == 50000);
  CHECK(TrainConfig::preset("atlas-stage2-table").lr_peak == 3e-3);
  CHECK(TrainConfig::preset("atlas-stage2-text").lr_peak == 5e-3);
  CHECK(TrainConfig::preset("atlas-finetune").dropout == 0.1);
  CHECK(TrainConfig::preset("atlas-finetune").resolved_steps(655) == 600 * 164);
  CHECK_THROWS_AS(TrainConfig::preset("imagenet"), ConfigError);
}

TEST_CASE("run log csv round trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  RunLog log;
  int64_t tstep = 0, vstep = 0;
  for (int i = 0; i < 300; ++i) {
    const bool val = i % 7 == 0;
    log.add({val ? vstep += 3 : tstep += 1, val ? "val" : "train", u(rng) * 1e-7, std::abs(u(rng)) * 1e-9,
             static_cast<int64_t>(i) * 13});
  }
  const auto back = RunLog::parse_csv(log.csv());
  CHECK((back.rows() == log.rows()));
  CHECK(back.csv() == log.csv());
  CHECK(log.csv().rfind("step,split,loss,lr,wall_ms\n", 0) == 0);
  TempDir dir;
  log.save(dir / "log.csv");
  CHECK((RunLog::load(dir / "log.csv").rows() == log.rows()));

  RunLog other = back;
  CHECK(other.same_trace(log));
  CHECK_THROWS_AS(other.add({1, "train", 0.0, 0.0, 0}), ValidationError);
  CHECK_THROWS_AS(other.add({100000, "test", 0.0, 0.0, 0}), ValidationError);
  CHECK_THROWS_AS(RunLog::parse_csv("step,loss\n"), FormatError);
  CHECK_THROWS_AS(RunLog::parse_csv("step,split,loss,lr,wall_ms\n1,train,x,0,0\n"), FormatError);
  CHECK_THROWS_AS(RunLog::parse_csv("step,split,loss,lr,wall_ms\n2,train,1,0,0\n2,train,1,0,0\n"), ValidationError);
}

namespace {

ExperimentConfig ssl_config(int64_t steps) {
  auto c = test_configs::micro_experiment();
  c.train_block = {{"lr_peak", 5e-4}, {"warmup_steps", 10}, {"total_steps", steps}, {"batch_size", 2},
                   {"val_every", 50},  {"weight_decay", 0.01}};
  return c;
}

}  // namespace

TEST_CASE("ssl training lowers the objective and follows the schedule") {
  const auto cfg = ssl_config(200);
  const auto vols = phantom_volumes(test_configs::micro_phantom(false, 40), 16);
  auto [train, val] = split_tail(vols, 2);
  const auto tc = cfg.train("pretrain1");
  auto model = build_ssl_model(cfg, 2, nullptr, true, tc.seed);
  const auto r = train_ssl(*model, train, val, cfg.augment, cfg.weights, tc);
  MESSAGE("ssl objective " << r.initial_loss << " -> " << r.final_loss);
  CHECK(r.final_loss <= 0.7 * r.initial_loss);

  const auto rows = r.log.split("train");
  CHECK(rows.size() == 200);
  bool lr_ok = true;
  for (const auto& row : rows) lr_ok = lr_ok && row.lr == warmup_cosine_lr(row.step, 5e-4, 10, 200);
  CHECK(lr_ok);
  const auto vrows = r.log.split("val");
  REQUIRE(vrows.size() == 5);
  CHECK(vrows.front().step == 0);
  CHECK(vrows.back().step == 200);
  CHECK(r.final_checkpoint.step == 200);
}

TEST_CASE("ssl training is deterministic per seed") {
  auto cfg = ssl_config(12);
  cfg.train_block["val_every"] = 5;
  const auto vols = phantom_volumes(test_configs::micro_phantom(false, 50), 6);
  auto [train, val] = split_tail(vols, 2);
  TempDir a, b;
  const auto ra = run_pretrain(cfg, "pretrain1", train, val, nullptr, true, a.path());
  const auto rb = run_pretrain(cfg, "pretrain1", train, val, nullptr, true, b.path());
  CHECK(ra.log.same_trace(rb.log));
  CHECK((ra.final_checkpoint == rb.final_checkpoint));
  CHECK((file_bytes(a / "final.ckpt") == file_bytes(b / "final.ckpt")));
  CHECK(RunLog::load(a / "runlog.csv").same_trace(ra.log));

  cfg.train_block["seed"] = 1;
  const auto rc = run_pretrain(cfg, "pretrain1", train, val, nullptr, true, "");
  CHECK_FALSE(rc.log.same_trace(ra.log));
}

TEST_CASE("non-finite losses abort naming the task") {
  const auto cfg = ssl_config(20);
  const auto vols = phantom_volumes(test_configs::micro_phantom(false, 60), 3);
  const auto tc = cfg.train("pretrain1");
  auto model = build_ssl_model(cfg, 2, nullptr, true, 1);
  {
    torch::NoGradGuard g;
    model->rotation_head->weight.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  try {
    train_ssl(*model, vols, {}, cfg.augment, cfg.weights, tc);
    FAIL("NaN weights trained");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite rotation loss at step 0") != std::string::npos);
  }

  auto seg = build_finetune_model(cfg, 2, nullptr, true, 1);
  {
    torch::NoGradGuard g;
    for (auto& p : seg->parameters()) p.fill_(std::numeric_limits<float>::infinity());
  }
  const auto cases = phantom_cases(test_configs::micro_phantom(true, 61), 2);
  CHECK_THROWS_AS(train_supervised(*seg, cases, {}, cfg.train("finetune")), TrainingError);

  CHECK_THROWS_AS(run_pretrain(cfg, "pretrain1", {}, {}, nullptr, true, ""), ValidationError);
  auto one = cfg;
  one.train_block["batch_size"] = 1;
  CHECK_THROWS_AS(run_pretrain(one, "pretrain1", vols, {}, nullptr, true, ""), ValidationError);
}

TEST_CASE("each proxy task alone is fitted on a four-volume set") {
  const auto vols = phantom_volumes(test_configs::micro_phantom(false, 70), 4);
  struct Task {
    const char* name;
    SslLossWeights w;
  };
  for (const auto& task : {Task{"inpaint", {1, 0, 0, 0.5}}, Task{"rotation", {0, 1, 0, 0.5}},
                           Task{"contrastive", {0, 0, 1, 0.5}}}) {
    auto cfg = ssl_config(100);
    cfg.weights = task.w;
    const auto tc = cfg.train("pretrain1");
    auto model = build_ssl_model(cfg, 2, nullptr, true, 5);
    std::vector<SslSample> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(make_ssl_views(vols[static_cast<size_t>(i)], cfg.augment, 900 + i));
    const auto batch = make_ssl_batch(samples);
    auto measure = [&] {
      torch::NoGradGuard g;
      model->eval();
      const auto l = ssl_step(*model, batch, SslLossWeights{});
      const double v = task.w.inpaint > 0 ? l.inpaint.item<double>()
                       : task.w.rotation > 0 ? l.rotation.item<double>()
                                             : l.contrastive.item<double>();
      model->train();
      return v;
    };
    const double before = measure();
    train_ssl(*model, vols, {}, cfg.augment, task.w, tc);
    const double after = measure();
    MESSAGE(std::string(task.name) << " " << before << " -> " << after);
    CHECK(after < before);
  }
}

TEST_CASE("supervised training tracks the best validation checkpoint") {
  auto cfg = test_configs::micro_experiment();
  cfg.train_block = {{"lr_peak", 3e-3}, {"warmup_steps", 10}, {"total_steps", 300}, {"batch_size", 2},
                     {"val_every", 50},  {"weight_decay", 0.01}};
  const auto cases = phantom_cases(test_configs::micro_phantom(true, 80), 16);
  auto [train, held] = split_tail(cases, 4);
  auto [val, test] = split_tail(held, 2);
  const auto out = run_finetune(cfg, train, val, test, nullptr, true, "");
  const auto& r = out.training;
  MESSAGE("held-out dice " << out.test_dice << ", best val " << r.best_val_dice << " at " << r.best_step);
  CHECK(out.test_dice >= 0.5);
  CHECK(out.test.size() == 2);

  const auto vrows = r.log.split("val");
  REQUIRE(!vrows.empty());
  double best = -1.0;
  int64_t at = -1;
  for (const auto& row : vrows)
    if (1.0 - row.loss > best) {
      best = 1.0 - row.loss;
      at = row.step;
    }
  CHECK(r.best_step == at);
  CHECK(r.best_step <= vrows.back().step);
  CHECK(r.best_val_dice == doctest::Approx(best).epsilon(1e-12));
  CHECK(r.best_checkpoint.step == r.best_step);
}

TEST_CASE("dropout changes the training trajectory") {
  auto cfg = test_configs::micro_experiment();
  cfg.train_block = {{"lr_peak", 3e-3}, {"warmup_steps", 2}, {"total_steps", 6}, {"batch_size", 2}, {"val_every", 6}};
  const auto cases = phantom_cases(test_configs::micro_phantom(true, 90), 3);
  const auto a = run_finetune(cfg, cases, {}, {}, nullptr, true, "");
  const auto b = run_finetune(cfg, cases, {}, {}, nullptr, true, "");
  CHECK(a.training.log.same_trace(b.training.log));
  cfg.train_block["dropout"] = 0.1;
  const auto c = run_finetune(cfg, cases, {}, {}, nullptr, true, "");
  CHECK_FALSE(c.training.log.same_trace(a.training.log));
}

namespace {

std::vector<std::string> ids_of(int64_t n) {
  std::vector<std::string> ids;
  for (int64_t i = 0; i < n; ++i) ids.push_back("sub-" + std::to_string(1000 + i));
  return ids;
}

}  // namespace

TEST_CASE("cross-validation table") {
  const auto ids = ids_of(20);
  const auto split = make_folds(ids, 5, 4);
  std::multiset<std::string> seen;
  const auto table = run_cv(ids, split, {"a", "b"}, [&](int64_t fold, const auto& train, const auto& eval) {
    std::set<std::string> t(train.begin(), train.end());
    for (const auto& id : eval) CHECK(!t.count(id));
    CHECK(train.size() + eval.size() == 20);
    std::vector<CaseMetrics> out;
    for (size_t i = 0; i < eval.size(); ++i) {
      seen.insert(eval[i]);
      CaseMetrics m;
      m.dice_per_class = {0.1 * static_cast<double>(fold), 0.5 + 0.01 * static_cast<double>(i)};
      m.dice_mean = (m.dice_per_class[0] + m.dice_per_class[1]) / 2;
      out.push_back(m);
    }
    return out;
  });
  REQUIRE(table.rows.size() == 6);
  CHECK(table.rows[0].fold == "Fold 1");
  CHECK(table.rows[5].fold == "Average");
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) sum += table.rows[static_cast<size_t>(i)].dice_mean;
  CHECK(table.rows[5].dice_mean == doctest::Approx(sum / 5).epsilon(1e-12));
  CHECK(table.rows[5].dice_per_class[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK((seen == std::multiset<std::string>(ids.begin(), ids.end())));
  CHECK(table.csv().rfind("fold,a,b,mean\nFold 1,", 0) == 0);

  auto extra = ids;
  extra.push_back("sub-9999");
  auto noop = [](int64_t, const auto&, const auto&) { return std::vector<CaseMetrics>{}; };
  CHECK_THROWS_AS(run_cv(extra, split, {"a"}, noop), ValidationError);
  auto fewer = ids;
  fewer.pop_back();
  CHECK_THROWS_AS(run_cv(fewer, split, {"a"}, noop), ValidationError);
}

TEST_CASE("few-shot grid pairs the arms on identical subsets") {
  const auto ids = ids_of(40);
  std::map<std::pair<std::string, std::vector<std::string>>, uint64_t> calls;
  auto runner = [&](const std::string& arm, const std::vector<std::string>& subset, uint64_t seed) {
    calls[{arm, subset}] = seed;
    return arm == "pretrained" ? 0.6 : 0.5 + 0.001 * static_cast<double>(subset.size());
  };
  const std::vector<double> fractions{0.05, 0.10, 0.20, 0.40};
  const auto grid = run_fewshot(ids, fractions, 5, 2, 11, runner);
  CHECK(grid.runs.size() == 40);
  CHECK(grid.summary.size() == 8);
  for (size_t i = 0; i < grid.runs.size(); i += 2) {
    CHECK(grid.runs[i].arm == "pretrained");
    CHECK(grid.runs[i + 1].arm == "scratch");
    CHECK((grid.runs[i].subset == grid.runs[i + 1].subset));
    CHECK(calls[{"pretrained", grid.runs[i].subset}] == calls[{"scratch", grid.runs[i].subset}]);
  }
  // Repeats draw different subsets; a rerun draws the same ones.
  std::set<std::vector<std::string>> at_smallest;
  for (const auto& r : grid.runs)
    if (r.fraction == 0.05) at_smallest.insert(r.subset);
  CHECK(at_smallest.size() == 5);
  const auto again = run_fewshot(ids, fractions, 5, 2, 11, runner);
  for (size_t i = 0; i < grid.runs.size(); ++i) CHECK((again.runs[i].subset == grid.runs[i].subset));
  CHECK((grid.arm_dice(0.40, "pretrained") == std::vector<double>(5, 0.6)));
  CHECK(grid.summary[0].std == 0.0);
  CHECK(grid.csv().rfind("fraction,repeat,arm,dice,subset_size\n", 0) == 0);

  CHECK_THROWS_AS(run_fewshot(ids, {0.025}, 5, 2, 1, runner), ValidationError);
  CHECK_THROWS_AS(run_fewshot(ids, {0.0}, 5, 2, 1, runner), ValidationError);
  CHECK_THROWS_AS(run_fewshot(ids, {1.5}, 5, 2, 1, runner), ValidationError);
  CHECK_THROWS_AS(run_fewshot(ids, {0.5}, 0, 2, 1, runner), ValidationError);
}
