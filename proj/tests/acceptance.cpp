// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--allow-fail N,...]
//
// The exit status is nonzero when a criterion fails, unless it is listed in
// --allow-fail (its line then reads "FAIL (allowed)").

#include <torch/torch.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "brainssl/pipeline.hpp"
#include "gradcheck.hpp"
#include "metric_oracle.hpp"
#include "model_configs.hpp"
#include "test_util.hpp"

using namespace brainssl;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Parameter counts

Outcome parameter_counts() {
  const int64_t tiny = count_parameters(*SwinEncoder(EncoderConfig::tiny()));
  const int64_t small = count_parameters(*SwinEncoder(EncoderConfig::small()));
  const int64_t big = count_parameters(*SwinEncoder(EncoderConfig::big()));
  const int64_t totals[3] = {count_parameters(*SslModel(EncoderConfig::tiny())),
                             count_parameters(*SslModel(EncoderConfig::small())),
                             count_parameters(*SslModel(EncoderConfig::big()))};
  const int64_t want[3] = {19097191, 20982103, 26636839};
  const bool deltas = small - tiny == 1884912 && big - small == 5654736;
  bool totals_ok = true;
  for (int i = 0; i < 3; ++i) totals_ok = totals_ok && totals[i] == want[i];
  std::ostringstream d;
  d << "deltas " << small - tiny << " / " << big - small << ", totals " << totals[0] << " / " << totals[1] << " / "
    << totals[2];
  return {deltas && totals_ok, d.str()};
}

// 2. Shape contract

Outcome shape_contract() {
  torch::NoGradGuard g;
  torch::manual_seed(0);
  SwinEncoder enc(EncoderConfig::tiny(2));
  enc->eval();
  const auto out = enc->forward(torch::randn({2, 2, 96, 96, 96}));
  const int64_t dims[4] = {48, 96, 192, 384}, grid[4] = {48, 24, 12, 6};
  bool ok = out.levels.size() == 4;
  std::ostringstream d;
  for (size_t i = 0; ok && i < 4; ++i) {
    ok = ok && out.levels[i].sizes() == torch::IntArrayRef({2, dims[i], grid[i], grid[i], grid[i]});
    d << out.levels[i].sizes() << ' ';
  }
  ok = ok && out.bottleneck.sizes() == torch::IntArrayRef({2, 768, 3, 3, 3});
  d << out.bottleneck.sizes();
  return {ok, d.str()};
}

// 3. Gradients

Outcome gradients() {
  torch::manual_seed(4);
  SslModel ssl(test_configs::micro_encoder(1), test_configs::micro_heads());
  ssl->to(torch::kFloat64);
  SslBatch batch;
  batch.targets = torch::randn({4, 1, 16, 16, 16}, torch::kFloat64);
  batch.masks = (torch::rand({4, 1, 16, 16, 16}) < 0.3).to(torch::kFloat64);
  batch.inputs = batch.targets * (1 - batch.masks);
  batch.rotations = torch::tensor({0, 1, 2, 3}, torch::kInt64);
  const auto a = testing::grad_check(
      *ssl, [&] { return ssl_step(*ssl, batch, SslLossWeights{}).total; }, 120, 9, 1e-3, 1e-4, 1e-4);

  torch::manual_seed(7);
  SegModel seg(test_configs::micro_encoder(1), test_configs::micro_seg(2));
  seg->to(torch::kFloat64);
  auto x = torch::randn({1, 1, 16, 16, 16}, torch::kFloat64);
  auto t = (torch::rand({1, 2, 16, 16, 16}) < 0.3).to(torch::kFloat64);
  const auto b = testing::grad_check(*seg, [&] { return soft_dice_loss(seg->forward(x), t); }, 120, 3);

  std::ostringstream d;
  d << "ssl " << a.checked << " params, worst rel " << fmt("%.2e", a.worst_rel) << "; dice " << b.checked
    << " params, worst rel " << fmt("%.2e", b.worst_rel);
  return {a.failures == 0 && b.failures == 0 && a.checked >= 100 && b.checked >= 100, d.str()};
}

// 4. Metric oracle

Outcome metric_oracle() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> density(0.01, 0.4);
  int64_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Dims3 g{16, 16, 16};
    const auto p = testing::random_mask(g, density(rng), rng);
    const auto t = testing::random_mask(g, density(rng), rng);
    const int conn = trial % 2 == 0 ? 26 : 6;
    const auto c = connectivity_from_int(conn);
    const auto lw = lesionwise_f1(p, t, c);
    const auto ow = oracle::lesionwise(p, t, conn);
    const bool same = dice(p, t) == oracle::dice(p, t) &&
                      volume_difference(p, t, {1, 1, 1}).voxels == oracle::volume_difference(p, t) &&
                      lesion_count_diff(p, t, c) == oracle::lesion_count_diff(p, t, conn) &&
                      connected_components(t, c).count == oracle::count_components(t, conn) && lw.tp == ow.tp &&
                      lw.fp == ow.fp && lw.fn == ow.fn && lw.f1 == ow.f1;
    mismatches += same ? 0 : 1;
  }
  return {mismatches == 0, "1000 pairs at 16^3, " + std::to_string(mismatches) + " mismatches"};
}

// 5. Transfer invariants

Outcome transfer_invariants() {
  torch::NoGradGuard g;
  torch::manual_seed(5);
  SegModel seg(test_configs::micro_encoder(2), test_configs::micro_seg(3));
  seg->eval();
  auto x = torch::randn({1, 2, 16, 16, 16});
  auto before = seg->forward(x);
  expand_input_channels(*seg, 4, 11);
  const double expand_err =
      (seg->forward(torch::cat({x, torch::zeros({1, 2, 16, 16, 16})}, 1)) - before).abs().max().item<double>();

  SegModel two(test_configs::micro_encoder(2), test_configs::micro_seg(3));
  two->eval();
  auto one = x.slice(1, 0, 1);
  auto zeroed = two->forward(torch::cat({one, torch::zeros_like(one)}, 1));
  restrict_input_channels(*two, {0});
  const double restrict_err = (two->forward(one) - zeroed).abs().max().item<double>();

  testing::TempDir dir;
  SslModel ssl(test_configs::micro_encoder(2), test_configs::micro_heads());
  const auto ck = capture_checkpoint(*ssl, {{"encoder", {{"variant", "micro"}}}}, 3, 1);
  save_checkpoint(ck, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  const bool exact = back == ck && testing::file_bytes(dir / "a.ckpt") == testing::file_bytes(dir / "b.ckpt");

  std::ostringstream d;
  d << "expansion " << fmt("%.1e", expand_err) << ", restriction " << fmt("%.1e", restrict_err)
    << ", round trip " << (exact ? "bit-exact" : "differs");
  return {expand_err <= 1e-6 && restrict_err <= 1e-6 && exact, d.str()};
}

// ---------------------------------------------------------------------------
// Micro three-stage pipeline (criteria 6, 7, 8)

ExperimentConfig pipeline_config() {
  auto cfg = test_configs::micro_experiment();
  cfg.train_block = {{"lr_peak", 5e-4}, {"warmup_steps", 10}, {"batch_size", 2}, {"weight_decay", 0.01},
                     {"val_every", 100}, {"seed", 0}};
  cfg.train_block["pretrain1"] = {{"total_steps", 600}};
  cfg.train_block["pretrain2"] = {{"total_steps", 300}};
  cfg.train_block["finetune"] = {{"total_steps", 600}, {"lr_peak", 3e-3}, {"val_every", 50}};
  return cfg;
}

struct PipelineRun {
  SslTrainResult stage1, stage2;
  FinetuneOutcome stage3;
};

std::vector<Volume> images_of(const std::vector<LabeledCase>& cases) {
  std::vector<Volume> out;
  for (const auto& c : cases) out.push_back(c.image);
  return out;
}

// pretrain1 on 16 healthy phantoms (2 more for validation), pretrain2 on the
// images of 8 diseased phantoms, finetune on the same 8 (last 2 validate),
// test on 4 held-out diseased phantoms.
PipelineRun run_pipeline(const std::filesystem::path& out) {
  const auto cfg = pipeline_config();
  const auto healthy = phantom_volumes(test_configs::micro_phantom(false, 100), 18);
  const auto diseased = phantom_cases(test_configs::micro_phantom(true, 500), 8);
  const auto test = phantom_cases(test_configs::micro_phantom(true, 900), 4);
  auto [h_train, h_val] = split_tail(healthy, 2);
  PipelineRun r;
  r.stage1 = run_pretrain(cfg, "pretrain1", h_train, h_val, nullptr, true, out / "pretrain1");
  auto [d_train, d_val] = split_tail(images_of(diseased), 2);
  r.stage2 = run_pretrain(cfg, "pretrain2", d_train, d_val, &r.stage1.final_checkpoint, true, out / "pretrain2");
  auto [c_train, c_val] = split_tail(diseased, 2);
  r.stage3 = run_finetune(cfg, c_train, c_val, test, &r.stage2.final_checkpoint, true, out / "finetune");
  return r;
}

testing::TempDir* first_dir = nullptr;
std::optional<PipelineRun> first_run;

Outcome pipeline_smoke() {
  static testing::TempDir dir;
  first_dir = &dir;
  first_run = run_pipeline(dir.path());
  const auto& r = *first_run;
  const double drop1 = 1.0 - r.stage1.final_loss / r.stage1.initial_loss;
  const double drop2 = 1.0 - r.stage2.final_loss / r.stage2.initial_loss;
  std::ostringstream d;
  d << "pretrain1 loss " << fmt("%.3f", r.stage1.initial_loss) << " -> " << fmt("%.3f", r.stage1.final_loss) << " ("
    << fmt("%.0f", 100 * drop1) << "% drop), pretrain2 " << fmt("%.0f", 100 * drop2) << "% drop, held-out Dice "
    << fmt("%.3f", r.stage3.test_dice);
  return {drop1 >= 0.30 && r.stage3.test_dice >= 0.5, d.str()};
}

Outcome determinism() {
  if (!first_run) pipeline_smoke();
  testing::TempDir dir;
  const auto again = run_pipeline(dir.path());
  const auto& a = *first_run;
  bool logs = a.stage1.log.same_trace(again.stage1.log) && a.stage2.log.same_trace(again.stage2.log) &&
              a.stage3.training.log.same_trace(again.stage3.training.log);
  bool ckpts = a.stage1.final_checkpoint == again.stage1.final_checkpoint &&
               a.stage2.final_checkpoint == again.stage2.final_checkpoint &&
               a.stage3.training.final_checkpoint == again.stage3.training.final_checkpoint;
  for (const char* stage : {"pretrain1", "pretrain2", "finetune"}) {
    const auto p = std::filesystem::path(stage);
    ckpts = ckpts && testing::file_bytes(first_dir->path() / p / "final.ckpt") ==
                         testing::file_bytes(dir.path() / p / "final.ckpt");
    logs = logs && RunLog::load(first_dir->path() / p / "runlog.csv").same_trace(RunLog::load(dir.path() / p / "runlog.csv"));
  }
  return {logs && ckpts, std::string("run logs ") + (logs ? "identical" : "differ") + " (wall_ms excluded), checkpoints " +
                             (ckpts ? "bit-identical" : "differ")};
}

// 7. Few-shot trend

Outcome fewshot_trend() {
  auto cfg = pipeline_config();
  cfg.train_block["finetune"] = {{"total_steps", 300}, {"lr_peak", 3e-3}, {"val_every", 300}};
  const auto pool = phantom_cases(test_configs::micro_phantom(true, 500), 16);
  const auto test = phantom_cases(test_configs::micro_phantom(true, 900), 4);

  Checkpoint stage1;
  if (first_run) {
    stage1 = first_run->stage1.final_checkpoint;
  } else {
    const auto healthy = phantom_volumes(test_configs::micro_phantom(false, 100), 18);
    auto [h_train, h_val] = split_tail(healthy, 2);
    stage1 = run_pretrain(cfg, "pretrain1", h_train, h_val, nullptr, true, "").final_checkpoint;
  }
  const auto stage2 = run_pretrain(cfg, "pretrain2", images_of(pool), {}, &stage1, true, "").final_checkpoint;

  std::map<std::string, const LabeledCase*> by_id;
  std::vector<std::string> ids;
  for (const auto& c : pool) {
    by_id[c.image.subject_id()] = &c;
    ids.push_back(c.image.subject_id());
  }
  const std::vector<double> fractions{0.125, 0.25, 0.5};
  const auto grid = run_fewshot(ids, fractions, 5, 2, 0,
                                [&](const std::string& arm, const std::vector<std::string>& subset, uint64_t seed) {
                                  std::vector<LabeledCase> cases;
                                  for (const auto& id : subset) cases.push_back(*by_id.at(id));
                                  const Checkpoint* init = arm == "pretrained" ? &stage2 : nullptr;
                                  return run_finetune(cfg, cases, {}, test, init, true, "", seed).test_dice;
                                });
  const auto pre = grid.arm_dice(0.125, "pretrained");
  const auto scratch = grid.arm_dice(0.125, "scratch");
  int wins = 0;
  std::ostringstream d;
  d << "at 0.125: ";
  for (size_t i = 0; i < pre.size(); ++i) {
    wins += pre[i] >= scratch[i] ? 1 : 0;
    d << fmt("%.3f", pre[i]) << (pre[i] >= scratch[i] ? ">=" : "<") << fmt("%.3f", scratch[i]) << ' ';
  }
  d << "(" << wins << "/5); means";
  for (const auto& s : grid.summary) d << ' ' << s.arm[0] << fmt("%.3f", s.fraction) << '=' << fmt("%.3f", s.mean);
  return {wins >= 4, d.str()};
}

// 9. Documentation-level references

Outcome documentation_note() {
  std::ifstream in(std::string(BRAINSSL_SOURCE_DIR) + "/README.md");
  std::stringstream s;
  s << in.rdbuf();
  const auto text = s.str();
  const bool ok = text.find("0.9115") != std::string::npos && text.find("0.712") != std::string::npos &&
                  text.find("not asserted") != std::string::npos;
  return {ok, ok ? "README records the reference scores as documentation only; no test asserts them"
                 : "README lacks the non-reproducibility note"};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, allowed;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") only = parse_list(argv[i + 1]);
    else if (flag == "--allow-fail") allowed = parse_list(argv[i + 1]);
  }
  torch::set_num_threads(1);

  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "parameter counts", 10, parameter_counts},
      {2, "shape contract", 60, shape_contract},
      {3, "gradient correctness", 300, gradients},
      {4, "metric oracle equivalence", 120, metric_oracle},
      {5, "transfer invariants", 120, transfer_invariants},
      {6, "pipeline smoke + learning", 1200, pipeline_smoke},
      {7, "few-shot trend", 3600, fewshot_trend},
      {8, "determinism", 1200, determinism},
      {9, "non-reproducibility note", 10, documentation_note},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t = clk::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = seconds_since(t);
    const bool in_time = s < c.limit_s;
    const bool pass = o.pass && in_time;
    const char* verdict = pass ? "PASS" : allowed.count(c.id) ? "FAIL (allowed)" : "FAIL";
    if (!pass && !allowed.count(c.id)) ++failed;
    std::cout << "criterion " << c.id << " " << verdict << ": " << c.name << " | " << o.detail << " | "
              << fmt("%.1f", s) << " s (limit " << c.limit_s << " s)" << (in_time ? "" : " over time") << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
