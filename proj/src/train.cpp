#include "brainssl/train.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "brainssl/error.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

double warmup_cosine_lr(int64_t step, double lr_peak, int64_t warmup, int64_t total) {
  if (warmup >= total) throw ConfigError("warmup_steps (" + std::to_string(warmup) + ") must be < total_steps (" +
                                         std::to_string(total) + ")");
  if (warmup < 0) throw ConfigError("warmup_steps must be >= 0");
  if (step < 0 || step > total) throw ValidationError("step " + std::to_string(step) + " outside [0, total]");
  if (step < warmup) return lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const {
  if (stage != "pretrain1" && stage != "pretrain2" && stage != "finetune")
    throw ConfigError("unknown stage '" + stage + "'");
  if (!(lr_peak > 0.0)) throw ConfigError("lr_peak must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (epochs == 0 && warmup_steps >= total_steps)
    throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") must be < total_steps (" +
                      std::to_string(total_steps) + ")");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (val_every < 1) throw ConfigError("val_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (num_threads < 1) throw ConfigError("num_threads must be >= 1");
}

int64_t TrainConfig::resolved_steps(int64_t n) const {
  if (epochs == 0) return total_steps;
  const int64_t per_epoch = (std::max<int64_t>(n, 1) + batch_size - 1) / batch_size;
  const int64_t steps = epochs * per_epoch;
  if (warmup_steps >= steps)
    throw ConfigError(std::to_string(epochs) + " epochs give " + std::to_string(steps) +
                      " steps, not more than warmup_steps " + std::to_string(warmup_steps));
  return steps;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  TrainConfig c;
  c.warmup_steps = 500;
  if (name == "stage1-table") {
    c.stage = "pretrain1";
    c.lr_peak = 1e-6;
    c.total_steps = 200000;
    c.batch_size = 128;
  } else if (name == "stage1-text") {
    c.stage = "pretrain1";
    c.lr_peak = 6e-6;
    c.total_steps = 15000;
    c.batch_size = 128;
  } else if (name == "brats") {
    c.stage = "finetune";
    c.lr_peak = 1e-4;
    c.total_steps = 50000;
    c.batch_size = 2;
  } else if (name == "atlas-stage2-table") {
    c.stage = "pretrain2";
    c.lr_peak = 3e-3;
    c.total_steps = 600;
    c.batch_size = 4;
  } else if (name == "atlas-stage2-text") {
    c.stage = "pretrain2";
    c.lr_peak = 5e-3;
    c.total_steps = 600;
    c.batch_size = 4;
  } else if (name == "atlas-finetune") {
    c.stage = "finetune";
    c.lr_peak = 1e-4;
    c.epochs = 600;
    c.batch_size = 4;
    c.dropout = 0.1;
  } else {
    throw ConfigError("unknown train preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> TrainConfig::preset_names() {
  return {"stage1-table", "stage1-text", "brats", "atlas-stage2-table", "atlas-stage2-text", "atlas-finetune"};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"lr_peak", c.lr_peak},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"dropout", c.dropout},
          {"grad_clip", c.grad_clip},
          {"val_every", c.val_every},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed},
          {"num_threads", c.num_threads}};
}

// ---------------------------------------------------------------------------
// RunLog

void RunLog::add(RunLogRow row) {
  if (row.split != "train" && row.split != "val") throw ValidationError("run log split must be train or val");
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
    if (it->split == row.split) {
      if (row.step <= it->step)
        throw ValidationError("run log steps must increase within split " + row.split + " (" +
                              std::to_string(row.step) + " after " + std::to_string(it->step) + ")");
      break;
    }
  rows_.push_back(std::move(row));
}

std::vector<RunLogRow> RunLog::split(const std::string& name) const {
  std::vector<RunLogRow> out;
  for (const auto& r : rows_)
    if (r.split == name) out.push_back(r);
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, int64_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("run log line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& s, int64_t line) {
  int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("run log line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

std::string RunLog::csv() const {
  std::string out = "step,split,loss,lr,wall_ms\n";
  for (const auto& r : rows_)
    out += std::to_string(r.step) + "," + r.split + "," + fmt_double(r.loss) + "," + fmt_double(r.lr) + "," +
           std::to_string(r.wall_ms) + "\n";
  return out;
}

RunLog RunLog::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,split,loss,lr,wall_ms")
    throw FormatError("run log must start with the header step,split,loss,lr,wall_ms");
  RunLog log;
  int64_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError("run log line " + std::to_string(n) + ": expected 5 fields");
    log.add({parse_int(f[0], n), f[1], parse_double(f[2], n), parse_double(f[3], n), parse_int(f[4], n)});
  }
  return log;
}

void RunLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv();
}

RunLog RunLog::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

bool RunLog::same_trace(const RunLog& other) const {
  if (rows_.size() != other.rows_.size()) return false;
  for (size_t i = 0; i < rows_.size(); ++i) {
    const auto& a = rows_[i];
    const auto& b = other.rows_[i];
    if (a.step != b.step || a.split != b.split || std::memcmp(&a.loss, &b.loss, sizeof(double)) != 0 ||
        std::memcmp(&a.lr, &b.lr, sizeof(double)) != 0)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

// Epoch-wise seeded shuffle; wraps into the next epoch mid-batch.
class Sampler {
 public:
  Sampler(int64_t n, uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

  int64_t next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(static_cast<size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(seed_, static_cast<uint64_t>(epoch_)));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  int64_t n_;
  uint64_t seed_;
  int64_t epoch_ = 0;
  std::vector<int64_t> order_;
  size_t pos_ = 0;
};

constexpr uint64_t kOrderStream = 1;
constexpr uint64_t kViewStream = 2;
constexpr uint64_t kValStream = 3;
constexpr uint64_t kCropStream = 4;

struct Optimizer {
  std::unique_ptr<torch::optim::AdamW> adam;
  std::vector<torch::Tensor> params;

  Optimizer(torch::nn::Module& model, const TrainConfig& c) {
    for (auto& p : model.parameters())
      if (p.requires_grad()) params.push_back(p);
    if (params.empty()) throw ValidationError("model has no trainable parameters");
    adam = std::make_unique<torch::optim::AdamW>(
        params, torch::optim::AdamWOptions(c.lr_peak).betas({c.beta1, c.beta2}).weight_decay(c.weight_decay));
  }

  void set_lr(double lr) {
    for (auto& g : adam->param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
  }
};

void check_finite(const torch::Tensor& loss, const std::string& task, int64_t step, const std::string& stage) {
  if (!std::isfinite(loss.item<double>()))
    throw TrainingError("non-finite " + task + " loss at step " + std::to_string(step) + " of " + stage);
}

nlohmann::json snapshot_with(const nlohmann::json& snapshot, const TrainConfig& c) {
  nlohmann::json s = snapshot.is_object() ? snapshot : nlohmann::json::object();
  if (!s.contains("train")) s["train"] = to_json(c);
  return s;
}

void prepare_out_dir(const TrainConfig& c) {
  if (c.out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec) throw IoError("cannot create " + c.out_dir.string() + ": " + ec.message());
}

std::string step_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

// Seeds torch (dropout) and pins the thread count so reductions repeat exactly.
void enter_deterministic(const TrainConfig& c) {
  torch::set_num_threads(static_cast<int>(c.num_threads));
  torch::manual_seed(c.seed);
}

SslBatch ssl_batch_for(const std::vector<Volume>& vols, const std::vector<int64_t>& idx, const AugmentConfig& aug,
                       uint64_t stream_seed, uint64_t first) {
  std::vector<SslSample> samples;
  samples.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i)
    samples.push_back(make_ssl_views(vols[static_cast<size_t>(idx[i])], aug, derive_seed(stream_seed, first + i)));
  return make_ssl_batch(samples);
}

// Validation chunks of at least two pairs so the contrastive term is defined.
std::vector<std::vector<int64_t>> val_chunks(int64_t n, int64_t batch) {
  std::vector<std::vector<int64_t>> chunks;
  const int64_t size = std::max<int64_t>(batch, 2);
  for (int64_t i = 0; i < n; i += size) {
    std::vector<int64_t> c;
    for (int64_t j = i; j < std::min(n, i + size); ++j) c.push_back(j);
    chunks.push_back(std::move(c));
  }
  if (chunks.size() > 1 && chunks.back().size() == 1) {
    chunks[chunks.size() - 2].push_back(chunks.back()[0]);
    chunks.pop_back();
  }
  return chunks;
}

double ssl_validation_loss(SslModelImpl& model, const std::vector<Volume>& val, const AugmentConfig& aug,
                           const SslLossWeights& w, const TrainConfig& c) {
  torch::NoGradGuard g;
  const bool was_training = model.is_training();
  model.eval();
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& chunk : val_chunks(static_cast<int64_t>(val.size()), c.batch_size)) {
    const auto batch = ssl_batch_for(val, chunk, aug, derive_seed(c.seed, kValStream), static_cast<uint64_t>(chunk[0]));
    sum += ssl_step(model, batch, w).total.item<double>() * static_cast<double>(chunk.size());
    count += static_cast<int64_t>(chunk.size());
  }
  model.train(was_training);
  return sum / static_cast<double>(count);
}

double mean_of(const std::vector<double>& v, size_t from, size_t to) {
  double s = 0.0;
  for (size_t i = from; i < to; ++i) s += v[i];
  return s / static_cast<double>(to - from);
}

}  // namespace

SslTrainResult train_ssl(SslModelImpl& model, const std::vector<Volume>& train, const std::vector<Volume>& val,
                         const AugmentConfig& augment, const SslLossWeights& weights, const TrainConfig& config,
                         const nlohmann::json& config_snapshot) {
  config.validate();
  weights.validate();
  if (train.empty()) throw ValidationError("SSL training set is empty");
  if (weights.contrastive > 0.0 && config.batch_size < 2)
    throw ValidationError("contrastive loss needs batch_size >= 2, got " + std::to_string(config.batch_size));
  if (weights.contrastive > 0.0 && val.size() == 1)
    throw ValidationError("contrastive validation needs at least 2 volumes");
  for (const auto& v : train)
    if (v.channels() != model.in_channels())
      throw ShapeError("volume " + v.subject_id() + " has " + std::to_string(v.channels()) +
                       " channels, model expects " + std::to_string(model.in_channels()));
  enter_deterministic(config);
  prepare_out_dir(config);
  const int64_t total = config.resolved_steps(static_cast<int64_t>(train.size()));
  const auto snapshot = snapshot_with(config_snapshot, config);

  SslTrainResult result;
  Optimizer opt(model, config);
  Sampler sampler(static_cast<int64_t>(train.size()), derive_seed(config.seed, kOrderStream));
  const uint64_t view_seed = derive_seed(config.seed, kViewStream);
  const auto start = Clock::now();
  auto wall = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  };
  std::vector<double> train_losses;
  auto validate = [&](int64_t step) {
    if (val.empty()) return;
    const double l = ssl_validation_loss(model, val, augment, weights, config);
    if (!std::isfinite(l)) throw TrainingError("non-finite validation loss at step " + std::to_string(step));
    result.log.add({step, "val", l, warmup_cosine_lr(step, config.lr_peak, config.warmup_steps, total), wall()});
  };

  model.train();
  validate(0);
  for (int64_t step = 0; step < total; ++step) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < config.batch_size; ++i) idx.push_back(sampler.next());
    const auto batch = ssl_batch_for(train, idx, augment, view_seed, static_cast<uint64_t>(step * config.batch_size));
    const double lr = warmup_cosine_lr(step, config.lr_peak, config.warmup_steps, total);
    opt.set_lr(lr);
    opt.adam->zero_grad();
    const auto losses = ssl_step(model, batch, weights);
    check_finite(losses.inpaint, "inpainting", step, config.stage);
    check_finite(losses.rotation, "rotation", step, config.stage);
    check_finite(losses.contrastive, "contrastive", step, config.stage);
    check_finite(losses.total, "total", step, config.stage);
    losses.total.backward();
    if (config.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(opt.params, config.grad_clip);
    opt.adam->step();
    const double l = losses.total.item<double>();
    train_losses.push_back(l);
    result.log.add({step, "train", l, lr, wall()});

    const int64_t done = step + 1;
    if (done % config.val_every == 0 || done == total) validate(done);
    if (!config.out_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != total)
      save_checkpoint(capture_checkpoint(model, snapshot, done, config.seed), config.out_dir / step_name(done));
  }

  result.final_checkpoint = capture_checkpoint(model, snapshot, total, config.seed);
  const size_t w = std::clamp<size_t>(train_losses.size() / 5, 1, 20);
  result.initial_loss = mean_of(train_losses, 0, w);
  result.final_loss = mean_of(train_losses, train_losses.size() - w, train_losses.size());
  if (!config.out_dir.empty()) {
    save_checkpoint(result.final_checkpoint, config.out_dir / "final.ckpt");
    result.log.save(config.out_dir / "runlog.csv");
  }
  return result;
}

namespace {

torch::Tensor mask_tensor(const SegMask& m) {
  const auto& d = m.dims();
  auto labels = m.labels();
  return torch::from_blob(const_cast<uint8_t*>(labels.data()), {m.classes(), d.d, d.h, d.w}, torch::kUInt8)
      .to(torch::kFloat32);
}

// Pads (C, D, H, W) symmetrically to at least the roi, extra voxel after.
torch::Tensor pad_to_roi(const torch::Tensor& t, Dims3 roi) {
  std::vector<int64_t> pad;
  for (int a = 2; a >= 0; --a) {
    const int64_t extra = std::max<int64_t>(0, roi[a] - t.size(a + 1));
    pad.push_back(extra / 2);
    pad.push_back(extra - extra / 2);
  }
  if (std::all_of(pad.begin(), pad.end(), [](int64_t p) { return p == 0; })) return t;
  return torch::constant_pad_nd(t, pad, 0.0);
}

struct PreparedCase {
  torch::Tensor image;   // (C, D, H, W) padded to the roi
  torch::Tensor target;  // (K, D, H, W) padded to the roi
};

}  // namespace

torch::Tensor predict_volume(SegModelImpl& model, const Volume& image) {
  torch::NoGradGuard g;
  const bool was_training = model.is_training();
  model.eval();
  const auto& s = model.seg_config();
  auto probs = sliding_window_infer([&](const torch::Tensor& x) { return model.forward(x); }, volume_to_tensor(image),
                                    s.roi, s.overlap);
  model.train(was_training);
  return probs.contiguous();
}

CaseMetrics evaluate_model(SegModelImpl& model, const LabeledCase& c) {
  auto probs = predict_volume(model, c.image);
  if (probs.size(0) != c.mask.classes())
    throw ShapeError("model predicts " + std::to_string(probs.size(0)) + " classes, target has " +
                     std::to_string(c.mask.classes()));
  return evaluate_case({probs.data_ptr<float>(), static_cast<size_t>(probs.numel())}, c.mask, 0.5,
                       c.image.spacing(), Connectivity::Full26, c.image.subject_id());
}

SupervisedTrainResult train_supervised(SegModelImpl& model, const std::vector<LabeledCase>& train,
                                       const std::vector<LabeledCase>& val, const TrainConfig& config, bool rotate,
                                       const nlohmann::json& config_snapshot) {
  config.validate();
  if (train.empty()) throw ValidationError("supervised training set is empty");
  const auto& seg = model.seg_config();
  std::vector<PreparedCase> cases;
  for (const auto& c : train) {
    if (c.image.channels() != model.in_channels())
      throw ShapeError("case " + c.image.subject_id() + " has " + std::to_string(c.image.channels()) +
                       " channels, model expects " + std::to_string(model.in_channels()));
    if (c.mask.classes() != seg.out_channels)
      throw ShapeError("case " + c.image.subject_id() + " has " + std::to_string(c.mask.classes()) +
                       " classes, model predicts " + std::to_string(seg.out_channels));
    if (!(c.mask.dims() == c.image.dims())) throw ShapeError("case " + c.image.subject_id() + ": mask/image dims differ");
    cases.push_back({pad_to_roi(volume_to_tensor(c.image), seg.roi), pad_to_roi(mask_tensor(c.mask), seg.roi)});
  }
  enter_deterministic(config);
  prepare_out_dir(config);
  const int64_t total = config.resolved_steps(static_cast<int64_t>(train.size()));
  const auto snapshot = snapshot_with(config_snapshot, config);

  SupervisedTrainResult result;
  Optimizer opt(model, config);
  Sampler sampler(static_cast<int64_t>(cases.size()), derive_seed(config.seed, kOrderStream));
  Rng crop_rng(derive_seed(config.seed, kCropStream));
  const auto start = Clock::now();
  auto wall = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  };
  auto validate = [&](int64_t step) {
    if (val.empty()) return;
    std::vector<double> d;
    for (const auto& c : val) d.push_back(evaluate_model(model, c).dice_mean);
    const double dice = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    result.log.add({step, "val", 1.0 - dice, warmup_cosine_lr(step, config.lr_peak, config.warmup_steps, total), wall()});
    if (dice > result.best_val_dice) {
      result.best_val_dice = dice;
      result.best_step = step;
      result.best_checkpoint = capture_checkpoint(model, snapshot, step, config.seed);
    }
  };

  model.train();
  validate(0);
  for (int64_t step = 0; step < total; ++step) {
    std::vector<torch::Tensor> xs, ys;
    for (int64_t i = 0; i < config.batch_size; ++i) {
      const auto& c = cases[static_cast<size_t>(sampler.next())];
      std::array<int64_t, 3> o{};
      for (int a = 0; a < 3; ++a) o[static_cast<size_t>(a)] = uniform_int(crop_rng, 0, c.image.size(a + 1) - seg.roi[a]);
      auto x = c.image.slice(1, o[0], o[0] + seg.roi.d).slice(2, o[1], o[1] + seg.roi.h).slice(3, o[2], o[2] + seg.roi.w);
      auto y = c.target.slice(1, o[0], o[0] + seg.roi.d).slice(2, o[1], o[1] + seg.roi.h).slice(3, o[2], o[2] + seg.roi.w);
      const int k = rotate ? static_cast<int>(uniform_int(crop_rng, 0, 3)) : 0;
      if (k != 0) {
        x = torch::rot90(x, k, {2, 3});
        y = torch::rot90(y, k, {2, 3});
      }
      xs.push_back(x);
      ys.push_back(y);
    }
    const double lr = warmup_cosine_lr(step, config.lr_peak, config.warmup_steps, total);
    opt.set_lr(lr);
    opt.adam->zero_grad();
    auto loss = soft_dice_loss(model.forward(torch::stack(xs)), torch::stack(ys));
    check_finite(loss, "dice", step, config.stage);
    loss.backward();
    if (config.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(opt.params, config.grad_clip);
    opt.adam->step();
    result.log.add({step, "train", loss.item<double>(), lr, wall()});

    const int64_t done = step + 1;
    if (done % config.val_every == 0 || done == total) validate(done);
    if (!config.out_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != total)
      save_checkpoint(capture_checkpoint(model, snapshot, done, config.seed), config.out_dir / step_name(done));
  }

  result.final_checkpoint = capture_checkpoint(model, snapshot, total, config.seed);
  if (result.best_step < 0) {
    result.best_checkpoint = result.final_checkpoint;
    result.best_step = total;
  }
  if (!config.out_dir.empty()) {
    save_checkpoint(result.final_checkpoint, config.out_dir / "final.ckpt");
    save_checkpoint(result.best_checkpoint, config.out_dir / "best.ckpt");
    result.log.save(config.out_dir / "runlog.csv");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Experiment harnesses

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string CvTable::csv() const {
  std::string out = "fold";
  for (const auto& n : class_names) out += "," + n;
  out += ",mean\n";
  for (const auto& r : rows) {
    out += r.fold;
    for (double d : r.dice_per_class) out += "," + fmt6(d);
    out += "," + fmt6(r.dice_mean) + "\n";
  }
  return out;
}

CvTable run_cv(const std::vector<std::string>& subject_ids, const FoldSplit& split,
               const std::vector<std::string>& class_names, const FoldRunner& runner) {
  validate_split(split);
  std::set<std::string> ids(subject_ids.begin(), subject_ids.end());
  if (ids.size() != subject_ids.size()) throw ValidationError("duplicate subject ids in the cross-validation set");
  std::set<std::string> covered;
  for (const auto& f : split.folds)
    for (const auto& id : f) {
      if (!ids.count(id)) throw ValidationError("split lists unknown subject '" + id + "'");
      covered.insert(id);
    }
  for (const auto& id : ids)
    if (!covered.count(id)) throw ValidationError("subject '" + id + "' is in no fold");

  CvTable table;
  table.class_names = class_names;
  const auto k = static_cast<size_t>(class_names.size());
  for (int64_t f = 0; f < split.k(); ++f) {
    const auto& held = split.folds[static_cast<size_t>(f)];
    const auto metrics = runner(f, split.training_ids(f), held);
    if (metrics.size() != held.size())
      throw ValidationError("fold " + std::to_string(f + 1) + " returned " + std::to_string(metrics.size()) +
                            " cases for " + std::to_string(held.size()) + " held-out subjects");
    CvRow row;
    row.fold = "Fold " + std::to_string(f + 1);
    row.dice_per_class.assign(k, 0.0);
    for (const auto& m : metrics) {
      if (m.dice_per_class.size() != k) throw ValidationError("class count mismatch in fold results");
      for (size_t c = 0; c < k; ++c) row.dice_per_class[c] += m.dice_per_class[c];
      row.dice_mean += m.dice_mean;
    }
    for (auto& d : row.dice_per_class) d /= static_cast<double>(metrics.size());
    row.dice_mean /= static_cast<double>(metrics.size());
    table.rows.push_back(row);
    table.evaluated.push_back(held);
  }
  CvRow avg;
  avg.fold = "Average";
  avg.dice_per_class.assign(k, 0.0);
  for (const auto& r : table.rows) {
    for (size_t c = 0; c < k; ++c) avg.dice_per_class[c] += r.dice_per_class[c];
    avg.dice_mean += r.dice_mean;
  }
  const auto n = static_cast<double>(table.rows.size());
  for (auto& d : avg.dice_per_class) d /= n;
  avg.dice_mean /= n;
  table.rows.push_back(avg);
  return table;
}

uint64_t fewshot_subset_seed(uint64_t seed, size_t fraction_index, int64_t repeat) {
  return derive_seed(derive_seed(seed, fraction_index), static_cast<uint64_t>(repeat));
}

std::string FewShotGrid::csv() const {
  std::string out = "fraction,repeat,arm,dice,subset_size\n";
  for (const auto& r : runs)
    out += fmt6(r.fraction) + "," + std::to_string(r.repeat) + "," + r.arm + "," + fmt6(r.dice) + "," +
           std::to_string(r.subset.size()) + "\n";
  return out;
}

std::string FewShotGrid::summary_csv() const {
  std::string out = "fraction,arm,mean,std\n";
  for (const auto& s : summary) out += fmt6(s.fraction) + "," + s.arm + "," + fmt6(s.mean) + "," + fmt6(s.std) + "\n";
  return out;
}

std::vector<double> FewShotGrid::arm_dice(double fraction, const std::string& arm) const {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.fraction == fraction && r.arm == arm) out.push_back(r.dice);
  return out;
}

FewShotGrid run_fewshot(const std::vector<std::string>& train_ids, const std::vector<double>& fractions,
                        int64_t repeats, int64_t batch_size, uint64_t seed, const ArmRunner& runner) {
  if (repeats < 1) throw ValidationError("few-shot repeats must be >= 1");
  if (fractions.empty()) throw ValidationError("few-shot needs at least one fraction");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("few-shot fraction " + std::to_string(f) + " outside (0, 1]");
  for (double f : fractions) {
    const int64_t size = subsample_size(static_cast<int64_t>(train_ids.size()), f);
    if (size < batch_size)
      throw ValidationError("fraction " + std::to_string(f) + " keeps " + std::to_string(size) +
                            " subjects, fewer than batch_size " + std::to_string(batch_size));
  }
  const std::array<std::string, 2> arms{"pretrained", "scratch"};
  FewShotGrid grid;
  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    for (int64_t r = 0; r < repeats; ++r) {
      const uint64_t s = fewshot_subset_seed(seed, fi, r);
      const auto subset = subsample_fraction(train_ids, fractions[fi], s);
      for (const auto& arm : arms)
        grid.runs.push_back({fractions[fi], r, arm, runner(arm, subset, derive_seed(s, 7)), subset});
    }
    for (const auto& arm : arms) {
      const auto d = grid.arm_dice(fractions[fi], arm);
      const auto m = summarize(d);
      grid.summary.push_back({fractions[fi], arm, m.mean, m.std});
    }
  }
  return grid;
}

}  // namespace brainssl
