#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "brainssl/augment.hpp"
#include "brainssl/cohort.hpp"
#include "brainssl/metrics.hpp"
#include "brainssl/segmodel.hpp"
#include "brainssl/ssl.hpp"
#include "brainssl/transfer.hpp"

namespace brainssl {

/// Linear ramp 0 -> lr_peak over [0, warmup], then half-cosine decay to 0 at
/// `total`. ConfigError when warmup >= total; ValidationError when step is
/// outside [0, total].
double warmup_cosine_lr(int64_t step, double lr_peak, int64_t warmup, int64_t total);

struct TrainConfig {
  std::string stage = "finetune";  // pretrain1 | pretrain2 | finetune
  double lr_peak = 1e-4;
  int64_t warmup_steps = 500;
  int64_t total_steps = 1000;
  int64_t epochs = 0;  // > 0 replaces total_steps with epochs * batches per epoch
  int64_t batch_size = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  double dropout = 0.0;
  double grad_clip = 0.0;  // max global L2 norm; 0 disables
  int64_t val_every = 100;
  int64_t checkpoint_every = 0;  // 0 writes only the final (and best) checkpoint
  uint64_t seed = 0;
  int64_t num_threads = 1;
  std::filesystem::path out_dir;  // empty keeps everything in memory

  void validate() const;
  /// Steps actually run for a dataset of `n` training items.
  int64_t resolved_steps(int64_t n) const;

  /// Named hyperparameter sets: stage1-table, stage1-text, brats,
  /// atlas-stage2-table, atlas-stage2-text, atlas-finetune.
  static TrainConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);

struct RunLogRow {
  int64_t step = 0;
  std::string split;  // train | val
  double loss = 0.0;
  double lr = 0.0;
  int64_t wall_ms = 0;

  friend bool operator==(const RunLogRow&, const RunLogRow&) = default;
};

/// Loss trace. Steps are strictly increasing within each split.
class RunLog {
 public:
  void add(RunLogRow row);
  const std::vector<RunLogRow>& rows() const { return rows_; }
  std::vector<RunLogRow> split(const std::string& name) const;

  /// CSV `step,split,loss,lr,wall_ms`; floats printed round-trip exact.
  std::string csv() const;
  static RunLog parse_csv(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RunLog load(const std::filesystem::path& path);

  /// Equality on everything but wall_ms.
  bool same_trace(const RunLog& other) const;

 private:
  std::vector<RunLogRow> rows_;
};

/// An image with its K-class target.
struct LabeledCase {
  Volume image;
  SegMask mask;
};

struct SslTrainResult {
  Checkpoint final_checkpoint;
  RunLog log;
  // Mean training objective over the first and last min(20, steps / 5) steps.
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct SupervisedTrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  int64_t best_step = -1;
  double best_val_dice = -1.0;
  RunLog log;
};

/// AdamW over the SSL objective. Each step draws `batch_size` volumes from a
/// seeded epoch-wise shuffle (wrapping around small datasets) and builds two
/// augmented views per volume. Validation losses use fixed augmentation seeds.
/// Throws TrainingError naming the task whose loss is not finite.
SslTrainResult train_ssl(SslModelImpl& model, const std::vector<Volume>& train, const std::vector<Volume>& val,
                         const AugmentConfig& augment, const SslLossWeights& weights, const TrainConfig& config,
                         const nlohmann::json& config_snapshot = nlohmann::json::object());

/// Soft Dice training on random roi crops (plus random quarter-turns when
/// `rotate` is set). Validation runs sliding-window inference on whole volumes
/// and logs 1 - mean Dice; the best checkpoint maximizes validation Dice.
SupervisedTrainResult train_supervised(SegModelImpl& model, const std::vector<LabeledCase>& train,
                                       const std::vector<LabeledCase>& val, const TrainConfig& config,
                                       bool rotate = true,
                                       const nlohmann::json& config_snapshot = nlohmann::json::object());

/// Whole-volume probabilities (K, D, H, W) by sliding-window inference.
torch::Tensor predict_volume(SegModelImpl& model, const Volume& image);
CaseMetrics evaluate_model(SegModelImpl& model, const LabeledCase& c);

struct CvRow {
  std::string fold;  // "Fold 1".. or "Average"
  std::vector<double> dice_per_class;
  double dice_mean = 0.0;
};

struct CvTable {
  std::vector<std::string> class_names;
  std::vector<CvRow> rows;  // K folds then the average
  std::vector<std::vector<std::string>> evaluated;  // ids scored per fold
  std::string csv() const;
};

/// Trains on the ids outside a fold and returns the held-out case metrics.
using FoldRunner = std::function<std::vector<CaseMetrics>(int64_t fold, const std::vector<std::string>& train_ids,
                                                          const std::vector<std::string>& eval_ids)>;

/// The split must partition `subject_ids` exactly (ValidationError otherwise).
CvTable run_cv(const std::vector<std::string>& subject_ids, const FoldSplit& split,
               const std::vector<std::string>& class_names, const FoldRunner& runner);

struct FewShotRun {
  double fraction = 0.0;
  int64_t repeat = 0;
  std::string arm;  // pretrained | scratch
  double dice = 0.0;
  std::vector<std::string> subset;
};

struct FewShotSummary {
  double fraction = 0.0;
  std::string arm;
  double mean = 0.0;
  double std = 0.0;
};

struct FewShotGrid {
  std::vector<FewShotRun> runs;
  std::vector<FewShotSummary> summary;
  std::string csv() const;
  std::string summary_csv() const;
  /// Dice of one arm, per repeat, at one fraction.
  std::vector<double> arm_dice(double fraction, const std::string& arm) const;
};

/// Returns the test Dice of one arm trained on `subset`.
using ArmRunner = std::function<double(const std::string& arm, const std::vector<std::string>& subset, uint64_t seed)>;

/// Seed of the subset drawn for (fraction index, repeat).
uint64_t fewshot_subset_seed(uint64_t seed, size_t fraction_index, int64_t repeat);

/// For each fraction and repeat, draws one seeded subset and runs both arms on
/// it. ValidationError when a subset is smaller than `batch_size` or the
/// fractions are outside (0, 1].
FewShotGrid run_fewshot(const std::vector<std::string>& train_ids, const std::vector<double>& fractions,
                        int64_t repeats, int64_t batch_size, uint64_t seed, const ArmRunner& runner);

}  // namespace brainssl
