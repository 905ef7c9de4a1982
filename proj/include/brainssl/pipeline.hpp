#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "brainssl/augment.hpp"
#include "brainssl/phantom.hpp"
#include "brainssl/segmodel.hpp"
#include "brainssl/ssl.hpp"
#include "brainssl/train.hpp"
#include "brainssl/transfer.hpp"

namespace brainssl {

struct DataConfig {
  std::string root;  // empty: $BRAINSSL_DATA_ROOT, else the working directory
  std::string healthy_dir = "healthy";
  std::vector<std::string> healthy_modalities{"T1w", "T2-FLAIR"};
  std::string diseased_dir = "diseased";
  std::vector<std::string> diseased_modalities{"T1w", "T2-FLAIR"};
  /// Checkpoint channels kept, in order, when the target has fewer inputs.
  /// Empty keeps the leading ones.
  std::vector<int64_t> keep_channels;
  int64_t classes = 3;
  int64_t min_slices = 0;
  bool normalize = true;
  int64_t n_val = 2;   // taken from the end of each training pool
  int64_t n_test = 4;  // diseased cases held out from fine-tuning
  int64_t folds = 5;
  std::string split_file;  // empty: seeded split
  std::vector<double> fractions{0.125, 0.25, 0.5};
  int64_t repeats = 5;

  std::filesystem::path resolved_root() const;
};

/// The five config blocks. Training values may be refined per stage with
/// train.pretrain1 / train.pretrain2 / train.finetune sub-blocks.
struct ExperimentConfig {
  DataConfig data;
  EncoderConfig encoder;  // in_channels 0 = follow the data
  SslHeadConfig heads;
  SslLossWeights weights;
  AugmentConfig augment;
  SegConfig seg;
  bool seg_rotate = true;
  nlohmann::json train_block = nlohmann::json::object();  // raw, resolved per stage

  /// Train settings for a stage: preset (if any), then block keys, then the stage sub-block.
  TrainConfig train(const std::string& stage) const;
  /// Fully resolved JSON, with train flattened for `stage`; reloads to the same config.
  nlohmann::json to_json(const std::string& stage) const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError naming the dotted path.
ExperimentConfig parse_experiment(const nlohmann::json& j);

/// Applies `a.b.c=value` overrides in order (last wins). Values are parsed as
/// JSON when possible, otherwise taken as strings.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

/// Reads a config file (or a run manifest, whose "config" is used), then overrides.
ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Dotted keys accepted in an experiment config, for --help.
std::vector<std::string> experiment_keys();

// Datasets

std::vector<SubjectRecord> load_dataset_records(const std::filesystem::path& dir, const DataConfig& data,
                                                const std::vector<std::string>& modalities);
std::vector<Volume> load_volumes(const std::filesystem::path& dir, const DataConfig& data,
                                 const std::vector<std::string>& modalities);
std::vector<LabeledCase> load_labeled(const std::filesystem::path& dir, const DataConfig& data,
                                      const std::vector<std::string>& modalities);

/// In-memory phantom cohorts (same seeds and ids as generate_dataset).
std::vector<Volume> phantom_volumes(const PhantomSpec& spec, int64_t n, bool normalize = true);
std::vector<LabeledCase> phantom_cases(const PhantomSpec& spec, int64_t n, bool normalize = true);

// Model construction with stage-to-stage transfer.

/// Input channels recorded in a checkpoint (the patch-embedding width).
int64_t checkpoint_in_channels(const Checkpoint& checkpoint);

/// Copies every checkpoint entry whose name and shape match.
TransferReport load_matching(torch::nn::Module& model, const Checkpoint& checkpoint);

/// SSL model for `in_channels`. With `init`, the model is built at the
/// checkpoint's width, loaded (encoder strictly when `strict_encoder`, heads by
/// shape), then expanded or restricted to `in_channels`.
SslModel build_ssl_model(const ExperimentConfig& config, int64_t in_channels, const Checkpoint* init,
                         bool strict_encoder, uint64_t seed, TransferReport* report = nullptr);
SegModel build_finetune_model(const ExperimentConfig& config, int64_t in_channels, const Checkpoint* init,
                              bool strict_encoder, uint64_t seed, TransferReport* report = nullptr);

// Stage runners. `train` and `val` are disjoint pools; out_dir may be empty.

SslTrainResult run_pretrain(const ExperimentConfig& config, const std::string& stage, const std::vector<Volume>& train,
                            const std::vector<Volume>& val, const Checkpoint* init, bool strict_encoder,
                            const std::filesystem::path& out_dir);

struct FinetuneOutcome {
  SupervisedTrainResult training;
  std::vector<CaseMetrics> test;  // scored with the best checkpoint
  double test_dice = 0.0;         // mean over test cases of the per-case mean Dice
};

FinetuneOutcome run_finetune(const ExperimentConfig& config, const std::vector<LabeledCase>& train,
                             const std::vector<LabeledCase>& val, const std::vector<LabeledCase>& test,
                             const Checkpoint* init, bool strict_encoder, const std::filesystem::path& out_dir,
                             std::optional<uint64_t> seed = std::nullopt);

/// Splits a pool into (train, val) with the last n_val items as validation,
/// keeping at least one training item.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_tail(const std::vector<T>& pool, int64_t n_val) {
  const auto n = static_cast<int64_t>(pool.size());
  const int64_t v = std::clamp<int64_t>(n_val, 0, std::max<int64_t>(0, n - 1));
  return {std::vector<T>(pool.begin(), pool.end() - v), std::vector<T>(pool.end() - v, pool.end())};
}

}  // namespace brainssl
