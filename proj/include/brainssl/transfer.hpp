#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "brainssl/segmodel.hpp"
#include "brainssl/ssl.hpp"

namespace brainssl {

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;
};

/// Weights plus the metadata needed to rebuild the model that produced them.
/// Byte layout: docs/checkpoint-format.md.
struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;

  uint32_t format_version = kFormatVersion;
  nlohmann::json config = nlohmann::json::object();
  int64_t step = 0;
  uint64_t seed = 0;
  std::vector<NamedTensor> tensors;  // in model registration order

  const NamedTensor* find(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&);
};

/// Snapshot of every parameter and buffer of `model` (float32 copies).
Checkpoint capture_checkpoint(const torch::nn::Module& model, nlohmann::json config, int64_t step, uint64_t seed);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every entry into `model`. Missing, unexpected and mis-shaped entries
/// raise CheckpointError naming the entry.
void load_weights(torch::nn::Module& model, const Checkpoint& checkpoint);

struct TransferReport {
  std::vector<std::string> loaded;   // encoder tensors copied from the checkpoint
  std::vector<std::string> skipped;  // target tensors left at their initialization
};

/// Copies the tensors under "encoder." into the target's encoder. Strict mode
/// fails on any target encoder tensor that is absent or mis-shaped in the
/// checkpoint, and on a recorded variant mismatch.
TransferReport transfer_encoder(const Checkpoint& checkpoint, torch::nn::Module& target, bool strict_encoder);

/// Grows the input layers to `new_total` channels. Existing slices are kept
/// bit-exactly; new slices are drawn from N(0, 2 / fan_in) with fan_in counted
/// on the expanded layer. The SSL model also grows its reconstruction output.
void expand_input_channels(SslModelImpl& model, int64_t new_total, uint64_t init_seed);
void expand_input_channels(SegModelImpl& model, int64_t new_total, uint64_t init_seed);

/// Keeps only the listed input channels, in the given order.
void restrict_input_channels(SslModelImpl& model, const std::vector<int64_t>& keep);
void restrict_input_channels(SegModelImpl& model, const std::vector<int64_t>& keep);

}  // namespace brainssl
