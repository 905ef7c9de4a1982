#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

#include "brainssl/swin3d.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

struct SegConfig {
  int64_t out_channels = 3;
  /// Decoder widths at input resolution, levels 0..3 and the bottleneck.
  /// Empty means {E, E, 2E, 4E, 8E, 16E} for encoder width E.
  std::vector<int64_t> decoder_channels;
  double dropout_rate = 0.0;
  Dims3 roi{96, 96, 96};
  double overlap = 0.5;

  void validate() const;
  std::vector<int64_t> resolved_decoder_channels(const EncoderConfig& encoder) const;
  friend bool operator==(const SegConfig&, const SegConfig&) = default;
};

/// Two 3x3x3 convolutions with instance norm and leaky ReLU, plus a projected
/// residual when the width changes or `project` is set.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in, int64_t out, bool project = false);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Transposed-conv upsampling by 2, concatenation with the skip, residual block.
class UpBlockImpl : public torch::nn::Module {
 public:
  UpBlockImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);

 private:
  torch::nn::ConvTranspose3d up{nullptr};
  ResBlock block{nullptr};
};
TORCH_MODULE(UpBlock);

/// Encoder plus UNet-style decoder. Skips come from the raw input, the four
/// encoder levels, and the bottleneck. Output: per-channel sigmoid probabilities.
class SegModelImpl : public torch::nn::Module {
 public:
  SegModelImpl(const EncoderConfig& encoder, const SegConfig& seg);
  /// Logits before the sigmoid.
  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }

  /// Freezing stops gradient flow into encoder weights.
  void set_encoder_frozen(bool frozen);
  int64_t in_channels() const { return encoder->config().in_channels; }
  const SegConfig& seg_config() const { return seg_; }

  SwinEncoder encoder{nullptr};
  ResBlock input_block{nullptr};

 private:
  SegConfig seg_;
  std::vector<ResBlock> skip_blocks_;  // levels 0..3 and bottleneck
  std::vector<UpBlock> up_blocks_;     // bottleneck -> ... -> input resolution
  torch::nn::Conv3d head{nullptr};
};
TORCH_MODULE(SegModel);

SegModel build_seg_model(EncoderConfig encoder, const SegConfig& seg);

/// 1 - mean over channels of (2 sum(p t) + eps) / (sum p + sum t + eps), sums
/// over batch and space per channel. Inputs: (N, K, ...).
torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps = 1e-5);

/// Start offsets along one axis: stride floor(roi (1 - overlap)), last window
/// clamped to end at the (padded) extent.
std::vector<int64_t> window_starts(int64_t extent, int64_t roi, double overlap);

using Predictor = std::function<torch::Tensor(const torch::Tensor&)>;

/// Tiled inference over a (C, D, H, W) volume: each roi window is passed as
/// (1, C, roi) to `predict`, which returns (1, K, roi). Overlaps are averaged
/// uniformly. Axes smaller than the roi are zero-padded symmetrically and the
/// result is cropped back. Returns (K, D, H, W).
torch::Tensor sliding_window_infer(const Predictor& predict, const torch::Tensor& volume, Dims3 roi, double overlap);

}  // namespace brainssl
