#pragma once

#include <vector>

#include <torch/torch.h>

#include "brainssl/augment.hpp"
#include "brainssl/swin3d.hpp"

namespace brainssl {

struct SslHeadConfig {
  int64_t projection_dim = 512;
  /// Widths of the reconstruction stack, bottleneck side first. The last
  /// entry feeds a 1x1x1 convolution back to the input channels.
  std::vector<int64_t> reconstruction_widths{384, 192, 96, 48, 48};

  void validate() const;
  friend bool operator==(const SslHeadConfig&, const SslHeadConfig&) = default;
};

struct SslLossWeights {
  double inpaint = 1.0;
  double rotation = 1.0;
  double contrastive = 1.0;
  double temperature = 0.5;

  void validate() const;
  friend bool operator==(const SslLossWeights&, const SslLossWeights&) = default;
};

struct SslOutputs {
  torch::Tensor reconstruction;   // (N, C, D, H, W)
  torch::Tensor rotation_logits;  // (N, 4)
  torch::Tensor embedding;        // (N, projection_dim), unit L2 norm
};

/// Encoder plus the three proxy-task heads. Rotation and contrastive heads read
/// the global average of the bottleneck; reconstruction runs conv blocks with
/// upsampling back through every encoder resolution.
class SslModelImpl : public torch::nn::Module {
 public:
  SslModelImpl(const EncoderConfig& encoder, const SslHeadConfig& heads = {});
  SslOutputs forward(const torch::Tensor& x);

  const SslHeadConfig& head_config() const { return head_config_; }
  int64_t in_channels() const { return encoder->config().in_channels; }

  SwinEncoder encoder{nullptr};
  torch::nn::Linear rotation_head{nullptr};
  torch::nn::Linear contrastive_head{nullptr};
  std::vector<torch::nn::Conv3d> reconstruction;
  torch::nn::Conv3d reconstruction_out{nullptr};

 private:
  SslHeadConfig head_config_;
};
TORCH_MODULE(SslModel);

/// Mean |reconstruction - target| over masked voxels (all channels); 0 for an
/// empty mask. mask: (N, 1, D, H, W) or (N, C, D, H, W) with values in {0, 1}.
torch::Tensor loss_inpaint(const torch::Tensor& reconstruction, const torch::Tensor& target, const torch::Tensor& mask);
/// Cross-entropy over 4 rotation classes, averaged over the batch.
torch::Tensor loss_rotation(const torch::Tensor& logits, const torch::Tensor& labels);
/// Normalized-temperature cross-entropy: each of the 2B embeddings is an
/// anchor whose positive is its paired view and whose negatives are the other
/// 2B-2 embeddings. Throws ValidationError for B < 2.
torch::Tensor loss_contrastive(const torch::Tensor& view1, const torch::Tensor& view2, double temperature = 0.5);

/// A batch of SSL samples: both views of sample i sit at rows i and B + i.
struct SslBatch {
  torch::Tensor inputs;    // (2B, C, D, H, W) corrupted views
  torch::Tensor targets;   // (2B, C, D, H, W) rotated, uncorrupted
  torch::Tensor masks;     // (2B, 1, D, H, W) cutout masks
  torch::Tensor rotations; // (2B) int64
  int64_t pairs() const { return inputs.size(0) / 2; }
};
SslBatch make_ssl_batch(const std::vector<SslSample>& samples);

struct SslLosses {
  torch::Tensor total;
  torch::Tensor inpaint;
  torch::Tensor rotation;
  torch::Tensor contrastive;
};

SslLosses ssl_losses(const SslOutputs& out, const SslBatch& batch, const SslLossWeights& weights);
SslLosses ssl_step(SslModelImpl& model, const SslBatch& batch, const SslLossWeights& weights);

/// (C, D, H, W) float tensor sharing nothing with the volume.
torch::Tensor volume_to_tensor(const Volume& volume);
torch::Tensor mask_to_tensor(const BinaryMask& mask);

}  // namespace brainssl
