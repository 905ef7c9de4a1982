#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace brainssl {

/// Encoder hyper-parameters. The three named variants differ only in the
/// number of blocks at level 3.
struct EncoderConfig {
  int64_t in_channels = 1;
  std::array<int64_t, 3> patch_size{2, 2, 2};
  int64_t embed_dim = 48;
  std::vector<int64_t> depths{2, 2, 2, 2};
  std::vector<int64_t> heads{3, 6, 12, 24};
  std::array<int64_t, 3> window{7, 7, 7};
  double mlp_ratio = 4.0;
  bool qkv_bias = true;
  double drop_rate = 0.0;
  std::string variant = "tiny";

  static EncoderConfig tiny(int64_t in_channels = 1);
  static EncoderConfig small(int64_t in_channels = 1);
  static EncoderConfig big(int64_t in_channels = 1);
  /// "tiny" | "small" | "big"; throws ConfigError otherwise.
  static EncoderConfig from_variant(const std::string& name, int64_t in_channels = 1);

  void validate() const;
  int64_t level_dim(int64_t level) const { return embed_dim << level; }  // level 0..3
  int64_t bottleneck_dim() const { return embed_dim << 4; }
  /// Per-axis multiple the input size must have: every level below the
  /// bottleneck then has an exact integer grid.
  std::array<int64_t, 3> input_multiple() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

using Grid3 = std::array<int64_t, 3>;

/// Large negative additive bias for masked attention pairs; finite so that a
/// fully masked row (pure padding) still softmaxes to finite values.
inline constexpr float kMaskedLogit = -1.0e4f;

/// Geometry of one windowing pass.
struct WindowLayout {
  int64_t batch = 0;
  Grid3 grid{};    // unpadded token grid
  Grid3 padded{};  // grid rounded up to a multiple of window
  Grid3 window{};
  int64_t windows_per_sample() const;
};

/// Effective window/shift for a grid: an axis no larger than the window uses
/// one window covering it and no shift.
std::pair<Grid3, Grid3> effective_window(const Grid3& grid, const Grid3& window, const Grid3& shift);

/// tokens (B, D, H, W, C) -> windows (B * nW, N, C); zero-pads each axis to a
/// multiple of the window. Windows are ordered batch-major, then (d, h, w).
torch::Tensor window_partition(const torch::Tensor& tokens, const Grid3& window, WindowLayout* layout = nullptr);
/// Inverse of window_partition; drops the padding.
torch::Tensor window_reverse(const torch::Tensor& windows, const WindowLayout& layout);

/// (nW, N, N) additive mask over a padded grid that is cyclically shifted by
/// `shift`: pairs whose tokens came from different pre-shift regions get
/// kMaskedLogit. All zeros when shift is zero.
torch::Tensor compute_attention_mask(const Grid3& padded_grid, const Grid3& window, const Grid3& shift);
/// (nW, N, N) mask that hides padded tokens as keys (after the same shift).
torch::Tensor padding_key_mask(const Grid3& grid, const Grid3& padded_grid, const Grid3& window, const Grid3& shift);
/// Pairwise relative-position index into a (2*table_window-1)^3 bias table for
/// an (possibly smaller) actual window.
torch::Tensor relative_position_index(const Grid3& window, const Grid3& table_window);

class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads, Grid3 table_window, bool qkv_bias, double drop);
  /// x: (B * nW, N, C); mask: (nW, N, N) or undefined.
  torch::Tensor forward(const torch::Tensor& x, const Grid3& window, const torch::Tensor& mask = {});

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
  torch::nn::Dropout proj_drop{nullptr};
  torch::Tensor relative_position_bias_table;

 private:
  int64_t heads_;
  double scale_;
  Grid3 table_window_;
};
TORCH_MODULE(WindowAttention);

class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(int64_t dim, int64_t heads, Grid3 window, Grid3 shift, double mlp_ratio, bool qkv_bias, double drop);
  /// x: (B, D, H, W, C)
  torch::Tensor forward(const torch::Tensor& x);

 private:
  Grid3 window_;
  Grid3 shift_;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  WindowAttention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(SwinBlock);

/// Concatenates the eight 2x2x2 neighbours (zero-padding odd axes), normalizes,
/// and projects 8C -> 2C without bias.
class PatchMergingImpl : public torch::nn::Module {
 public:
  explicit PatchMergingImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear reduction{nullptr};
};
TORCH_MODULE(PatchMerging);

/// Encoder features, channels-first and layer-normalized (no affine).
struct EncoderOutput {
  std::vector<torch::Tensor> levels;  // 4 tensors: (B, dim_i, d_i, h_i, w_i)
  torch::Tensor bottleneck;           // (B, 16 * embed_dim, ...)
};

class SwinEncoderImpl : public torch::nn::Module {
 public:
  explicit SwinEncoderImpl(EncoderConfig config);
  /// x: (B, C, D, H, W); each spatial axis must be a multiple of input_multiple().
  EncoderOutput forward(const torch::Tensor& x);

  const EncoderConfig& config() const { return config_; }
  void set_in_channels(int64_t c) { config_.in_channels = c; }
  torch::nn::Conv3d patch_embed{nullptr};

 private:
  EncoderConfig config_;
  torch::nn::Dropout pos_drop{nullptr};
  std::vector<torch::nn::Sequential> stages_;
  std::vector<PatchMerging> merges_;
};
TORCH_MODULE(SwinEncoder);

SwinEncoder build_encoder(const EncoderConfig& config);

/// Number of trainable scalars.
int64_t count_parameters(const torch::nn::Module& module);

}  // namespace brainssl
