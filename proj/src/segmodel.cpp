#include "brainssl/segmodel.hpp"

#include <cmath>

#include "brainssl/error.hpp"

namespace brainssl {

void SegConfig::validate() const {
  if (out_channels < 1) throw ConfigError("seg out_channels must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("seg dropout must be in [0, 1)");
  if (!decoder_channels.empty() && decoder_channels.size() != 6)
    throw ConfigError("seg decoder_channels must list 6 widths (input, 4 encoder levels, bottleneck), got " +
                      std::to_string(decoder_channels.size()));
  for (auto c : decoder_channels)
    if (c < 1) throw ConfigError("seg decoder widths must be >= 1");
  if (roi.d < 1 || roi.h < 1 || roi.w < 1) throw ConfigError("seg roi must be positive");
  if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("seg overlap must be in [0, 1)");
}

std::vector<int64_t> SegConfig::resolved_decoder_channels(const EncoderConfig& e) const {
  if (!decoder_channels.empty()) return decoder_channels;
  const int64_t f = e.embed_dim;
  return {f, f, 2 * f, 4 * f, 8 * f, 16 * f};
}

namespace {

torch::nn::Conv3d conv(int64_t in, int64_t out, int64_t k) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, k).padding(k / 2).bias(false));
}

torch::Tensor norm_act(const torch::Tensor& x, bool act = true) {
  auto y = torch::instance_norm(x, {}, {}, {}, {}, true, 0.1, 1e-5, false);
  return act ? torch::leaky_relu(y, 0.01) : y;
}

}  // namespace

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, bool project) {
  conv1 = register_module("conv1", conv(in, out, 3));
  conv2 = register_module("conv2", conv(out, out, 3));
  if (project || in != out) skip = register_module("skip", conv(in, out, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = norm_act(conv1(x));
  h = norm_act(conv2(h), false);
  auto r = skip ? norm_act(skip(x), false) : x;
  return torch::leaky_relu(h + r, 0.01);
}

UpBlockImpl::UpBlockImpl(int64_t in, int64_t out) {
  up = register_module("up", torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(in, out, 2).stride(2).bias(false)));
  block = register_module("block", ResBlock(2 * out, out));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  auto h = up(x);
  // The bottleneck may come from a padded odd grid; crop to the skip size.
  if (h.sizes().slice(2) != skip.sizes().slice(2))
    h = h.slice(2, 0, skip.size(2)).slice(3, 0, skip.size(3)).slice(4, 0, skip.size(4));
  return block(torch::cat({h, skip}, 1));
}

SegModelImpl::SegModelImpl(const EncoderConfig& encoder_config, const SegConfig& seg) : seg_(seg) {
  seg_.validate();
  auto ec = encoder_config;
  ec.drop_rate = seg.dropout_rate;
  encoder = register_module("encoder", SwinEncoder(ec));
  const auto ch = seg_.resolved_decoder_channels(ec);
  input_block = register_module("input_block", ResBlock(ec.in_channels, ch[0], true));
  for (int64_t level = 0; level < 5; ++level) {
    const int64_t width = level < 4 ? ec.level_dim(level) : ec.bottleneck_dim();
    skip_blocks_.push_back(register_module("skip" + std::to_string(level),
                                           ResBlock(width, ch[static_cast<size_t>(level) + 1])));
  }
  // up_blocks_[i] lifts decoder level 5 - i to level 4 - i.
  for (int64_t i = 5; i >= 1; --i)
    up_blocks_.push_back(register_module("up" + std::to_string(i - 1),
                                         UpBlock(ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i) - 1])));
  head = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[0], seg.out_channels, 1)));
}

torch::Tensor SegModelImpl::logits(const torch::Tensor& x) {
  const auto features = encoder->forward(x);
  std::vector<torch::Tensor> skips;
  skips.push_back(input_block(x));
  for (size_t l = 0; l < 4; ++l) skips.push_back(skip_blocks_[l](features.levels[l]));
  auto h = skip_blocks_[4](features.bottleneck);
  for (size_t i = 0; i < up_blocks_.size(); ++i) h = up_blocks_[i](h, skips[skips.size() - 1 - i]);
  return head(h);
}

void SegModelImpl::set_encoder_frozen(bool frozen) {
  for (auto& p : encoder->parameters()) p.set_requires_grad(!frozen);
}

SegModel build_seg_model(EncoderConfig encoder, const SegConfig& seg) { return SegModel(encoder, seg); }

torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps) {
  if (probs.sizes() != target.sizes()) throw ShapeError("dice loss inputs differ in shape");
  if (probs.dim() < 2) throw ShapeError("dice loss expects (N, K, ...) inputs");
  std::vector<int64_t> dims{0};
  for (int64_t d = 2; d < probs.dim(); ++d) dims.push_back(d);
  const auto t = target.to(probs.dtype());
  const auto inter = (probs * t).sum(dims);
  const auto denom = probs.sum(dims) + t.sum(dims);
  return 1.0 - ((2.0 * inter + eps) / (denom + eps)).mean();
}

std::vector<int64_t> window_starts(int64_t extent, int64_t roi, double overlap) {
  if (roi < 1 || extent < roi) throw ValidationError("roi must be positive and fit inside the padded extent");
  if (overlap < 0.0 || overlap >= 1.0) throw ValidationError("overlap must be in [0, 1)");
  const int64_t stride = std::max<int64_t>(1, static_cast<int64_t>(std::floor(static_cast<double>(roi) * (1.0 - overlap))));
  std::vector<int64_t> starts;
  for (int64_t s = 0;; s += stride) {
    if (s + roi >= extent) {
      starts.push_back(extent - roi);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

torch::Tensor sliding_window_infer(const Predictor& predict, const torch::Tensor& volume, Dims3 roi, double overlap) {
  if (volume.dim() != 4) throw ShapeError("sliding-window inference expects a (C, D, H, W) volume");
  const std::array<int64_t, 3> size{volume.size(1), volume.size(2), volume.size(3)};
  std::array<int64_t, 3> before{}, padded{};
  for (int a = 0; a < 3; ++a) {
    padded[static_cast<size_t>(a)] = std::max(size[static_cast<size_t>(a)], roi[a]);
    before[static_cast<size_t>(a)] = (padded[static_cast<size_t>(a)] - size[static_cast<size_t>(a)]) / 2;
  }
  auto x = volume;
  if (padded != size)
    x = torch::constant_pad_nd(volume, {before[2], padded[2] - size[2] - before[2], before[1],
                                        padded[1] - size[1] - before[1], before[0], padded[0] - size[0] - before[0]});
  const auto sd = window_starts(padded[0], roi.d, overlap);
  const auto sh = window_starts(padded[1], roi.h, overlap);
  const auto sw = window_starts(padded[2], roi.w, overlap);

  torch::Tensor sum;
  auto count = torch::zeros({1, padded[0], padded[1], padded[2]}, volume.options());
  for (auto z : sd)
    for (auto y : sh)
      for (auto w : sw) {
        auto tile = x.slice(1, z, z + roi.d).slice(2, y, y + roi.h).slice(3, w, w + roi.w).unsqueeze(0);
        auto out = predict(tile);
        if (out.dim() != 5 || out.size(0) != 1 || out.size(2) != roi.d || out.size(3) != roi.h || out.size(4) != roi.w)
          throw ShapeError("predictor must return (1, K) + roi");
        if (!sum.defined()) sum = torch::zeros({out.size(1), padded[0], padded[1], padded[2]}, out.options());
        sum.slice(1, z, z + roi.d).slice(2, y, y + roi.h).slice(3, w, w + roi.w) += out[0];
        count.slice(1, z, z + roi.d).slice(2, y, y + roi.h).slice(3, w, w + roi.w) += 1;
      }
  auto avg = sum / count;
  return avg.slice(1, before[0], before[0] + size[0])
      .slice(2, before[1], before[1] + size[1])
      .slice(3, before[2], before[2] + size[2])
      .contiguous();
}

}  // namespace brainssl
