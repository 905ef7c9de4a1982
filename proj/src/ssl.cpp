#include "brainssl/ssl.hpp"

#include <limits>

#include "brainssl/error.hpp"

namespace brainssl {

void SslHeadConfig::validate() const {
  if (projection_dim < 1) throw ConfigError("ssl projection_dim must be >= 1");
  if (reconstruction_widths.empty()) throw ConfigError("ssl reconstruction_widths must not be empty");
  for (auto w : reconstruction_widths)
    if (w < 1) throw ConfigError("ssl reconstruction widths must be >= 1");
}

void SslLossWeights::validate() const {
  if (inpaint < 0 || rotation < 0 || contrastive < 0) throw ConfigError("ssl loss weights must be nonnegative");
  if (inpaint == 0 && rotation == 0 && contrastive == 0) throw ConfigError("at least one ssl loss weight must be > 0");
  if (!(temperature > 0)) throw ConfigError("ssl temperature must be positive");
}

SslModelImpl::SslModelImpl(const EncoderConfig& encoder_config, const SslHeadConfig& heads) : head_config_(heads) {
  head_config_.validate();
  encoder = register_module("encoder", SwinEncoder(encoder_config));
  const int64_t bottleneck = encoder_config.bottleneck_dim();
  rotation_head = register_module("rotation_head", torch::nn::Linear(bottleneck, 4));
  contrastive_head = register_module("contrastive_head", torch::nn::Linear(bottleneck, heads.projection_dim));
  int64_t width = bottleneck;
  for (auto next : heads.reconstruction_widths) {
    reconstruction.push_back(
        register_module("reconstruction" + std::to_string(reconstruction.size()),
                        torch::nn::Conv3d(torch::nn::Conv3dOptions(width, next, 3).padding(1))));
    width = next;
  }
  reconstruction_out = register_module(
      "reconstruction_out", torch::nn::Conv3d(torch::nn::Conv3dOptions(width, encoder_config.in_channels, 1)));
}

SslOutputs SslModelImpl::forward(const torch::Tensor& x) {
  const auto features = encoder->forward(x);
  const auto& b = features.bottleneck;
  const auto pooled = b.mean({2, 3, 4});
  SslOutputs out;
  out.rotation_logits = rotation_head(pooled);
  out.embedding = torch::nn::functional::normalize(
      contrastive_head(pooled), torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));

  // Upsample through the level-3 .. level-0 grids and finally the input grid.
  std::vector<std::vector<int64_t>> sizes;
  for (int64_t level = 3; level >= 0; --level) {
    const auto& f = features.levels[static_cast<size_t>(level)];
    sizes.push_back({f.size(2), f.size(3), f.size(4)});
  }
  sizes.push_back({x.size(2), x.size(3), x.size(4)});

  auto h = b;
  for (size_t i = 0; i < reconstruction.size(); ++i) {
    h = reconstruction[i]->forward(h);
    h = torch::instance_norm(h, {}, {}, {}, {}, true, 0.1, 1e-5, false);
    h = torch::leaky_relu(h, 0.01);
    const auto& size = sizes[std::min(i, sizes.size() - 1)];
    h = torch::nn::functional::interpolate(
        h, torch::nn::functional::InterpolateFuncOptions().size(size).mode(torch::kTrilinear).align_corners(false));
  }
  out.reconstruction = reconstruction_out(h);
  return out;
}

torch::Tensor loss_inpaint(const torch::Tensor& reconstruction, const torch::Tensor& target, const torch::Tensor& mask) {
  if (reconstruction.sizes() != target.sizes()) throw ShapeError("inpainting reconstruction and target shapes differ");
  auto m = mask.to(reconstruction.dtype()).expand_as(reconstruction);
  const auto count = m.sum();
  const auto err = ((reconstruction - target).abs() * m).sum();
  return torch::where(count > 0, err / count.clamp_min(1.0), err * 0.0);
}

torch::Tensor loss_rotation(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || logits.size(1) != 4) throw ShapeError("rotation logits must be (N, 4)");
  return torch::nn::functional::cross_entropy(logits, labels.to(torch::kInt64));
}

torch::Tensor loss_contrastive(const torch::Tensor& view1, const torch::Tensor& view2, double temperature) {
  if (view1.sizes() != view2.sizes() || view1.dim() != 2) throw ShapeError("contrastive views must be equal (B, E)");
  const int64_t b = view1.size(0);
  if (b < 2) throw ValidationError("contrastive loss needs at least 2 pairs for negatives, got " + std::to_string(b));
  auto z = torch::cat({view1, view2}, 0);
  z = torch::nn::functional::normalize(z, torch::nn::functional::NormalizeFuncOptions().dim(1));
  auto sim = torch::matmul(z, z.t()) / temperature;
  const auto self = torch::eye(2 * b, torch::TensorOptions().dtype(torch::kBool).device(z.device()));
  sim = sim.masked_fill(self, -std::numeric_limits<double>::infinity());
  auto idx = torch::arange(2 * b, torch::TensorOptions().dtype(torch::kInt64).device(z.device()));
  auto positive = torch::cat({idx.slice(0, b), idx.slice(0, 0, b)});
  return torch::nn::functional::cross_entropy(sim, positive);
}

torch::Tensor volume_to_tensor(const Volume& volume) {
  const Dims3 g = volume.dims();
  return torch::from_blob(const_cast<float*>(volume.voxels().data()), {volume.channels(), g.d, g.h, g.w},
                          torch::kFloat32)
      .clone();
}

torch::Tensor mask_to_tensor(const BinaryMask& mask) {
  return torch::from_blob(const_cast<uint8_t*>(mask.data.data()), {1, mask.dims.d, mask.dims.h, mask.dims.w},
                          torch::kUInt8)
      .to(torch::kFloat32);
}

SslBatch make_ssl_batch(const std::vector<SslSample>& samples) {
  if (samples.empty()) throw ValidationError("empty SSL batch");
  std::vector<torch::Tensor> in, tg, mk, rot;
  for (size_t v = 0; v < 2; ++v)
    for (const auto& s : samples) {
      in.push_back(volume_to_tensor(s.views[v]));
      tg.push_back(volume_to_tensor(s.targets[v]));
      mk.push_back(mask_to_tensor(s.cutout_masks[v]));
      rot.push_back(torch::tensor(static_cast<int64_t>(s.rotation_labels[v])));
    }
  return {torch::stack(in), torch::stack(tg), torch::stack(mk), torch::stack(rot)};
}

SslLosses ssl_losses(const SslOutputs& out, const SslBatch& batch, const SslLossWeights& w) {
  SslLosses l;
  const int64_t b = batch.pairs();
  l.inpaint = loss_inpaint(out.reconstruction, batch.targets, batch.masks);
  l.rotation = loss_rotation(out.rotation_logits, batch.rotations);
  l.contrastive = loss_contrastive(out.embedding.slice(0, 0, b), out.embedding.slice(0, b), w.temperature);
  l.total = w.inpaint * l.inpaint + w.rotation * l.rotation + w.contrastive * l.contrastive;
  return l;
}

SslLosses ssl_step(SslModelImpl& model, const SslBatch& batch, const SslLossWeights& weights) {
  return ssl_losses(model.forward(batch.inputs), batch, weights);
}

}  // namespace brainssl
