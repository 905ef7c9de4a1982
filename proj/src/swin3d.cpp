#include "brainssl/swin3d.hpp"

#include <algorithm>
#include <cmath>

#include "brainssl/error.hpp"

namespace brainssl {

namespace F = torch::nn::functional;

EncoderConfig EncoderConfig::tiny(int64_t in_channels) {
  EncoderConfig c;
  c.in_channels = in_channels;
  c.depths = {2, 2, 2, 2};
  c.variant = "tiny";
  return c;
}

EncoderConfig EncoderConfig::small(int64_t in_channels) {
  EncoderConfig c = tiny(in_channels);
  c.depths = {2, 2, 6, 2};
  c.variant = "small";
  return c;
}

EncoderConfig EncoderConfig::big(int64_t in_channels) {
  EncoderConfig c = tiny(in_channels);
  c.depths = {2, 2, 18, 2};
  c.variant = "big";
  return c;
}

EncoderConfig EncoderConfig::from_variant(const std::string& name, int64_t in_channels) {
  if (name == "tiny") return tiny(in_channels);
  if (name == "small") return small(in_channels);
  if (name == "big") return big(in_channels);
  throw ConfigError("unknown encoder variant '" + name + "' (expected tiny, small or big)");
}

void EncoderConfig::validate() const {
  if (in_channels < 1) throw ConfigError("encoder in_channels must be >= 1");
  if (embed_dim < 1) throw ConfigError("encoder embed_dim must be >= 1");
  if (depths.size() != 4) throw ConfigError("encoder depths must list 4 levels, got " + std::to_string(depths.size()));
  if (heads.size() != 4) throw ConfigError("encoder heads must list 4 levels, got " + std::to_string(heads.size()));
  for (size_t i = 0; i < 4; ++i) {
    if (depths[i] < 1) throw ConfigError("encoder depth at level " + std::to_string(i) + " must be >= 1");
    if (heads[i] < 1 || level_dim(static_cast<int64_t>(i)) % heads[i] != 0)
      throw ConfigError("level " + std::to_string(i) + " width " + std::to_string(level_dim(static_cast<int64_t>(i))) +
                        " is not divisible by " + std::to_string(heads[i]) + " heads");
  }
  for (size_t a = 0; a < 3; ++a) {
    if (patch_size[a] < 1) throw ConfigError("patch size must be >= 1");
    if (window[a] < 1) throw ConfigError("window size must be >= 1");
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (drop_rate < 0.0 || drop_rate >= 1.0) throw ConfigError("drop_rate must be in [0, 1)");
}

std::array<int64_t, 3> EncoderConfig::input_multiple() const {
  return {patch_size[0] * 8, patch_size[1] * 8, patch_size[2] * 8};
}

int64_t WindowLayout::windows_per_sample() const {
  return (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
}

std::pair<Grid3, Grid3> effective_window(const Grid3& grid, const Grid3& window, const Grid3& shift) {
  Grid3 w = window;
  Grid3 s = shift;
  for (size_t a = 0; a < 3; ++a)
    if (grid[a] <= window[a]) {
      w[a] = grid[a];
      s[a] = 0;
    }
  return {w, s};
}

namespace {

Grid3 round_up(const Grid3& grid, const Grid3& window) {
  Grid3 p{};
  for (size_t a = 0; a < 3; ++a) p[a] = (grid[a] + window[a] - 1) / window[a] * window[a];
  return p;
}

// Applies fn(window_index, token_index, d, h, w) over every position of a padded
// grid in window order.
template <typename Fn>
void for_each_window_token(const Grid3& padded, const Grid3& window, Fn&& fn) {
  const Grid3 nw{padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
  for (int64_t a = 0; a < nw[0]; ++a)
    for (int64_t b = 0; b < nw[1]; ++b)
      for (int64_t c = 0; c < nw[2]; ++c) {
        const int64_t wi = (a * nw[1] + b) * nw[2] + c;
        int64_t t = 0;
        for (int64_t i = 0; i < window[0]; ++i)
          for (int64_t j = 0; j < window[1]; ++j)
            for (int64_t k = 0; k < window[2]; ++k)
              fn(wi, t++, a * window[0] + i, b * window[1] + j, c * window[2] + k);
      }
}

// Region id of a coordinate along one axis of the shifted grid.
int64_t region(int64_t p, int64_t size, int64_t window, int64_t shift) {
  if (shift == 0) return 0;
  if (p < size - window) return 0;
  if (p < size - shift) return 1;
  return 2;
}

torch::Tensor pairwise_mask(const std::vector<int64_t>& tag, int64_t nw, int64_t n, bool key_only) {
  std::vector<float> m(static_cast<size_t>(nw * n * n), 0.0f);
  for (int64_t w = 0; w < nw; ++w)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const int64_t ti = tag[static_cast<size_t>(w * n + i)];
        const int64_t tj = tag[static_cast<size_t>(w * n + j)];
        const bool masked = key_only ? tj != 0 : ti != tj;
        if (masked) m[static_cast<size_t>((w * n + i) * n + j)] = kMaskedLogit;
      }
  return torch::from_blob(m.data(), {nw, n, n}, torch::kFloat32).clone();
}

}  // namespace

torch::Tensor window_partition(const torch::Tensor& tokens, const Grid3& window, WindowLayout* layout) {
  if (tokens.dim() != 5) throw ShapeError("window_partition expects (B, D, H, W, C) tokens");
  const int64_t b = tokens.size(0);
  const int64_t c = tokens.size(4);
  const Grid3 grid{tokens.size(1), tokens.size(2), tokens.size(3)};
  const Grid3 padded = round_up(grid, window);
  torch::Tensor x = tokens;
  if (padded != grid)
    x = torch::constant_pad_nd(tokens, {0, 0, 0, padded[2] - grid[2], 0, padded[1] - grid[1], 0, padded[0] - grid[0]});
  if (layout) *layout = WindowLayout{b, grid, padded, window};
  x = x.view({b, padded[0] / window[0], window[0], padded[1] / window[1], window[1], padded[2] / window[2], window[2], c});
  return x.permute({0, 1, 3, 5, 2, 4, 6, 7}).reshape({-1, window[0] * window[1] * window[2], c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, const WindowLayout& l) {
  const int64_t c = windows.size(-1);
  const Grid3& p = l.padded;
  const Grid3& w = l.window;
  auto x = windows.view({l.batch, p[0] / w[0], p[1] / w[1], p[2] / w[2], w[0], w[1], w[2], c})
               .permute({0, 1, 4, 2, 5, 3, 6, 7})
               .reshape({l.batch, p[0], p[1], p[2], c});
  if (p != l.grid)
    x = x.slice(1, 0, l.grid[0]).slice(2, 0, l.grid[1]).slice(3, 0, l.grid[2]);
  return x;
}

torch::Tensor compute_attention_mask(const Grid3& padded, const Grid3& window, const Grid3& shift) {
  const int64_t n = window[0] * window[1] * window[2];
  const int64_t nw = (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
  std::vector<int64_t> tag(static_cast<size_t>(nw * n));
  for_each_window_token(padded, window, [&](int64_t wi, int64_t t, int64_t d, int64_t h, int64_t w) {
    tag[static_cast<size_t>(wi * n + t)] = (region(d, padded[0], window[0], shift[0]) * 3 +
                                            region(h, padded[1], window[1], shift[1])) * 3 +
                                           region(w, padded[2], window[2], shift[2]);
  });
  return pairwise_mask(tag, nw, n, false);
}

torch::Tensor padding_key_mask(const Grid3& grid, const Grid3& padded, const Grid3& window, const Grid3& shift) {
  const int64_t n = window[0] * window[1] * window[2];
  const int64_t nw = (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
  std::vector<int64_t> tag(static_cast<size_t>(nw * n));
  for_each_window_token(padded, window, [&](int64_t wi, int64_t t, int64_t d, int64_t h, int64_t w) {
    // Position p of the rolled grid holds original position (p + shift) mod size.
    const bool pad = (d + shift[0]) % padded[0] >= grid[0] || (h + shift[1]) % padded[1] >= grid[1] ||
                     (w + shift[2]) % padded[2] >= grid[2];
    tag[static_cast<size_t>(wi * n + t)] = pad ? 1 : 0;
  });
  return pairwise_mask(tag, nw, n, true);
}

torch::Tensor relative_position_index(const Grid3& window, const Grid3& table) {
  for (size_t a = 0; a < 3; ++a)
    if (window[a] > table[a]) throw ShapeError("window larger than the relative position table");
  const int64_t n = window[0] * window[1] * window[2];
  std::vector<std::array<int64_t, 3>> coords;
  coords.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < window[0]; ++i)
    for (int64_t j = 0; j < window[1]; ++j)
      for (int64_t k = 0; k < window[2]; ++k) coords.push_back({i, j, k});
  const int64_t s1 = 2 * table[1] - 1;
  const int64_t s2 = 2 * table[2] - 1;
  std::vector<int64_t> idx(static_cast<size_t>(n * n));
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = 0; q < n; ++q) {
      const auto& a = coords[static_cast<size_t>(p)];
      const auto& b = coords[static_cast<size_t>(q)];
      idx[static_cast<size_t>(p * n + q)] =
          ((a[0] - b[0] + table[0] - 1) * s1 + (a[1] - b[1] + table[1] - 1)) * s2 + (a[2] - b[2] + table[2] - 1);
    }
  return torch::from_blob(idx.data(), {n, n}, torch::kInt64).clone();
}

namespace {

torch::nn::Linear make_linear(int64_t in, int64_t out, bool bias) {
  torch::nn::Linear l(torch::nn::LinearOptions(in, out).bias(bias));
  torch::NoGradGuard g;
  torch::nn::init::normal_(l->weight, 0.0, 0.02);
  if (bias) l->bias.zero_();
  return l;
}

// Attention scores are materialized for at most this many elements at a time.
constexpr int64_t kAttentionChunkElements = int64_t{1} << 24;

}  // namespace

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads, Grid3 table_window, bool qkv_bias, double drop)
    : heads_(heads), scale_(1.0 / std::sqrt(static_cast<double>(dim / heads))), table_window_(table_window) {
  const int64_t entries = (2 * table_window[0] - 1) * (2 * table_window[1] - 1) * (2 * table_window[2] - 1);
  relative_position_bias_table = register_parameter("relative_position_bias_table", torch::zeros({entries, heads}));
  {
    torch::NoGradGuard g;
    torch::nn::init::normal_(relative_position_bias_table, 0.0, 0.02);
  }
  qkv = register_module("qkv", make_linear(dim, 3 * dim, qkv_bias));
  proj = register_module("proj", make_linear(dim, dim, true));
  proj_drop = register_module("proj_drop", torch::nn::Dropout(drop));
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, const Grid3& window, const torch::Tensor& mask) {
  const int64_t bw = x.size(0);
  const int64_t n = x.size(1);
  const int64_t c = x.size(2);
  const int64_t hd = c / heads_;
  auto qkv_t = qkv(x).reshape({bw, n, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = qkv_t[0] * scale_;
  auto k = qkv_t[1];
  auto v = qkv_t[2];

  const auto index = relative_position_index(window, table_window_).to(x.device());
  auto bias = relative_position_bias_table.index_select(0, index.view({-1})).view({n, n, heads_}).permute({2, 0, 1});
  bias = bias.unsqueeze(0);

  const int64_t nw = mask.defined() ? mask.size(0) : 1;
  const int64_t chunk = std::max<int64_t>(1, kAttentionChunkElements / (heads_ * n * n));
  std::vector<torch::Tensor> outs;
  for (int64_t s = 0; s < bw; s += chunk) {
    const int64_t e = std::min(bw, s + chunk);
    auto attn = torch::matmul(q.slice(0, s, e), k.slice(0, s, e).transpose(-2, -1)) + bias;
    if (mask.defined()) {
      auto rows = torch::arange(s, e, torch::kInt64).remainder(nw);
      attn = attn + mask.index_select(0, rows).unsqueeze(1).to(attn.dtype());
    }
    attn = torch::softmax(attn, -1);
    outs.push_back(torch::matmul(attn, v.slice(0, s, e)));
  }
  auto out = outs.size() == 1 ? outs[0] : torch::cat(outs, 0);
  out = out.transpose(1, 2).reshape({bw, n, c});
  return proj_drop(proj(out));
}

SwinBlockImpl::SwinBlockImpl(int64_t dim, int64_t heads, Grid3 window, Grid3 shift, double mlp_ratio, bool qkv_bias,
                             double drop_rate)
    : window_(window), shift_(shift) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", WindowAttention(dim, heads, window, qkv_bias, drop_rate));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const auto hidden = static_cast<int64_t>(static_cast<double>(dim) * mlp_ratio);
  fc1 = register_module("fc1", make_linear(dim, hidden, true));
  fc2 = register_module("fc2", make_linear(hidden, dim, true));
  drop = register_module("drop", torch::nn::Dropout(drop_rate));
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x) {
  const Grid3 grid{x.size(1), x.size(2), x.size(3)};
  const auto [window, shift] = effective_window(grid, window_, shift_);
  const bool shifted = shift[0] || shift[1] || shift[2];

  auto h = norm1(x);
  WindowLayout layout;
  // Pad before rolling so that the shift acts on the padded grid.
  const Grid3 padded = round_up(grid, window);
  if (padded != grid)
    h = torch::constant_pad_nd(h, {0, 0, 0, padded[2] - grid[2], 0, padded[1] - grid[1], 0, padded[0] - grid[0]});
  if (shifted) h = torch::roll(h, {-shift[0], -shift[1], -shift[2]}, {1, 2, 3});

  torch::Tensor mask;
  if (shifted) mask = compute_attention_mask(padded, window, shift);
  if (padded != grid) {
    auto pm = padding_key_mask(grid, padded, window, shift);
    mask = mask.defined() ? (mask + pm).clamp_min(kMaskedLogit) : pm;
  }
  if (mask.defined()) mask = mask.to(x.device());

  auto windows = window_partition(h, window, &layout);
  auto attended = window_reverse(attn(windows, window, mask), layout);
  if (shifted) attended = torch::roll(attended, {shift[0], shift[1], shift[2]}, {1, 2, 3});
  if (padded != grid) attended = attended.slice(1, 0, grid[0]).slice(2, 0, grid[1]).slice(3, 0, grid[2]);

  auto y = x + attended;
  return y + drop(fc2(drop(torch::gelu(fc1(norm2(y))))));
}

PatchMergingImpl::PatchMergingImpl(int64_t dim) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({8 * dim})));
  reduction = register_module("reduction", make_linear(8 * dim, 2 * dim, false));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  auto h = x;
  const int64_t pd = x.size(1) % 2, ph = x.size(2) % 2, pw = x.size(3) % 2;
  if (pd || ph || pw) h = torch::constant_pad_nd(h, {0, 0, 0, pw, 0, ph, 0, pd});
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 2; ++j)
      for (int64_t k = 0; k < 2; ++k)
        parts.push_back(h.slice(1, i, torch::nullopt, 2).slice(2, j, torch::nullopt, 2).slice(3, k, torch::nullopt, 2));
  return reduction(norm(torch::cat(parts, -1)));
}

SwinEncoderImpl::SwinEncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  patch_embed = register_module(
      "patch_embed",
      torch::nn::Conv3d(torch::nn::Conv3dOptions(c.in_channels, c.embed_dim,
                                                 {c.patch_size[0], c.patch_size[1], c.patch_size[2]})
                            .stride({c.patch_size[0], c.patch_size[1], c.patch_size[2]})));
  pos_drop = register_module("pos_drop", torch::nn::Dropout(c.drop_rate));
  const Grid3 half{c.window[0] / 2, c.window[1] / 2, c.window[2] / 2};
  for (int64_t level = 0; level < 4; ++level) {
    torch::nn::Sequential stage;
    for (int64_t b = 0; b < c.depths[static_cast<size_t>(level)]; ++b)
      stage->push_back(SwinBlock(c.level_dim(level), c.heads[static_cast<size_t>(level)], c.window,
                                 b % 2 == 1 ? half : Grid3{0, 0, 0}, c.mlp_ratio, c.qkv_bias, c.drop_rate));
    stages_.push_back(register_module("stage" + std::to_string(level), stage));
    merges_.push_back(register_module("merge" + std::to_string(level), PatchMerging(c.level_dim(level))));
  }
}

namespace {

torch::Tensor to_channels_first(const torch::Tensor& tokens) {
  return torch::layer_norm(tokens, {tokens.size(-1)}).permute({0, 4, 1, 2, 3}).contiguous();
}

}  // namespace

EncoderOutput SwinEncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("encoder expects (B, C, D, H, W) input, got rank " + std::to_string(x.dim()));
  if (x.size(1) != config_.in_channels)
    throw ShapeError("encoder expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.size(1)));
  const auto mult = config_.input_multiple();
  for (size_t a = 0; a < 3; ++a)
    if (x.size(static_cast<int64_t>(a) + 2) % mult[a] != 0)
      throw ShapeError("input spatial size " + std::to_string(x.size(static_cast<int64_t>(a) + 2)) + " on axis " +
                       std::to_string(a) + " is not a multiple of " + std::to_string(mult[a]) +
                       " (patch size times 8, so that every merge halves an even grid)");

  auto h = pos_drop(patch_embed(x)).permute({0, 2, 3, 4, 1});
  EncoderOutput out;
  for (size_t level = 0; level < 4; ++level) {
    h = stages_[level]->forward(h);
    out.levels.push_back(to_channels_first(h));
    h = merges_[level]->forward(h);
  }
  out.bottleneck = to_channels_first(h);
  return out;
}

SwinEncoder build_encoder(const EncoderConfig& config) { return SwinEncoder(config); }

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

}  // namespace brainssl
