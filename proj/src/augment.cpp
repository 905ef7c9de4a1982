#include "brainssl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "brainssl/error.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

Volume pad_to(const Volume& volume, Dims3 size) {
  const Dims3 src = volume.dims();
  const Dims3 dst{std::max(src.d, size.d), std::max(src.h, size.h), std::max(src.w, size.w)};
  if (dst == src) return volume;
  const int64_t bz = (dst.d - src.d) / 2;
  const int64_t by = (dst.h - src.h) / 2;
  const int64_t bx = (dst.w - src.w) / 2;
  std::vector<float> out(static_cast<size_t>(volume.channels() * dst.voxels()), 0.0f);
  for (int64_t c = 0; c < volume.channels(); ++c)
    for (int64_t z = 0; z < src.d; ++z)
      for (int64_t y = 0; y < src.h; ++y) {
        const float* from = volume.voxels().data() + ((c * src.d + z) * src.h + y) * src.w;
        float* to = out.data() + ((c * dst.d + z + bz) * dst.h + y + by) * dst.w + bx;
        std::copy(from, from + src.w, to);
      }
  return volume.with_voxels(std::move(out), dst);
}

Volume crop_at(const Volume& volume, Dims3 size, std::array<int64_t, 3> origin) {
  const Volume padded = pad_to(volume, size);
  const Dims3 src = padded.dims();
  for (int a = 0; a < 3; ++a)
    if (origin[static_cast<size_t>(a)] < 0 || origin[static_cast<size_t>(a)] + size[a] > src[a])
      throw ValidationError("crop origin out of range");
  if (size == src) return padded;
  std::vector<float> out(static_cast<size_t>(padded.channels() * size.voxels()));
  for (int64_t c = 0; c < padded.channels(); ++c)
    for (int64_t z = 0; z < size.d; ++z)
      for (int64_t y = 0; y < size.h; ++y) {
        const float* from =
            padded.voxels().data() + ((c * src.d + z + origin[0]) * src.h + y + origin[1]) * src.w + origin[2];
        std::copy(from, from + size.w, out.data() + ((c * size.d + z) * size.h + y) * size.w);
      }
  return padded.with_voxels(std::move(out), size);
}

std::pair<Volume, std::array<int64_t, 3>> random_crop_with_origin(const Volume& volume, Dims3 size, uint64_t seed) {
  if (size.d < 1 || size.h < 1 || size.w < 1) throw ValidationError("crop size must be positive");
  Rng rng(derive_seed(seed, 0x43524f50));
  std::array<int64_t, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    const int64_t room = std::max(volume.dims()[a], size[a]) - size[a];
    origin[static_cast<size_t>(a)] = uniform_int(rng, 0, room);
  }
  return {crop_at(volume, size, origin), origin};
}

Volume random_crop(const Volume& volume, Dims3 size, uint64_t seed) {
  return random_crop_with_origin(volume, size, seed).first;
}

Volume center_crop(const Volume& volume, Dims3 size) {
  std::array<int64_t, 3> origin{};
  for (int a = 0; a < 3; ++a) origin[static_cast<size_t>(a)] = (std::max(volume.dims()[a], size[a]) - size[a]) / 2;
  return crop_at(volume, size, origin);
}

std::pair<Volume, BinaryMask> erase_blocks(const Volume& volume, const std::vector<Box>& boxes) {
  const Dims3 g = volume.dims();
  BinaryMask mask(g);
  for (const auto& b : boxes) {
    for (int a = 0; a < 3; ++a)
      if (b.origin[static_cast<size_t>(a)] < 0 || b.size[static_cast<size_t>(a)] < 0 ||
          b.origin[static_cast<size_t>(a)] + b.size[static_cast<size_t>(a)] > g[a])
        throw ValidationError("cutout box outside the volume");
    for (int64_t z = b.origin[0]; z < b.origin[0] + b.size[0]; ++z)
      for (int64_t y = b.origin[1]; y < b.origin[1] + b.size[1]; ++y)
        for (int64_t x = b.origin[2]; x < b.origin[2] + b.size[2]; ++x) mask.at(z, y, x) = 1;
  }
  std::vector<float> out(volume.voxels().begin(), volume.voxels().end());
  const auto n = static_cast<size_t>(g.voxels());
  for (int64_t c = 0; c < volume.channels(); ++c)
    for (size_t i = 0; i < n; ++i)
      if (mask.data[i]) out[static_cast<size_t>(c) * n + i] = 0.0f;
  return {volume.with_voxels(std::move(out)), std::move(mask)};
}

namespace {

int64_t overlap(const Box& a, const Box& b) {
  int64_t vol = 1;
  for (size_t i = 0; i < 3; ++i) {
    const int64_t lo = std::max(a.origin[i], b.origin[i]);
    const int64_t hi = std::min(a.origin[i] + a.size[i], b.origin[i] + b.size[i]);
    if (hi <= lo) return 0;
    vol *= hi - lo;
  }
  return vol;
}

}  // namespace

std::pair<Volume, BinaryMask> inner_cutout(const Volume& volume, std::pair<double, double> ratio_range,
                                           std::pair<int64_t, int64_t> n_blocks_range, uint64_t seed) {
  const auto [lo, hi] = ratio_range;
  if (lo < 0.0 || hi >= 1.0 || lo > hi) throw ValidationError("cutout ratio range must satisfy 0 <= lo <= hi < 1");
  if (n_blocks_range.first < 1 || n_blocks_range.first > n_blocks_range.second)
    throw ValidationError("invalid cutout block range");
  const Dims3 g = volume.dims();
  if (hi == 0.0 || g.d < 3 || g.h < 3 || g.w < 3) return erase_blocks(volume, {});

  Rng rng(derive_seed(seed, 0x43555420));
  const double ratio = lo == hi ? lo : uniform_real(rng, lo, hi);
  const int64_t blocks = uniform_int(rng, n_blocks_range.first, n_blocks_range.second);
  const double target = ratio * static_cast<double>(g.voxels());
  const std::array<int64_t, 3> inner{g.d - 2, g.h - 2, g.w - 2};

  std::vector<Box> boxes;
  double erased = 0.0;
  for (int64_t i = 0; i < blocks; ++i) {
    const double want = (target - erased) / static_cast<double>(blocks - i);
    if (want < 1.0) break;
    // Near-cubic block with mild random aspect; the last axis absorbs rounding.
    const double edge = std::cbrt(want);
    Box box;
    box.size[0] = std::clamp<int64_t>(std::llround(edge * uniform_real(rng, 0.8, 1.25)), 1, inner[0]);
    box.size[1] = std::clamp<int64_t>(std::llround(edge * uniform_real(rng, 0.8, 1.25)), 1, inner[1]);
    box.size[2] = std::clamp<int64_t>(
        std::llround(want / static_cast<double>(box.size[0] * box.size[1])), 1, inner[2]);
    // Several candidate positions; keep the one overlapping earlier blocks least.
    Box best = box;
    int64_t best_overlap = -1;
    for (int attempt = 0; attempt < 16; ++attempt) {
      Box cand = box;
      for (size_t a = 0; a < 3; ++a) cand.origin[a] = 1 + uniform_int(rng, 0, inner[a] - box.size[a]);
      int64_t ov = 0;
      for (const auto& other : boxes) ov += overlap(cand, other);
      if (best_overlap < 0 || ov < best_overlap) {
        best = cand;
        best_overlap = ov;
      }
      if (ov == 0) break;
    }
    boxes.push_back(best);
    erased += static_cast<double>(box.size[0] * box.size[1] * box.size[2] - best_overlap);
  }
  return erase_blocks(volume, boxes);
}

namespace {

int normalize_turns(int k) {
  if (k < 0 || k > 3) throw ValidationError("rotation k must be in {0,1,2,3}, got " + std::to_string(k));
  return k;
}

// Rotates `planes` consecutive (h x w) planes; returns new (h', w').
template <typename T>
std::vector<T> rotate_planes(const T* src, int64_t planes, int64_t h, int64_t w, int k, int64_t& oh, int64_t& ow) {
  oh = (k % 2 == 0) ? h : w;
  ow = (k % 2 == 0) ? w : h;
  std::vector<T> out(static_cast<size_t>(planes * h * w));
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = src + p * h * w;
    T* o = out.data() + p * h * w;
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        int64_t sy = y;
        int64_t sx = x;
        switch (k) {
          case 1: sy = x; sx = w - 1 - y; break;
          case 2: sy = h - 1 - y; sx = w - 1 - x; break;
          case 3: sy = h - 1 - x; sx = y; break;
          default: break;
        }
        o[y * ow + x] = in[sy * w + sx];
      }
  }
  return out;
}

}  // namespace

Volume rotate90(const Volume& volume, int k) {
  k = normalize_turns(k);
  if (k == 0) return volume;
  const Dims3 g = volume.dims();
  int64_t oh = 0;
  int64_t ow = 0;
  auto out = rotate_planes(volume.voxels().data(), volume.channels() * g.d, g.h, g.w, k, oh, ow);
  return volume.with_voxels(std::move(out), Dims3{g.d, oh, ow});
}

BinaryMask rotate90(const BinaryMask& mask, int k) {
  k = normalize_turns(k);
  if (k == 0) return mask;
  int64_t oh = 0;
  int64_t ow = 0;
  auto out = rotate_planes(mask.data.data(), mask.dims.d, mask.dims.h, mask.dims.w, k, oh, ow);
  return BinaryMask(Dims3{mask.dims.d, oh, ow}, std::move(out));
}

SegMask rotate90(const SegMask& mask, int k) {
  k = normalize_turns(k);
  if (k == 0) return mask;
  const Dims3 g = mask.dims();
  int64_t oh = 0;
  int64_t ow = 0;
  auto out = rotate_planes(mask.labels().data(), mask.classes() * g.d, g.h, g.w, k, oh, ow);
  return SegMask(Dims3{g.d, oh, ow}, std::move(out), mask.class_names());
}

SslSample make_ssl_views(const Volume& volume, const AugmentConfig& config, uint64_t seed) {
  SslSample s;
  for (size_t v = 0; v < 2; ++v) {
    const uint64_t view_seed = derive_seed(seed, 100 + v);
    Rng rng(derive_seed(view_seed, 1));
    s.crops[v] = config.random_crop ? random_crop(volume, config.crop_size, derive_seed(view_seed, 2))
                                    : center_crop(volume, config.crop_size);
    int k = 0;
    if (config.forced_rotation) {
      k = (*config.forced_rotation)[v];
    } else if (config.rotation_enabled) {
      k = static_cast<int>(uniform_int(rng, 0, 3));
    }
    s.rotation_labels[v] = normalize_turns(k);
    s.targets[v] = rotate90(s.crops[v], k);
    const bool cut = config.cutout_prob > 0.0 && uniform_real(rng, 0.0, 1.0) < config.cutout_prob;
    auto [view, mask] = cut ? inner_cutout(s.targets[v], config.cutout_ratio, config.cutout_blocks,
                                           derive_seed(view_seed, 3))
                            : erase_blocks(s.targets[v], {});
    s.views[v] = std::move(view);
    s.cutout_masks[v] = std::move(mask);
  }
  return s;
}

}  // namespace brainssl
