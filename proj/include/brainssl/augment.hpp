#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "brainssl/volume.hpp"

namespace brainssl {

/// Axis-aligned cuboid [origin, origin + size) in voxel coordinates (D, H, W).
struct Box {
  std::array<int64_t, 3> origin{};
  std::array<int64_t, 3> size{};
};

/// Zero-pads symmetrically to at least `size` on each axis (extra voxel goes
/// after), then takes a uniformly random contiguous crop. Same crop for all channels.
Volume random_crop(const Volume& volume, Dims3 size, uint64_t seed);
/// Like random_crop but returns the chosen origin in padded coordinates as well.
std::pair<Volume, std::array<int64_t, 3>> random_crop_with_origin(const Volume& volume, Dims3 size, uint64_t seed);
Volume center_crop(const Volume& volume, Dims3 size);
/// Crop at an explicit origin of the padded volume.
Volume crop_at(const Volume& volume, Dims3 size, std::array<int64_t, 3> origin);
Volume pad_to(const Volume& volume, Dims3 size);

/// Zeroes the given boxes on every channel; returns the corrupted volume and
/// the spatial mask of erased voxels.
std::pair<Volume, BinaryMask> erase_blocks(const Volume& volume, const std::vector<Box>& boxes);

/// Erases random cuboids strictly inside a 1-voxel border shell. The target
/// erased fraction is drawn from `ratio_range`, split over a block count drawn
/// from `n_blocks_range`. ratio_range = (0, 0) disables it.
std::pair<Volume, BinaryMask> inner_cutout(const Volume& volume, std::pair<double, double> ratio_range,
                                           std::pair<int64_t, int64_t> n_blocks_range, uint64_t seed);

/// k quarter-turns in the (H, W) plane, i.e. about the depth axis.
/// Output(y, x) = input(x, W-1-y) for k = 1 (torch.rot90 convention on (H, W)).
Volume rotate90(const Volume& volume, int k);
BinaryMask rotate90(const BinaryMask& mask, int k);
SegMask rotate90(const SegMask& mask, int k);

struct AugmentConfig {
  Dims3 crop_size{96, 96, 96};
  std::pair<double, double> cutout_ratio{0.3, 0.3};
  std::pair<int64_t, int64_t> cutout_blocks{2, 6};
  bool rotation_enabled = true;
  double cutout_prob = 1.0;
  bool random_crop = true;  // false = center crop
  std::optional<std::array<int, 2>> forced_rotation;  // per view
};

/// One SSL sample: two independently augmented views of the same volume.
/// `crops` hold each view before rotation, `targets` after rotation but before
/// cutout (the inpainting target), `views` after cutout (the network input).
struct SslSample {
  std::array<Volume, 2> crops;
  std::array<Volume, 2> targets;
  std::array<Volume, 2> views;
  std::array<BinaryMask, 2> cutout_masks;
  std::array<int, 2> rotation_labels{0, 0};
};

SslSample make_ssl_views(const Volume& volume, const AugmentConfig& config, uint64_t seed);

}  // namespace brainssl
