#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace brainssl {

struct Dims3 {
  int64_t d = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t voxels() const { return d * h * w; }
  int64_t operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& dims);

using Spacing = std::array<double, 3>;

/// Dense multi-channel 3D scalar field, channel-major (C x D x H x W) with W
/// varying fastest. Immutable once constructed; derive new volumes with
/// with_voxels() or the free functions in augment/preprocess.
class Volume {
 public:
  Volume() = default;
  Volume(Dims3 dims, std::vector<float> voxels, Spacing spacing = {1.0, 1.0, 1.0},
         std::string subject_id = {}, std::vector<std::string> modality_names = {});

  static Volume zeros(int64_t channels, Dims3 dims, Spacing spacing = {1.0, 1.0, 1.0});

  int64_t channels() const { return static_cast<int64_t>(modality_names_.size()); }
  const Dims3& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  const std::string& subject_id() const { return subject_id_; }
  const std::vector<std::string>& modality_names() const { return modality_names_; }

  std::span<const float> voxels() const { return voxels_; }
  std::span<const float> channel(int64_t c) const;
  float at(int64_t c, int64_t z, int64_t y, int64_t x) const {
    return voxels_[static_cast<size_t>(((c * dims_.d + z) * dims_.h + y) * dims_.w + x)];
  }

  /// Same metadata, new payload (channel count inferred from payload size).
  Volume with_voxels(std::vector<float> voxels, Dims3 dims) const;
  Volume with_voxels(std::vector<float> voxels) const { return with_voxels(std::move(voxels), dims_); }

  /// Channel subset / reordering; indices may repeat (duplicate-modality routing).
  Volume select_channels(std::span<const int64_t> indices) const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims3 dims_{};
  std::vector<float> voxels_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::string subject_id_;
  std::vector<std::string> modality_names_;
};

/// Concatenate single- or multi-channel volumes of identical geometry along channels.
Volume stack_channels(std::span<const Volume> parts, std::string subject_id = {});

/// One binary 3D mask.
struct BinaryMask {
  Dims3 dims{};
  std::vector<uint8_t> data;

  BinaryMask() = default;
  explicit BinaryMask(Dims3 d) : dims(d), data(static_cast<size_t>(d.voxels()), 0) {}
  BinaryMask(Dims3 d, std::vector<uint8_t> values);

  uint8_t at(int64_t z, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((z * dims.h + y) * dims.w + x)];
  }
  uint8_t& at(int64_t z, int64_t y, int64_t x) {
    return data[static_cast<size_t>((z * dims.h + y) * dims.w + x)];
  }
  int64_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// K binary class maps sharing one geometry.
class SegMask {
 public:
  SegMask() = default;
  SegMask(Dims3 dims, std::vector<uint8_t> labels, std::vector<std::string> class_names);

  int64_t classes() const { return static_cast<int64_t>(class_names_.size()); }
  const Dims3& dims() const { return dims_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::span<const uint8_t> labels() const { return labels_; }
  BinaryMask channel(int64_t k) const;
  /// Voxelwise union over classes.
  BinaryMask any() const;

  friend bool operator==(const SegMask&, const SegMask&) = default;

 private:
  Dims3 dims_{};
  std::vector<uint8_t> labels_;
  std::vector<std::string> class_names_;
};

/// Nested label map (value v means "inside classes 1..v") to K binary channels.
SegMask seg_mask_from_label_map(const Volume& label_map, int64_t classes);
/// Inverse of seg_mask_from_label_map; requires class k+1 to be a subset of class k.
std::vector<float> label_map_from_seg_mask(const SegMask& mask);

}  // namespace brainssl
