#include "brainssl/volume.hpp"

#include <cmath>

#include "brainssl/error.hpp"

namespace brainssl {

std::string to_string(const Dims3& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

namespace {

std::vector<std::string> default_names(int64_t channels) {
  std::vector<std::string> names;
  for (int64_t c = 0; c < channels; ++c) names.push_back("ch" + std::to_string(c));
  return names;
}

}  // namespace

Volume::Volume(Dims3 dims, std::vector<float> voxels, Spacing spacing, std::string subject_id,
               std::vector<std::string> modality_names)
    : dims_(dims),
      voxels_(std::move(voxels)),
      spacing_(spacing),
      subject_id_(std::move(subject_id)),
      modality_names_(std::move(modality_names)) {
  if (dims_.d < 1 || dims_.h < 1 || dims_.w < 1)
    throw ValidationError("volume dims must be >= 1, got " + to_string(dims_));
  const auto per_channel = static_cast<size_t>(dims_.voxels());
  if (voxels_.empty() || voxels_.size() % per_channel != 0)
    throw ValidationError("voxel payload of " + std::to_string(voxels_.size()) +
                          " values does not fit dims " + to_string(dims_));
  const auto channels = static_cast<int64_t>(voxels_.size() / per_channel);
  if (modality_names_.empty()) modality_names_ = default_names(channels);
  if (static_cast<int64_t>(modality_names_.size()) != channels)
    throw ValidationError("expected " + std::to_string(channels) + " modality names, got " +
                          std::to_string(modality_names_.size()));
  for (double s : spacing_)
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("spacing must be positive and finite");
  for (float v : voxels_)
    if (!std::isfinite(v)) throw ValidationError("volume '" + subject_id_ + "' has non-finite voxels");
}

Volume Volume::zeros(int64_t channels, Dims3 dims, Spacing spacing) {
  return Volume(dims, std::vector<float>(static_cast<size_t>(channels * dims.voxels()), 0.0f), spacing);
}

std::span<const float> Volume::channel(int64_t c) const {
  if (c < 0 || c >= channels()) throw ValidationError("channel index out of range");
  const auto n = static_cast<size_t>(dims_.voxels());
  return std::span<const float>(voxels_).subspan(static_cast<size_t>(c) * n, n);
}

Volume Volume::with_voxels(std::vector<float> voxels, Dims3 dims) const {
  const auto channels = voxels.size() / static_cast<size_t>(std::max<int64_t>(dims.voxels(), 1));
  auto names = modality_names_;
  if (names.size() != channels) names.clear();
  return Volume(dims, std::move(voxels), spacing_, subject_id_, std::move(names));
}

Volume Volume::select_channels(std::span<const int64_t> indices) const {
  if (indices.empty()) throw ValidationError("channel selection must be nonempty");
  std::vector<float> out;
  std::vector<std::string> names;
  out.reserve(indices.size() * static_cast<size_t>(dims_.voxels()));
  for (int64_t c : indices) {
    auto src = channel(c);
    out.insert(out.end(), src.begin(), src.end());
    names.push_back(modality_names_[static_cast<size_t>(c)]);
  }
  return Volume(dims_, std::move(out), spacing_, subject_id_, std::move(names));
}

Volume stack_channels(std::span<const Volume> parts, std::string subject_id) {
  if (parts.empty()) throw ValidationError("cannot stack zero volumes");
  std::vector<float> out;
  std::vector<std::string> names;
  for (const auto& p : parts) {
    if (!(p.dims() == parts.front().dims()))
      throw ShapeError("channel geometry mismatch: " + to_string(p.dims()) + " vs " +
                       to_string(parts.front().dims()));
    out.insert(out.end(), p.voxels().begin(), p.voxels().end());
    names.insert(names.end(), p.modality_names().begin(), p.modality_names().end());
  }
  if (subject_id.empty()) subject_id = parts.front().subject_id();
  return Volume(parts.front().dims(), std::move(out), parts.front().spacing(), std::move(subject_id),
                std::move(names));
}

BinaryMask::BinaryMask(Dims3 d, std::vector<uint8_t> values) : dims(d), data(std::move(values)) {
  if (static_cast<int64_t>(data.size()) != dims.voxels())
    throw ShapeError("mask payload does not match dims " + to_string(dims));
  for (auto v : data)
    if (v > 1) throw ValidationError("mask values must be 0 or 1");
}

int64_t BinaryMask::count() const {
  int64_t n = 0;
  for (auto v : data) n += v;
  return n;
}

SegMask::SegMask(Dims3 dims, std::vector<uint8_t> labels, std::vector<std::string> class_names)
    : dims_(dims), labels_(std::move(labels)), class_names_(std::move(class_names)) {
  if (class_names_.empty()) throw ValidationError("segmentation mask needs at least one class");
  if (static_cast<int64_t>(labels_.size()) != classes() * dims_.voxels())
    throw ShapeError("segmentation payload does not match " + std::to_string(classes()) + " x " +
                     to_string(dims_));
  for (auto v : labels_)
    if (v > 1) throw ValidationError("segmentation labels must be 0 or 1");
}

BinaryMask SegMask::channel(int64_t k) const {
  if (k < 0 || k >= classes()) throw ValidationError("class index out of range");
  const auto n = static_cast<size_t>(dims_.voxels());
  auto begin = labels_.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(k) * n);
  return BinaryMask(dims_, std::vector<uint8_t>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

BinaryMask SegMask::any() const {
  BinaryMask out(dims_);
  const auto n = static_cast<size_t>(dims_.voxels());
  for (int64_t k = 0; k < classes(); ++k)
    for (size_t i = 0; i < n; ++i) out.data[i] |= labels_[static_cast<size_t>(k) * n + i];
  return out;
}

SegMask seg_mask_from_label_map(const Volume& label_map, int64_t classes) {
  if (classes < 1) throw ValidationError("class count must be >= 1");
  const auto src = label_map.channel(0);
  const auto n = src.size();
  std::vector<uint8_t> labels(static_cast<size_t>(classes) * n, 0);
  for (size_t i = 0; i < n; ++i) {
    const auto v = static_cast<int64_t>(std::lround(src[i]));
    if (v < 0 || v > classes)
      throw ValidationError("label value " + std::to_string(v) + " outside 0.." + std::to_string(classes));
    for (int64_t k = 0; k < v; ++k) labels[static_cast<size_t>(k) * n + i] = 1;
  }
  std::vector<std::string> names;
  for (int64_t k = 0; k < classes; ++k) names.push_back("class" + std::to_string(k + 1));
  return SegMask(label_map.dims(), std::move(labels), std::move(names));
}

std::vector<float> label_map_from_seg_mask(const SegMask& mask) {
  const auto n = static_cast<size_t>(mask.dims().voxels());
  std::vector<float> out(n, 0.0f);
  auto labels = mask.labels();
  for (size_t i = 0; i < n; ++i) {
    int64_t depth = 0;
    for (int64_t k = 0; k < mask.classes(); ++k) {
      const bool inside = labels[static_cast<size_t>(k) * n + i] != 0;
      if (inside && depth != k) throw ValidationError("segmentation classes are not nested");
      if (inside) ++depth;
    }
    out[i] = static_cast<float>(depth);
  }
  return out;
}

}  // namespace brainssl
