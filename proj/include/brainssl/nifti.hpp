#pragma once

#include <filesystem>

#include "brainssl/volume.hpp"

namespace brainssl {

/// Geometry read from a NIfTI-1 header, without the payload.
struct NiftiHeaderInfo {
  Dims3 dims{};
  Spacing spacing{1.0, 1.0, 1.0};
  int16_t datatype = 0;
  float vox_offset = 0.0f;
};

/// Reads a 3D NIfTI-1 image (.nii or .nii.gz; gzip is detected from the
/// content, not the suffix). Array axes (D, H, W) map to NIfTI (i, j, k).
/// Supported payloads: uint8, int16, int32, float32, float64. scl_slope/inter
/// are applied when the slope is nonzero.
Volume read_nifti(const std::filesystem::path& path);
NiftiHeaderInfo read_nifti_header(const std::filesystem::path& path);

/// Writes a single-channel volume as little-endian float32 NIfTI-1. A ".gz"
/// suffix selects gzip encoding. The sform stores the diagonal spacing affine.
void write_nifti(const Volume& volume, const std::filesystem::path& path);

}  // namespace brainssl
