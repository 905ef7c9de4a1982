#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "brainssl/cohort.hpp"
#include "brainssl/volume.hpp"

namespace brainssl {

/// Parameters of the synthetic brain phantom. The brain is an ellipsoid whose
/// semi-axes are `brain_extent` times the half-grid; lesions are ellipsoids
/// placed fully inside it.
struct PhantomSpec {
  Dims3 grid{64, 64, 64};
  int64_t n_modalities = 2;
  bool diseased = false;
  std::pair<int64_t, int64_t> n_lesions{1, 3};
  std::pair<double, double> lesion_radius{3.0, 7.0};  // voxels
  double noise_sigma = 0.05;
  std::vector<std::pair<double, double>> contrast_coeffs;  // (gain, offset) per modality; empty = defaults
  int64_t n_classes = 3;  // nested mask classes when diseased
  double brain_extent = 0.8;
  Spacing spacing{1.0, 1.0, 1.0};
  uint64_t seed = 0;
  std::vector<std::string> modality_names;  // empty = defaults

  /// Throws ValidationError on an inconsistent spec.
  void validate() const;
  std::pair<double, double> coeffs(int64_t modality) const;
  std::string modality_name(int64_t modality) const;
};

struct Phantom {
  Volume image;
  std::optional<SegMask> mask;
};

/// Deterministic per seed. Background outside the brain is exactly zero; noise
/// is only added inside the brain.
Phantom generate_phantom(const PhantomSpec& spec);

/// Writes `<id>_<modality>.nii.gz` per channel, `<id>_label.nii.gz` (nested
/// label map) when diseased, and `manifest.json`. Subject i uses seed
/// template.seed + i and id "sub-%04d".
std::vector<SubjectRecord> generate_dataset(const PhantomSpec& spec_template, int64_t n_subjects,
                                            const std::filesystem::path& out_dir);

/// In-memory variant of generate_dataset (same seeds and ids).
std::vector<Phantom> generate_cohort(const PhantomSpec& spec_template, int64_t n_subjects);

}  // namespace brainssl
