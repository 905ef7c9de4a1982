#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "brainssl/volume.hpp"

namespace brainssl {

struct SubjectRecord {
  std::string subject_id;
  std::map<std::string, int64_t> slices;  // modality -> slice count
  bool has_label = false;
  std::map<std::string, std::string> paths;  // modality (or "label") -> file path

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

/// Keeps records having at least `min_slices` slices in every required
/// modality. Records missing a required modality are dropped.
std::vector<SubjectRecord> filter_min_slices(const std::vector<SubjectRecord>& records, int64_t min_slices,
                                             const std::vector<std::string>& required_modalities);

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;
  uint64_t seed = 0;

  int64_t k() const { return static_cast<int64_t>(folds.size()); }
  /// Every id not in fold `held_out`, in fold order.
  std::vector<std::string> training_ids(int64_t held_out) const;
  friend bool operator==(const FoldSplit&, const FoldSplit&) = default;
};

/// Seeded shuffle, then round-robin dealing into k folds.
FoldSplit make_folds(const std::vector<std::string>& subject_ids, int64_t k, uint64_t seed);

/// max(1, round-half-up(fraction * N)) ids drawn without replacement.
std::vector<std::string> subsample_fraction(const std::vector<std::string>& subject_ids, double fraction,
                                            uint64_t seed);
int64_t subsample_size(int64_t n, double fraction);

// Split files: {"folds": [[ids...], ...], "seed": n}. Loading checks that folds
// are disjoint but keeps external fold sizes as given.
void save_split(const FoldSplit& split, const std::filesystem::path& path);
FoldSplit load_split(const std::filesystem::path& path);
void validate_split(const FoldSplit& split);

// Cohort manifests: JSON array of subject records.
void save_manifest(const std::vector<SubjectRecord>& records, const std::filesystem::path& path);
std::vector<SubjectRecord> load_manifest(const std::filesystem::path& path);

/// Loads the listed modalities of a record as one multi-channel volume. Relative
/// paths resolve against `root`.
Volume load_subject(const SubjectRecord& record, const std::vector<std::string>& modalities,
                    const std::filesystem::path& root);
SegMask load_subject_label(const SubjectRecord& record, int64_t classes, const std::filesystem::path& root);

/// Per-channel z-scoring over nonzero voxels; zero background stays zero and
/// constant channels become all zeros.
Volume normalize_intensity(const Volume& volume);

}  // namespace brainssl
