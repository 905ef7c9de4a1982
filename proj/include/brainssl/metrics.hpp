#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "brainssl/volume.hpp"

namespace brainssl {

enum class Connectivity { Face6 = 6, Full26 = 26 };
Connectivity connectivity_from_int(int value);

struct ComponentLabels {
  Dims3 dims{};
  std::vector<int32_t> labels;  // 0 = background, components numbered 1..count in raster order
  int32_t count = 0;
};

/// Two-pass union-find labeling. Input values must be 0 or 1.
ComponentLabels connected_components(const BinaryMask& mask, Connectivity connectivity = Connectivity::Full26);

/// 2|P∩G| / (|P| + |G|); 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

struct LesionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  double f1 = 0.0;
};

/// TP: ground-truth component overlapping the prediction in at least one voxel.
/// FN: ground-truth component with no overlap. FP: predicted component with no
/// overlap with the ground truth. F1 = 2TP / (2TP + FP + FN), 1 when both empty.
LesionCounts lesionwise_f1(const BinaryMask& pred, const BinaryMask& gt,
                           Connectivity connectivity = Connectivity::Full26);

struct VolumeDifference {
  int64_t voxels = 0;
  double mm3 = 0.0;
};
VolumeDifference volume_difference(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing);

int64_t lesion_count_diff(const BinaryMask& pred, const BinaryMask& gt,
                          Connectivity connectivity = Connectivity::Full26);

struct CaseMetrics {
  std::string case_id;
  std::vector<double> dice_per_class;
  double dice_mean = 0.0;
  VolumeDifference volume_difference;
  int64_t lesion_count_diff = 0;
  LesionCounts lesionwise;
};

/// Probabilities (K x D x H x W, class-major) thresholded at `threshold` (p >= t
/// is foreground). Dice is per class; the lesion metrics and volume difference
/// use the union over classes (for nested classes, the outermost region).
CaseMetrics evaluate_case(std::span<const float> pred_probs, const SegMask& gt, double threshold = 0.5,
                          const Spacing& spacing = {1.0, 1.0, 1.0},
                          Connectivity connectivity = Connectivity::Full26, std::string case_id = {});
CaseMetrics evaluate_masks(const SegMask& pred, const SegMask& gt, const Spacing& spacing = {1.0, 1.0, 1.0},
                           Connectivity connectivity = Connectivity::Full26, std::string case_id = {});

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single case
};

struct Report {
  std::vector<CaseMetrics> cases;
  MetricSummary dice;
  MetricSummary lesion_f1;
  MetricSummary lesion_count_diff;
  MetricSummary volume_difference_voxels;
  MetricSummary volume_difference_mm3;
  int64_t case_count() const { return static_cast<int64_t>(cases.size()); }
};

MetricSummary summarize(std::span<const double> values);
Report aggregate_report(std::vector<CaseMetrics> cases);

/// Per-case CSV and aggregate JSON (the four challenge metrics).
std::string report_csv(const Report& report);
std::string report_json(const Report& report);

}  // namespace brainssl
