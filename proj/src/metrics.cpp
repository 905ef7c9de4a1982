#include "brainssl/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "brainssl/error.hpp"

namespace brainssl {

Connectivity connectivity_from_int(int value) {
  if (value == 6) return Connectivity::Face6;
  if (value == 26) return Connectivity::Full26;
  throw ValidationError("connectivity must be 6 or 26, got " + std::to_string(value));
}

namespace {

struct Offset {
  int64_t dz, dy, dx;
};

// Neighbours already visited in raster order (lexicographically negative offsets).
std::vector<Offset> backward_offsets(Connectivity c) {
  if (c == Connectivity::Face6) return {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  std::vector<Offset> out;
  for (int64_t dz = -1; dz <= 0; ++dz)
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

int32_t find_root(std::vector<int32_t>& parent, int32_t x) {
  while (parent[static_cast<size_t>(x)] != x) {
    parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    x = parent[static_cast<size_t>(x)];
  }
  return x;
}

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (!(a.dims == b.dims))
    throw ValidationError("mask shape mismatch: " + to_string(a.dims) + " vs " + to_string(b.dims));
  if (a.data.size() != static_cast<size_t>(a.dims.voxels()) || b.data.size() != static_cast<size_t>(b.dims.voxels()))
    throw ValidationError("mask payload does not match its dims");
}

}  // namespace

ComponentLabels connected_components(const BinaryMask& mask, Connectivity connectivity) {
  const Dims3 g = mask.dims;
  if (mask.data.size() != static_cast<size_t>(g.voxels())) throw ValidationError("mask payload does not match its dims");
  for (auto v : mask.data)
    if (v > 1) throw ValidationError("connected_components expects a binary mask");

  ComponentLabels out{g, std::vector<int32_t>(mask.data.size(), 0), 0};
  std::vector<int32_t> parent{0};
  const auto offsets = backward_offsets(connectivity);
  auto idx = [&](int64_t z, int64_t y, int64_t x) { return static_cast<size_t>((z * g.h + y) * g.w + x); };

  for (int64_t z = 0; z < g.d; ++z)
    for (int64_t y = 0; y < g.h; ++y)
      for (int64_t x = 0; x < g.w; ++x) {
        if (!mask.data[idx(z, y, x)]) continue;
        int32_t label = 0;
        for (const auto& o : offsets) {
          const int64_t nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
          if (nz < 0 || ny < 0 || ny >= g.h || nx < 0 || nx >= g.w) continue;
          const int32_t n = out.labels[idx(nz, ny, nx)];
          if (n == 0) continue;
          if (label == 0) {
            label = find_root(parent, n);
          } else {
            const int32_t a = find_root(parent, label);
            const int32_t b = find_root(parent, n);
            if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
            label = std::min(a, b);
          }
        }
        if (label == 0) {
          label = static_cast<int32_t>(parent.size());
          parent.push_back(label);
        }
        out.labels[idx(z, y, x)] = label;
      }

  // Resolve provisional labels to dense ids in order of first appearance.
  std::vector<int32_t> dense(parent.size(), 0);
  for (auto& l : out.labels) {
    if (l == 0) continue;
    const int32_t root = find_root(parent, l);
    if (dense[static_cast<size_t>(root)] == 0) dense[static_cast<size_t>(root)] = ++out.count;
    l = dense[static_cast<size_t>(root)];
  }
  return out;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt);
  int64_t inter = 0, p = 0, g = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    p += pred.data[i];
    g += gt.data[i];
    inter += pred.data[i] & gt.data[i];
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

LesionCounts lesionwise_f1(const BinaryMask& pred, const BinaryMask& gt, Connectivity connectivity) {
  require_same_shape(pred, gt);
  const auto gl = connected_components(gt, connectivity);
  const auto pl = connected_components(pred, connectivity);
  std::vector<uint8_t> gt_hit(static_cast<size_t>(gl.count) + 1, 0);
  std::vector<uint8_t> pred_hit(static_cast<size_t>(pl.count) + 1, 0);
  for (size_t i = 0; i < gl.labels.size(); ++i) {
    if (gl.labels[i] && pred.data[i]) gt_hit[static_cast<size_t>(gl.labels[i])] = 1;
    if (pl.labels[i] && gt.data[i]) pred_hit[static_cast<size_t>(pl.labels[i])] = 1;
  }
  LesionCounts r;
  for (int32_t c = 1; c <= gl.count; ++c) (gt_hit[static_cast<size_t>(c)] ? r.tp : r.fn) += 1;
  for (int32_t c = 1; c <= pl.count; ++c) r.fp += pred_hit[static_cast<size_t>(c)] ? 0 : 1;
  const int64_t denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(r.tp) / static_cast<double>(denom);
  return r;
}

VolumeDifference volume_difference(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing) {
  require_same_shape(pred, gt);
  const int64_t diff = std::llabs(gt.count() - pred.count());
  return {diff, static_cast<double>(diff) * spacing[0] * spacing[1] * spacing[2]};
}

int64_t lesion_count_diff(const BinaryMask& pred, const BinaryMask& gt, Connectivity connectivity) {
  require_same_shape(pred, gt);
  return std::llabs(static_cast<int64_t>(connected_components(gt, connectivity).count) -
                    static_cast<int64_t>(connected_components(pred, connectivity).count));
}

CaseMetrics evaluate_masks(const SegMask& pred, const SegMask& gt, const Spacing& spacing, Connectivity connectivity,
                           std::string case_id) {
  if (!(pred.dims() == gt.dims()) || pred.classes() != gt.classes())
    throw ValidationError("prediction and ground truth disagree in shape or class count");
  CaseMetrics m;
  m.case_id = std::move(case_id);
  for (int64_t k = 0; k < gt.classes(); ++k) m.dice_per_class.push_back(dice(pred.channel(k), gt.channel(k)));
  m.dice_mean = std::accumulate(m.dice_per_class.begin(), m.dice_per_class.end(), 0.0) /
                static_cast<double>(m.dice_per_class.size());
  const auto p = pred.any();
  const auto g = gt.any();
  m.volume_difference = volume_difference(p, g, spacing);
  m.lesion_count_diff = lesion_count_diff(p, g, connectivity);
  m.lesionwise = lesionwise_f1(p, g, connectivity);
  return m;
}

CaseMetrics evaluate_case(std::span<const float> pred_probs, const SegMask& gt, double threshold,
                          const Spacing& spacing, Connectivity connectivity, std::string case_id) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must be in (0, 1)");
  if (pred_probs.size() != gt.labels().size())
    throw ValidationError("prediction has " + std::to_string(pred_probs.size()) + " values, ground truth " +
                          std::to_string(gt.labels().size()));
  std::vector<uint8_t> bin(pred_probs.size());
  for (size_t i = 0; i < bin.size(); ++i) bin[i] = pred_probs[i] >= threshold ? 1 : 0;
  return evaluate_masks(SegMask(gt.dims(), std::move(bin), gt.class_names()), gt, spacing, connectivity,
                        std::move(case_id));
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

Report aggregate_report(std::vector<CaseMetrics> cases) {
  Report r;
  r.cases = std::move(cases);
  std::vector<double> d, f1, lc, vv, vm;
  for (const auto& c : r.cases) {
    d.push_back(c.dice_mean);
    f1.push_back(c.lesionwise.f1);
    lc.push_back(static_cast<double>(c.lesion_count_diff));
    vv.push_back(static_cast<double>(c.volume_difference.voxels));
    vm.push_back(c.volume_difference.mm3);
  }
  r.dice = summarize(d);
  r.lesion_f1 = summarize(f1);
  r.lesion_count_diff = summarize(lc);
  r.volume_difference_voxels = summarize(vv);
  r.volume_difference_mm3 = summarize(vm);
  return r;
}

std::string report_csv(const Report& report) {
  std::ostringstream out;
  out.precision(10);
  size_t classes = 0;
  for (const auto& c : report.cases) classes = std::max(classes, c.dice_per_class.size());
  out << "case_id,dice";
  for (size_t k = 0; k < classes; ++k) out << ",dice_class" << k + 1;
  out << ",lesion_f1,tp,fp,fn,lesion_count_diff,volume_diff_voxels,volume_diff_mm3\n";
  for (const auto& c : report.cases) {
    out << c.case_id << ',' << c.dice_mean;
    for (size_t k = 0; k < classes; ++k) {
      out << ',';
      if (k < c.dice_per_class.size()) out << c.dice_per_class[k];
    }
    out << ',' << c.lesionwise.f1 << ',' << c.lesionwise.tp << ',' << c.lesionwise.fp << ',' << c.lesionwise.fn << ','
        << c.lesion_count_diff << ',' << c.volume_difference.voxels << ',' << c.volume_difference.mm3 << '\n';
  }
  return out.str();
}

std::string report_json(const Report& report) {
  auto summary = [](const MetricSummary& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
  nlohmann::json j = {
      {"case_count", report.case_count()},
      {"dice", summary(report.dice)},
      {"lesion_wise_f1", summary(report.lesion_f1)},
      {"simple_lesion_count", summary(report.lesion_count_diff)},
      {"volume_difference", {{"voxels", summary(report.volume_difference_voxels)},
                             {"mm3", summary(report.volume_difference_mm3)}}},
  };
  return j.dump(2);
}

}  // namespace brainssl
