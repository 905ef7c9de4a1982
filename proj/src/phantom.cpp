#include "brainssl/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "brainssl/error.hpp"
#include "brainssl/nifti.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

namespace {

constexpr std::array<std::pair<double, double>, 4> kDefaultCoeffs{{{1.0, 0.0}, {-0.5, 1.0}, {0.8, 0.3}, {-0.3, 0.8}}};
constexpr std::array<const char*, 4> kDefaultNames{"T1w", "T2-FLAIR", "T1-ce", "T2w"};
// Relative brain semi-axes along (D, H, W); unequal in-plane axes make the
// quarter-turn rotations distinguishable.
constexpr std::array<double, 3> kAxisRatio{0.78, 0.95, 0.8};
// Nested lesion regions: radius scale and additive signal per region.
constexpr std::array<double, 3> kRegionScale{1.0, 0.6, 0.3};
constexpr int kPlacementRetries = 200;

using Vec3 = std::array<double, 3>;

struct Blob {
  Vec3 center;
  double sigma;
  double amplitude;
};

struct Lesion {
  Vec3 center;
  Vec3 radii;
};

double smoothstep(double lo, double hi, double x) {
  const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double lesion_delta(int64_t region, int64_t modality) {
  const double m = static_cast<double>(modality);
  switch (region) {
    case 0: return 0.8 * (1.0 + 0.25 * m);
    case 1: return (modality % 2 == 0 ? 0.5 : -0.3);
    default: return (modality % 2 == 0 ? -0.6 : 0.4);
  }
}

}  // namespace

std::pair<double, double> PhantomSpec::coeffs(int64_t modality) const {
  if (!contrast_coeffs.empty()) return contrast_coeffs[static_cast<size_t>(modality)];
  return kDefaultCoeffs[static_cast<size_t>(modality) % kDefaultCoeffs.size()];
}

std::string PhantomSpec::modality_name(int64_t modality) const {
  if (!modality_names.empty()) return modality_names[static_cast<size_t>(modality)];
  if (modality < static_cast<int64_t>(kDefaultNames.size())) return kDefaultNames[static_cast<size_t>(modality)];
  return "mod" + std::to_string(modality);
}

void PhantomSpec::validate() const {
  if (grid.d < 16 || grid.h < 16 || grid.w < 16) throw ValidationError("phantom grid dims must be >= 16");
  if (n_modalities < 1) throw ValidationError("n_modalities must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");
  if (n_lesions.first < 0 || n_lesions.first > n_lesions.second) throw ValidationError("invalid n_lesions range");
  if (!(lesion_radius.first > 0.0) || lesion_radius.first > lesion_radius.second)
    throw ValidationError("invalid lesion_radius range");
  if (n_classes < 1 || n_classes > 3) throw ValidationError("n_classes must be 1..3");
  if (!(brain_extent > 0.0 && brain_extent <= 1.0)) throw ValidationError("brain_extent must be in (0, 1]");
  if (!contrast_coeffs.empty() && static_cast<int64_t>(contrast_coeffs.size()) != n_modalities)
    throw ValidationError("contrast_coeffs needs one (gain, offset) pair per modality");
  if (!modality_names.empty() && static_cast<int64_t>(modality_names.size()) != n_modalities)
    throw ValidationError("modality_names needs one name per modality");
  double min_axis = 1e9;
  for (int a = 0; a < 3; ++a)
    min_axis = std::min(min_axis, 0.95 * brain_extent * kAxisRatio[static_cast<size_t>(a)] * static_cast<double>(grid[a]) / 2.0);
  if (diseased && lesion_radius.second >= 0.85 * min_axis)
    throw ValidationError("lesion radius " + std::to_string(lesion_radius.second) +
                          " does not fit inside the brain ellipsoid (min semi-axis " + std::to_string(min_axis) + ")");
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5048414e));
  const Dims3 g = spec.grid;

  Vec3 center{};
  Vec3 axes{};
  for (int a = 0; a < 3; ++a) {
    const double half = static_cast<double>(g[a]) / 2.0;
    center[static_cast<size_t>(a)] = half - 0.5 + uniform_real(rng, -1.0, 1.0);
    axes[static_cast<size_t>(a)] = spec.brain_extent * kAxisRatio[static_cast<size_t>(a)] * half * uniform_real(rng, 0.95, 1.0);
  }
  auto brain_radius = [&](const Vec3& p) {
    double s = 0.0;
    for (size_t a = 0; a < 3; ++a) s += std::pow((p[a] - center[a]) / axes[a], 2);
    return std::sqrt(s);
  };

  std::vector<Blob> blobs;
  // Two ventricle-like dark blobs off-center along W plus random structures.
  const double vent_off = 0.25 * axes[2];
  blobs.push_back({{center[0], center[1] - 0.1 * axes[1], center[2] - vent_off}, 0.12 * axes[1], -0.45});
  blobs.push_back({{center[0], center[1] - 0.1 * axes[1], center[2] + vent_off}, 0.12 * axes[1], -0.45});
  const int64_t n_random = uniform_int(rng, 3, 6);
  for (int64_t i = 0; i < n_random; ++i) {
    Vec3 c{};
    do {
      for (size_t a = 0; a < 3; ++a) c[a] = center[a] + uniform_real(rng, -0.6, 0.6) * axes[a];
    } while (brain_radius(c) > 0.6);
    blobs.push_back({c, uniform_real(rng, 0.06, 0.15) * axes[1], uniform_real(rng, -0.3, 0.3)});
  }

  std::vector<Lesion> lesions;
  if (spec.diseased) {
    const double min_axis = *std::min_element(axes.begin(), axes.end());
    const int64_t n = uniform_int(rng, spec.n_lesions.first, spec.n_lesions.second);
    for (int64_t i = 0; i < n; ++i) {
      Lesion les{};
      for (auto& r : les.radii) r = uniform_real(rng, spec.lesion_radius.first, spec.lesion_radius.second);
      const double rmax = *std::max_element(les.radii.begin(), les.radii.end());
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
        for (size_t a = 0; a < 3; ++a)
          les.center[a] = std::round(center[a] + uniform_real(rng, -0.8, 0.8) * axes[a]);
        placed = brain_radius(les.center) + rmax / min_axis <= 0.92;
      }
      if (!placed)
        throw GenerationError("could not place lesion " + std::to_string(i) + " inside the brain after " +
                              std::to_string(kPlacementRetries) + " attempts");
      lesions.push_back(les);
    }
  }

  const auto n = static_cast<size_t>(g.voxels());
  const int64_t classes = spec.diseased ? spec.n_classes : 0;
  std::vector<float> base(n, 0.0f);
  std::vector<float> weight(n, 0.0f);
  std::vector<int8_t> region(n, -1);  // deepest lesion region index, -1 = none
  for (int64_t z = 0; z < g.d; ++z)
    for (int64_t y = 0; y < g.h; ++y)
      for (int64_t x = 0; x < g.w; ++x) {
        const Vec3 p{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        const double r = brain_radius(p);
        if (r >= 1.0) continue;
        const size_t idx = static_cast<size_t>((z * g.h + y) * g.w + x);
        weight[idx] = static_cast<float>(std::clamp((1.0 - r) / 0.08, 0.0, 1.0));
        double b = 1.0 - 0.3 * smoothstep(0.75, 0.9, r);
        for (const auto& blob : blobs) {
          double d2 = 0.0;
          for (size_t a = 0; a < 3; ++a) d2 += (p[a] - blob.center[a]) * (p[a] - blob.center[a]);
          b += blob.amplitude * std::exp(-d2 / (2.0 * blob.sigma * blob.sigma));
        }
        base[idx] = static_cast<float>(b);
        for (const auto& les : lesions)
          for (int64_t k = 0; k < classes; ++k) {
            double s = 0.0;
            for (size_t a = 0; a < 3; ++a)
              s += std::pow((p[a] - les.center[a]) / (les.radii[a] * kRegionScale[static_cast<size_t>(k)]), 2);
            if (s <= 1.0) region[idx] = std::max<int8_t>(region[idx], static_cast<int8_t>(k));
          }
      }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> voxels(static_cast<size_t>(spec.n_modalities) * n, 0.0f);
  std::vector<std::string> names;
  for (int64_t m = 0; m < spec.n_modalities; ++m) {
    const auto [gain, offset] = spec.coeffs(m);
    names.push_back(spec.modality_name(m));
    float* out = voxels.data() + static_cast<size_t>(m) * n;
    for (size_t i = 0; i < n; ++i) {
      if (weight[i] <= 0.0f) continue;
      double v = gain * base[i] + offset;
      for (int k = 0; k <= region[i]; ++k) v += lesion_delta(k, m);
      v = weight[i] * v + spec.noise_sigma * noise(rng);
      out[i] = static_cast<float>(v);
    }
  }

  char id[32];
  std::snprintf(id, sizeof(id), "phantom-%llu", static_cast<unsigned long long>(spec.seed));
  Phantom result{Volume(g, std::move(voxels), spec.spacing, id, std::move(names)), std::nullopt};
  if (spec.diseased) {
    std::vector<uint8_t> labels(static_cast<size_t>(classes) * n, 0);
    for (int64_t k = 0; k < classes; ++k)
      for (size_t i = 0; i < n; ++i) labels[static_cast<size_t>(k) * n + i] = region[i] >= k ? 1 : 0;
    std::vector<std::string> class_names;
    for (int64_t k = 0; k < classes; ++k) class_names.push_back("class" + std::to_string(k + 1));
    result.mask = SegMask(g, std::move(labels), std::move(class_names));
  }
  return result;
}

namespace {

std::string subject_name(int64_t index) {
  char id[32];
  std::snprintf(id, sizeof(id), "sub-%04lld", static_cast<long long>(index));
  return id;
}

PhantomSpec subject_spec(const PhantomSpec& tmpl, int64_t index) {
  auto spec = tmpl;
  spec.seed = tmpl.seed + static_cast<uint64_t>(index);
  return spec;
}

}  // namespace

std::vector<Phantom> generate_cohort(const PhantomSpec& spec_template, int64_t n_subjects) {
  if (n_subjects < 1) throw ValidationError("n_subjects must be >= 1");
  std::vector<Phantom> out;
  for (int64_t i = 0; i < n_subjects; ++i) {
    auto p = generate_phantom(subject_spec(spec_template, i));
    p.image = Volume(p.image.dims(), std::vector<float>(p.image.voxels().begin(), p.image.voxels().end()),
                     p.image.spacing(), subject_name(i), p.image.modality_names());
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SubjectRecord> generate_dataset(const PhantomSpec& spec_template, int64_t n_subjects,
                                            const std::filesystem::path& out_dir) {
  if (n_subjects < 1) throw ValidationError("n_subjects must be >= 1");
  spec_template.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

  std::vector<SubjectRecord> records;
  for (int64_t i = 0; i < n_subjects; ++i) {
    const auto phantom = generate_phantom(subject_spec(spec_template, i));
    SubjectRecord rec;
    rec.subject_id = subject_name(i);
    rec.has_label = phantom.mask.has_value();
    const auto& img = phantom.image;
    for (int64_t m = 0; m < img.channels(); ++m) {
      const auto& name = img.modality_names()[static_cast<size_t>(m)];
      const std::string file = rec.subject_id + "_" + name + ".nii.gz";
      const int64_t idx[] = {m};
      write_nifti(img.select_channels(idx), out_dir / file);
      rec.paths[name] = file;
      rec.slices[name] = img.dims().w;
    }
    if (phantom.mask) {
      const std::string file = rec.subject_id + "_label.nii.gz";
      write_nifti(Volume(img.dims(), label_map_from_seg_mask(*phantom.mask), img.spacing(), rec.subject_id, {"label"}),
                  out_dir / file);
      rec.paths["label"] = file;
    }
    records.push_back(std::move(rec));
  }
  save_manifest(records, out_dir / "manifest.json");
  return records;
}

}  // namespace brainssl
