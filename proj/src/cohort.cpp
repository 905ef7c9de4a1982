#include "brainssl/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "brainssl/error.hpp"
#include "brainssl/nifti.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

using nlohmann::json;

std::vector<SubjectRecord> filter_min_slices(const std::vector<SubjectRecord>& records, int64_t min_slices,
                                             const std::vector<std::string>& required_modalities) {
  if (min_slices < 1) throw ValidationError("min_slices must be >= 1");
  std::vector<SubjectRecord> kept;
  for (const auto& r : records) {
    const bool ok = std::all_of(required_modalities.begin(), required_modalities.end(), [&](const auto& m) {
      auto it = r.slices.find(m);
      return it != r.slices.end() && it->second >= min_slices;
    });
    if (ok) kept.push_back(r);
  }
  return kept;
}

std::vector<std::string> FoldSplit::training_ids(int64_t held_out) const {
  if (held_out < 0 || held_out >= k()) throw ValidationError("fold index out of range");
  std::vector<std::string> ids;
  for (int64_t f = 0; f < k(); ++f)
    if (f != held_out) ids.insert(ids.end(), folds[static_cast<size_t>(f)].begin(), folds[static_cast<size_t>(f)].end());
  return ids;
}

namespace {

void require_unique(const std::vector<std::string>& ids) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate subject id '" + id + "'");
}

}  // namespace

FoldSplit make_folds(const std::vector<std::string>& subject_ids, int64_t k, uint64_t seed) {
  if (k < 2) throw ValidationError("k must be >= 2");
  if (static_cast<int64_t>(subject_ids.size()) < k)
    throw ValidationError("need at least k=" + std::to_string(k) + " subjects, got " +
                          std::to_string(subject_ids.size()));
  require_unique(subject_ids);
  auto order = subject_ids;
  Rng rng(derive_seed(seed, 0x464f4c44));
  std::shuffle(order.begin(), order.end(), rng);
  FoldSplit split;
  split.seed = seed;
  split.folds.resize(static_cast<size_t>(k));
  for (size_t i = 0; i < order.size(); ++i) split.folds[i % static_cast<size_t>(k)].push_back(order[i]);
  return split;
}

int64_t subsample_size(int64_t n, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ValidationError("fraction must be in (0, 1]");
  const auto rounded = static_cast<int64_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  return std::clamp<int64_t>(rounded, 1, std::max<int64_t>(n, 1));
}

std::vector<std::string> subsample_fraction(const std::vector<std::string>& subject_ids, double fraction,
                                            uint64_t seed) {
  const auto size = subsample_size(static_cast<int64_t>(subject_ids.size()), fraction);
  if (subject_ids.empty()) throw ValidationError("cannot subsample an empty id list");
  auto order = subject_ids;
  Rng rng(derive_seed(seed, 0x53554253));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<size_t>(size));
  return order;
}

void validate_split(const FoldSplit& split) {
  if (split.k() < 2) throw ValidationError("split needs at least 2 folds");
  std::vector<std::string> all;
  for (const auto& f : split.folds) {
    if (f.empty()) throw ValidationError("split contains an empty fold");
    all.insert(all.end(), f.begin(), f.end());
  }
  require_unique(all);
}

void save_split(const FoldSplit& split, const std::filesystem::path& path) {
  json j = {{"folds", split.folds}, {"seed", split.seed}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FoldSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  FoldSplit split;
  try {
    const auto j = json::parse(in);
    split.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    split.seed = j.value("seed", uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError("bad split file " + path.string() + ": " + e.what());
  }
  validate_split(split);
  return split;
}

void save_manifest(const std::vector<SubjectRecord>& records, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& r : records)
    arr.push_back({{"subject_id", r.subject_id}, {"slices", r.slices}, {"has_label", r.has_label}, {"paths", r.paths}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

std::vector<SubjectRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<SubjectRecord> records;
  try {
    const auto arr = json::parse(in);
    if (!arr.is_array()) throw FormatError("cohort manifest must be a JSON array: " + path.string());
    for (const auto& j : arr) {
      SubjectRecord r;
      r.subject_id = j.at("subject_id").get<std::string>();
      r.slices = j.value("slices", std::map<std::string, int64_t>{});
      r.has_label = j.value("has_label", false);
      r.paths = j.value("paths", std::map<std::string, std::string>{});
      for (const auto& [m, n] : r.slices)
        if (n < 0) throw ValidationError("negative slice count for " + r.subject_id + "/" + m);
      records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad cohort manifest " + path.string() + ": " + e.what());
  }
  return records;
}

namespace {

std::filesystem::path resolve(const SubjectRecord& record, const std::string& key, const std::filesystem::path& root) {
  auto it = record.paths.find(key);
  if (it == record.paths.end()) throw ValidationError("subject '" + record.subject_id + "' has no '" + key + "' path");
  std::filesystem::path p(it->second);
  return p.is_absolute() ? p : root / p;
}

}  // namespace

Volume load_subject(const SubjectRecord& record, const std::vector<std::string>& modalities,
                    const std::filesystem::path& root) {
  std::vector<Volume> parts;
  for (const auto& m : modalities) {
    auto v = read_nifti(resolve(record, m, root));
    parts.push_back(Volume(v.dims(), std::vector<float>(v.voxels().begin(), v.voxels().end()), v.spacing(),
                           record.subject_id, {m}));
  }
  return stack_channels(parts, record.subject_id);
}

SegMask load_subject_label(const SubjectRecord& record, int64_t classes, const std::filesystem::path& root) {
  return seg_mask_from_label_map(read_nifti(resolve(record, "label", root)), classes);
}

Volume normalize_intensity(const Volume& volume) {
  std::vector<float> out(volume.voxels().begin(), volume.voxels().end());
  const auto n = static_cast<size_t>(volume.dims().voxels());
  for (int64_t c = 0; c < volume.channels(); ++c) {
    auto* ch = out.data() + static_cast<size_t>(c) * n;
    double sum = 0.0;
    double sumsq = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < n; ++i)
      if (ch[i] != 0.0f) {
        sum += ch[i];
        ++count;
      }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    for (size_t i = 0; i < n; ++i)
      if (ch[i] != 0.0f) sumsq += (ch[i] - mean) * (ch[i] - mean);
    const double sd = std::sqrt(sumsq / static_cast<double>(count));
    const double scale = sd > 1e-8 ? 1.0 / sd : 1.0;
    for (size_t i = 0; i < n; ++i)
      if (ch[i] != 0.0f) ch[i] = static_cast<float>((ch[i] - mean) * scale);
  }
  return volume.with_voxels(std::move(out));
}

}  // namespace brainssl
