#include "brainssl/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include "brainssl/cohort.hpp"
#include "brainssl/error.hpp"
#include "brainssl/rng.hpp"

namespace brainssl {

using nlohmann::json;

std::filesystem::path DataConfig::resolved_root() const {
  if (!root.empty()) return root;
  if (const char* env = std::getenv("BRAINSSL_DATA_ROOT"); env != nullptr && *env != '\0') return env;
  return std::filesystem::current_path();
}

namespace {

const std::vector<std::string> kStages{"pretrain1", "pretrain2", "finetune"};

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + "' has the wrong type (got " + std::string(j.type_name()) + ")");
  }
}

template <typename T>
void read(const json& block, const std::string& prefix, const char* key, T& out) {
  if (block.contains(key)) out = get_as<T>(block.at(key), prefix + "." + key);
}

void read_dims(const json& block, const std::string& prefix, const char* key, Dims3& out) {
  if (!block.contains(key)) return;
  const auto v = get_as<std::vector<int64_t>>(block.at(key), prefix + "." + key);
  if (v.size() != 3) throw ConfigError("config key '" + prefix + "." + key + "' needs 3 entries");
  out = {v[0], v[1], v[2]};
}

json dims_json(const Dims3& d) { return json::array({d.d, d.h, d.w}); }

json data_json(const DataConfig& d) {
  return {{"root", d.root},
          {"healthy_dir", d.healthy_dir},
          {"healthy_modalities", d.healthy_modalities},
          {"diseased_dir", d.diseased_dir},
          {"diseased_modalities", d.diseased_modalities},
          {"keep_channels", d.keep_channels},
          {"classes", d.classes},
          {"min_slices", d.min_slices},
          {"normalize", d.normalize},
          {"n_val", d.n_val},
          {"n_test", d.n_test},
          {"folds", d.folds},
          {"split_file", d.split_file},
          {"fractions", d.fractions},
          {"repeats", d.repeats}};
}

json encoder_json(const EncoderConfig& e) {
  return {{"variant", e.variant}, {"in_channels", e.in_channels}, {"patch_size", e.patch_size},
          {"embed_dim", e.embed_dim}, {"depths", e.depths},       {"heads", e.heads},
          {"window", e.window},     {"mlp_ratio", e.mlp_ratio},   {"qkv_bias", e.qkv_bias}};
}

json ssl_json(const ExperimentConfig& c) {
  const auto& a = c.augment;
  return {{"inpaint", c.weights.inpaint},
          {"rotation", c.weights.rotation},
          {"contrastive", c.weights.contrastive},
          {"temperature", c.weights.temperature},
          {"projection_dim", c.heads.projection_dim},
          {"reconstruction_widths", c.heads.reconstruction_widths},
          {"crop_size", dims_json(a.crop_size)},
          {"cutout_ratio", json::array({a.cutout_ratio.first, a.cutout_ratio.second})},
          {"cutout_blocks", json::array({a.cutout_blocks.first, a.cutout_blocks.second})},
          {"cutout_prob", a.cutout_prob},
          {"rotation_enabled", a.rotation_enabled},
          {"random_crop", a.random_crop}};
}

json seg_json(const ExperimentConfig& c) {
  return {{"out_channels", c.seg.out_channels},
          {"decoder_channels", c.seg.decoder_channels},
          {"roi", dims_json(c.seg.roi)},
          {"overlap", c.seg.overlap},
          {"rotate", c.seg_rotate}};
}

std::set<std::string> train_keys() {
  std::set<std::string> keys;
  const auto defaults = to_json(TrainConfig{});
  for (const auto& [k, v] : defaults.items()) keys.insert(k);
  keys.erase("stage");
  return keys;
}

void check_keys(const json& block, const std::string& prefix, const json& reference,
                const std::set<std::string>& extra = {}) {
  if (!block.is_object()) throw ConfigError("config block '" + prefix + "' must be an object");
  for (const auto& [k, v] : block.items())
    if (!reference.contains(k) && !extra.count(k)) throw ConfigError("unknown config key '" + prefix + "." + k + "'");
}

void check_train_block(const json& block, const std::string& prefix, bool top) {
  if (!block.is_object()) throw ConfigError("config block '" + prefix + "' must be an object");
  const auto keys = train_keys();
  for (const auto& [k, v] : block.items()) {
    if (keys.count(k) || k == "preset") continue;
    if (top && std::find(kStages.begin(), kStages.end(), k) != kStages.end()) {
      check_train_block(v, prefix + "." + k, false);
      continue;
    }
    throw ConfigError("unknown config key '" + prefix + "." + k + "'");
  }
  if (block.contains("preset")) {
    const auto name = get_as<std::string>(block.at("preset"), prefix + ".preset");
    TrainConfig::preset(name);  // throws on an unknown name
  }
}

void apply_train_keys(TrainConfig& c, const json& b, const std::string& p) {
  if (b.contains("preset")) {
    const auto keep_stage = c.stage;
    c = TrainConfig::preset(b.at("preset").get<std::string>());
    c.stage = keep_stage;
  }
  read(b, p, "lr_peak", c.lr_peak);
  read(b, p, "warmup_steps", c.warmup_steps);
  read(b, p, "total_steps", c.total_steps);
  read(b, p, "epochs", c.epochs);
  read(b, p, "batch_size", c.batch_size);
  read(b, p, "beta1", c.beta1);
  read(b, p, "beta2", c.beta2);
  read(b, p, "weight_decay", c.weight_decay);
  read(b, p, "dropout", c.dropout);
  read(b, p, "grad_clip", c.grad_clip);
  read(b, p, "val_every", c.val_every);
  read(b, p, "checkpoint_every", c.checkpoint_every);
  read(b, p, "seed", c.seed);
  read(b, p, "num_threads", c.num_threads);
}

}  // namespace

TrainConfig ExperimentConfig::train(const std::string& stage) const {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
    throw ConfigError("unknown stage '" + stage + "'");
  TrainConfig c;
  c.stage = stage;
  apply_train_keys(c, train_block, "train");
  if (train_block.contains(stage)) apply_train_keys(c, train_block.at(stage), "train." + stage);
  c.validate();
  return c;
}

json ExperimentConfig::to_json(const std::string& stage) const {
  auto t = brainssl::to_json(train(stage));
  t.erase("stage");
  return {{"data", data_json(data)}, {"encoder", encoder_json(encoder)}, {"ssl", ssl_json(*this)},
          {"seg", seg_json(*this)},  {"train", t}};
}

ExperimentConfig parse_experiment(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const ExperimentConfig defaults;
  const std::set<std::string> blocks{"data", "encoder", "ssl", "seg", "train"};
  for (const auto& [k, v] : j.items())
    if (!blocks.count(k)) throw ConfigError("unknown config block '" + k + "'");

  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& b = j.at("data");
    check_keys(b, "data", data_json(defaults.data));
    auto& d = c.data;
    read(b, "data", "root", d.root);
    read(b, "data", "healthy_dir", d.healthy_dir);
    read(b, "data", "healthy_modalities", d.healthy_modalities);
    read(b, "data", "diseased_dir", d.diseased_dir);
    read(b, "data", "diseased_modalities", d.diseased_modalities);
    read(b, "data", "keep_channels", d.keep_channels);
    read(b, "data", "classes", d.classes);
    read(b, "data", "min_slices", d.min_slices);
    read(b, "data", "normalize", d.normalize);
    read(b, "data", "n_val", d.n_val);
    read(b, "data", "n_test", d.n_test);
    read(b, "data", "folds", d.folds);
    read(b, "data", "split_file", d.split_file);
    read(b, "data", "fractions", d.fractions);
    read(b, "data", "repeats", d.repeats);
  }
  c.encoder.in_channels = 0;
  if (j.contains("encoder")) {
    const auto& b = j.at("encoder");
    check_keys(b, "encoder", encoder_json(defaults.encoder));
    auto& e = c.encoder;
    if (b.contains("variant")) {
      const auto name = get_as<std::string>(b.at("variant"), "encoder.variant");
      if (name == "tiny" || name == "small" || name == "big") e = EncoderConfig::from_variant(name, 0);
      e.variant = name;
    }
    e.in_channels = 0;
    read(b, "encoder", "in_channels", e.in_channels);
    read(b, "encoder", "patch_size", e.patch_size);
    read(b, "encoder", "embed_dim", e.embed_dim);
    read(b, "encoder", "depths", e.depths);
    read(b, "encoder", "heads", e.heads);
    read(b, "encoder", "window", e.window);
    read(b, "encoder", "mlp_ratio", e.mlp_ratio);
    read(b, "encoder", "qkv_bias", e.qkv_bias);
  }
  if (j.contains("ssl")) {
    const auto& b = j.at("ssl");
    check_keys(b, "ssl", ssl_json(defaults));
    read(b, "ssl", "inpaint", c.weights.inpaint);
    read(b, "ssl", "rotation", c.weights.rotation);
    read(b, "ssl", "contrastive", c.weights.contrastive);
    read(b, "ssl", "temperature", c.weights.temperature);
    read(b, "ssl", "projection_dim", c.heads.projection_dim);
    read(b, "ssl", "reconstruction_widths", c.heads.reconstruction_widths);
    read_dims(b, "ssl", "crop_size", c.augment.crop_size);
    read(b, "ssl", "cutout_ratio", c.augment.cutout_ratio);
    read(b, "ssl", "cutout_blocks", c.augment.cutout_blocks);
    read(b, "ssl", "cutout_prob", c.augment.cutout_prob);
    read(b, "ssl", "rotation_enabled", c.augment.rotation_enabled);
    read(b, "ssl", "random_crop", c.augment.random_crop);
  }
  if (j.contains("seg")) {
    const auto& b = j.at("seg");
    check_keys(b, "seg", seg_json(defaults));
    read(b, "seg", "out_channels", c.seg.out_channels);
    read(b, "seg", "decoder_channels", c.seg.decoder_channels);
    read_dims(b, "seg", "roi", c.seg.roi);
    read(b, "seg", "overlap", c.seg.overlap);
    read(b, "seg", "rotate", c.seg_rotate);
  }
  if (j.contains("train")) {
    check_train_block(j.at("train"), "train", true);
    c.train_block = j.at("train");
  }

  // Cross-block checks; in_channels is filled in from the data at build time.
  auto e = c.encoder;
  if (e.in_channels == 0) e.in_channels = 1;
  if (e.in_channels < 0) throw ConfigError("encoder.in_channels must be >= 0");
  e.validate();
  c.heads.validate();
  c.weights.validate();
  c.seg.validate();
  c.seg.resolved_decoder_channels(e);
  if (c.data.classes < 1) throw ConfigError("data.classes must be >= 1");
  if (c.data.n_val < 0 || c.data.n_test < 0) throw ConfigError("data.n_val and data.n_test must be >= 0");
  if (c.data.folds < 2) throw ConfigError("data.folds must be >= 2");
  if (c.data.repeats < 1) throw ConfigError("data.repeats must be >= 1");
  for (const auto& s : kStages) c.train(s);
  return c;
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const auto key = o.substr(0, eq);
    const auto text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
      if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
  return j;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  if (j.is_object() && j.contains("config") && j.contains("subcommand")) j = j.at("config");
  return parse_experiment(apply_overrides(j, overrides));
}

std::vector<std::string> experiment_keys() {
  const ExperimentConfig d;
  std::vector<std::string> keys;
  auto full = d.to_json("finetune");
  for (const auto& [block, body] : full.items())
    for (const auto& [k, v] : body.items()) keys.push_back(block + "." + k);
  keys.push_back("train.preset");
  for (const auto& s : kStages) keys.push_back("train." + s + ".<train key>");
  return keys;
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<SubjectRecord> load_dataset_records(const std::filesystem::path& dir, const DataConfig& data,
                                                const std::vector<std::string>& modalities) {
  auto records = load_manifest(dir / "manifest.json");
  if (data.min_slices > 0) records = filter_min_slices(records, data.min_slices, modalities);
  if (records.empty()) throw ValidationError("no usable subjects in " + dir.string());
  return records;
}

std::vector<Volume> load_volumes(const std::filesystem::path& dir, const DataConfig& data,
                                 const std::vector<std::string>& modalities) {
  std::vector<Volume> out;
  for (const auto& r : load_dataset_records(dir, data, modalities)) {
    auto v = load_subject(r, modalities, dir);
    out.push_back(data.normalize ? normalize_intensity(v) : v);
  }
  return out;
}

std::vector<LabeledCase> load_labeled(const std::filesystem::path& dir, const DataConfig& data,
                                      const std::vector<std::string>& modalities) {
  std::vector<LabeledCase> out;
  for (const auto& r : load_dataset_records(dir, data, modalities)) {
    if (!r.has_label) throw ValidationError("subject " + r.subject_id + " in " + dir.string() + " has no label");
    auto v = load_subject(r, modalities, dir);
    out.push_back({data.normalize ? normalize_intensity(v) : v, load_subject_label(r, data.classes, dir)});
  }
  return out;
}

std::vector<Volume> phantom_volumes(const PhantomSpec& spec, int64_t n, bool normalize) {
  std::vector<Volume> out;
  for (auto& p : generate_cohort(spec, n)) out.push_back(normalize ? normalize_intensity(p.image) : p.image);
  return out;
}

std::vector<LabeledCase> phantom_cases(const PhantomSpec& spec, int64_t n, bool normalize) {
  if (!spec.diseased) throw ValidationError("labeled phantoms need a diseased spec");
  std::vector<LabeledCase> out;
  for (auto& p : generate_cohort(spec, n))
    out.push_back({normalize ? normalize_intensity(p.image) : p.image, *p.mask});
  return out;
}

// ---------------------------------------------------------------------------
// Models

int64_t checkpoint_in_channels(const Checkpoint& checkpoint) {
  const auto* t = checkpoint.find("encoder.patch_embed.weight");
  if (t == nullptr || t->shape.size() != 5)
    throw CheckpointError("checkpoint has no encoder.patch_embed.weight to read the input width from");
  return t->shape[1];
}

TransferReport load_matching(torch::nn::Module& model, const Checkpoint& checkpoint) {
  TransferReport report;
  torch::NoGradGuard g;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto* src = checkpoint.find(name);
    if (src == nullptr || torch::IntArrayRef(src->shape) != dst.sizes()) {
      report.skipped.push_back(name);
      return;
    }
    auto t = torch::from_blob(const_cast<float*>(src->data.data()), src->shape, torch::kFloat32);
    dst.copy_(t);
    report.loaded.push_back(name);
  };
  for (auto& kv : model.named_parameters()) copy(kv.key(), kv.value());
  for (auto& kv : model.named_buffers()) copy(kv.key(), kv.value());
  return report;
}

namespace {

EncoderConfig encoder_for(const ExperimentConfig& config, int64_t in_channels) {
  auto e = config.encoder;
  e.in_channels = in_channels;
  return e;
}

std::vector<int64_t> kept_channels(const ExperimentConfig& config, int64_t have, int64_t want) {
  auto keep = config.data.keep_channels;
  if (keep.empty()) {
    keep.resize(static_cast<size_t>(want));
    std::iota(keep.begin(), keep.end(), 0);
  }
  if (static_cast<int64_t>(keep.size()) != want)
    throw ConfigError("data.keep_channels lists " + std::to_string(keep.size()) + " channels, the data has " +
                      std::to_string(want));
  for (auto k : keep)
    if (k < 0 || k >= have) throw ConfigError("data.keep_channels entry " + std::to_string(k) + " out of range");
  return keep;
}

template <typename Model>
void adapt_channels(Model& model, const ExperimentConfig& config, int64_t have, int64_t want, uint64_t seed) {
  if (want > have)
    expand_input_channels(*model, want, seed);
  else if (want < have)
    restrict_input_channels(*model, kept_channels(config, have, want));
}

}  // namespace

SslModel build_ssl_model(const ExperimentConfig& config, int64_t in_channels, const Checkpoint* init,
                         bool strict_encoder, uint64_t seed, TransferReport* report) {
  torch::manual_seed(derive_seed(seed, 0x4d4f44));
  if (init == nullptr) return SslModel(encoder_for(config, in_channels), config.heads);
  const int64_t have = checkpoint_in_channels(*init);
  SslModel model(encoder_for(config, have), config.heads);
  if (strict_encoder) transfer_encoder(*init, *model, true);
  auto r = load_matching(*model, *init);
  adapt_channels(model, config, have, in_channels, derive_seed(seed, 0x4b41494d));
  if (report != nullptr) *report = r;
  return model;
}

SegModel build_finetune_model(const ExperimentConfig& config, int64_t in_channels, const Checkpoint* init,
                              bool strict_encoder, uint64_t seed, TransferReport* report) {
  torch::manual_seed(derive_seed(seed, 0x4d4f44));
  auto seg = config.seg;
  seg.dropout_rate = config.train("finetune").dropout;
  if (init == nullptr) return SegModel(encoder_for(config, in_channels), seg);
  const int64_t have = checkpoint_in_channels(*init);
  SegModel model(encoder_for(config, have), seg);
  auto r = transfer_encoder(*init, *model, strict_encoder);
  adapt_channels(model, config, have, in_channels, derive_seed(seed, 0x4b41494d));
  if (report != nullptr) *report = r;
  return model;
}

// ---------------------------------------------------------------------------
// Stages

SslTrainResult run_pretrain(const ExperimentConfig& config, const std::string& stage, const std::vector<Volume>& train,
                            const std::vector<Volume>& val, const Checkpoint* init, bool strict_encoder,
                            const std::filesystem::path& out_dir) {
  if (stage != "pretrain1" && stage != "pretrain2") throw ConfigError("run_pretrain needs pretrain1 or pretrain2");
  if (train.empty()) throw ValidationError(stage + " has no training volumes");
  auto tc = config.train(stage);
  tc.out_dir = out_dir;
  const int64_t channels = train.front().channels();
  auto model = build_ssl_model(config, channels, init, strict_encoder, tc.seed);
  auto snapshot = config.to_json(stage);
  snapshot["encoder"]["in_channels"] = channels;
  snapshot["data"]["root"] = std::filesystem::absolute(config.data.resolved_root()).lexically_normal().string();
  return train_ssl(*model, train, val, config.augment, config.weights, tc, snapshot);
}

FinetuneOutcome run_finetune(const ExperimentConfig& config, const std::vector<LabeledCase>& train,
                             const std::vector<LabeledCase>& val, const std::vector<LabeledCase>& test,
                             const Checkpoint* init, bool strict_encoder, const std::filesystem::path& out_dir,
                             std::optional<uint64_t> seed) {
  if (train.empty()) throw ValidationError("finetune has no training cases");
  auto tc = config.train("finetune");
  if (seed) tc.seed = *seed;
  tc.out_dir = out_dir;
  const int64_t channels = train.front().image.channels();
  auto model = build_finetune_model(config, channels, init, strict_encoder, tc.seed);
  auto snapshot = config.to_json("finetune");
  snapshot["encoder"]["in_channels"] = channels;
  snapshot["data"]["root"] = std::filesystem::absolute(config.data.resolved_root()).lexically_normal().string();
  snapshot["train"]["seed"] = tc.seed;
  FinetuneOutcome out;
  out.training = train_supervised(*model, train, val, tc, config.seg_rotate, snapshot);
  load_weights(*model, out.training.best_checkpoint);
  double sum = 0.0;
  for (const auto& c : test) {
    out.test.push_back(evaluate_model(*model, c));
    sum += out.test.back().dice_mean;
  }
  out.test_dice = test.empty() ? 0.0 : sum / static_cast<double>(test.size());
  return out;
}

}  // namespace brainssl
