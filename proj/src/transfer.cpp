#include "brainssl/transfer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <ATen/CPUGeneratorImpl.h>
#include <zlib.h>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

uint32_t crc_of(const std::vector<float>& data) {
  // Payloads are hashed in their on-disk (little-endian) form; the host is
  // little-endian, which capture_checkpoint checks.
  return static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
                                     static_cast<uInt>(data.size() * sizeof(float))));
}

int64_t numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& kv : model.named_parameters()) out.emplace_back(kv.key(), kv.value());
  for (const auto& kv : model.named_buffers()) out.emplace_back(kv.key(), kv.value());
  return out;
}

void copy_into(torch::Tensor& dst, const NamedTensor& src) {
  torch::NoGradGuard g;
  auto t = torch::from_blob(const_cast<float*>(src.data.data()), src.shape, torch::kFloat32);
  dst.copy_(t);
}

bool shapes_match(const torch::Tensor& t, const NamedTensor& e) { return t.sizes().vec() == e.shape; }

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (a.format_version != b.format_version || a.config != b.config || a.step != b.step || a.seed != b.seed ||
      a.tensors.size() != b.tensors.size())
    return false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i];
    const auto& y = b.tensors[i];
    if (x.name != y.name || x.shape != y.shape || x.data.size() != y.data.size()) return false;
    if (std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

Checkpoint capture_checkpoint(const torch::nn::Module& model, nlohmann::json config, int64_t step, uint64_t seed) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");
  Checkpoint ck;
  ck.config = std::move(config);
  ck.step = step;
  ck.seed = seed;
  for (const auto& [name, t] : named_state(model)) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    NamedTensor e{name, c.sizes().vec(), std::vector<float>(static_cast<size_t>(c.numel()))};
    std::memcpy(e.data.data(), c.data_ptr<float>(), e.data.size() * sizeof(float));
    ck.tensors.push_back(std::move(e));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    const uint64_t nbytes = t.data.size() * sizeof(float);
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes},
                       {"crc32", crc_of(t.data)}});
    offset += nbytes;
  }
  const nlohmann::json manifest = {{"format_version", ck.format_version},
                                   {"step", ck.step},
                                   {"seed", ck.seed},
                                   {"config", ck.config},
                                   {"tensors", entries}};
  const std::string text = manifest.dump();
  std::string header(kMagic, sizeof(kMagic));
  put_le<uint32_t>(header, ck.format_version);
  put_le<uint64_t>(header, text.size());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ck.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = "corrupt checkpoint archive " + path.string() + ": ";
  if (bytes.size() < 20) throw CheckpointError(where + "file too short for the header");
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(where + "bad magic");
  Checkpoint ck;
  ck.format_version = get_le<uint32_t>(p + 8);
  if (ck.format_version != Checkpoint::kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(ck.format_version));
  const auto mlen = get_le<uint64_t>(p + 12);
  if (mlen > bytes.size() - 20) throw CheckpointError(where + "manifest truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(20, mlen));
    ck.step = manifest.at("step").get<int64_t>();
    ck.seed = manifest.at("seed").get<uint64_t>();
    ck.config = manifest.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "unreadable manifest (" + e.what() + ")");
  }
  const uint64_t base = 20 + mlen;
  for (const auto& e : manifest.at("tensors")) {
    NamedTensor t;
    uint64_t offset = 0, nbytes = 0;
    uint32_t crc = 0;
    try {
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<int64_t>>();
      offset = e.at("offset").get<uint64_t>();
      nbytes = e.at("nbytes").get<uint64_t>();
      crc = e.at("crc32").get<uint32_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw CheckpointError(where + "bad tensor entry (" + ex.what() + ")");
    }
    if (nbytes != static_cast<uint64_t>(numel(t.shape)) * sizeof(float))
      throw CheckpointError(where + "entry '" + t.name + "' size does not match its shape");
    if (base + offset + nbytes > bytes.size())
      throw CheckpointError(where + "payload of '" + t.name + "' is truncated");
    t.data.resize(nbytes / sizeof(float));
    std::memcpy(t.data.data(), bytes.data() + base + offset, nbytes);
    if (crc_of(t.data) != crc) throw CheckpointError(where + "checksum mismatch in '" + t.name + "'");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

void load_weights(torch::nn::Module& model, const Checkpoint& ck) {
  std::set<std::string> used;
  for (auto& [name, t] : named_state(model)) {
    const auto* e = ck.find(name);
    if (!e) throw CheckpointError("checkpoint has no tensor for model entry '" + name + "'");
    if (!shapes_match(t, *e))
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + shape_str(e->shape) + ", model " +
                            shape_str(t.sizes().vec()));
    copy_into(t, *e);
    used.insert(name);
  }
  for (const auto& e : ck.tensors)
    if (!used.count(e.name)) throw CheckpointError("checkpoint entry '" + e.name + "' has no counterpart in the model");
}

TransferReport transfer_encoder(const Checkpoint& ck, torch::nn::Module& target, bool strict) {
  if (strict && ck.config.contains("encoder") && ck.config["encoder"].contains("variant")) {
    // Compare against the target's own record when it has one.
    for (const auto& kv : target.named_children())
      if (kv.key() == "encoder") {
        if (auto* enc = kv.value()->as<SwinEncoderImpl>()) {
          const auto src = ck.config["encoder"]["variant"].get<std::string>();
          if (src != enc->config().variant)
            throw CheckpointError("encoder variant mismatch: checkpoint '" + src + "', target '" +
                                  enc->config().variant + "'");
        }
      }
  }
  TransferReport report;
  const std::string prefix = "encoder.";
  for (auto& [name, t] : named_state(target)) {
    const bool is_encoder = name.rfind(prefix, 0) == 0;
    const auto* e = is_encoder ? ck.find(name) : nullptr;
    if (is_encoder && (!e || !shapes_match(t, *e))) {
      if (strict)
        throw CheckpointError(e ? "encoder tensor '" + name + "' has shape " + shape_str(e->shape) +
                                      " in the checkpoint but " + shape_str(t.sizes().vec()) + " in the target"
                                : "checkpoint lacks encoder tensor '" + name + "'");
      e = nullptr;
    }
    if (e) {
      copy_into(t, *e);
      report.loaded.push_back(name);
    } else {
      report.skipped.push_back(name);
    }
  }
  return report;
}

namespace {

// A tensor whose `axis` indexes modalities. Weights of new slices are Kaiming
// normal; biases of new slices are zero.
struct ChannelSlot {
  torch::Tensor param;
  int64_t axis;
  bool is_bias;
};

std::vector<ChannelSlot> slots(SslModelImpl& m) {
  std::vector<ChannelSlot> s{{m.encoder->patch_embed->weight, 1, false},
                             {m.reconstruction_out->weight, 0, false}};
  if (m.reconstruction_out->bias.defined()) s.push_back({m.reconstruction_out->bias, 0, true});
  return s;
}

std::vector<ChannelSlot> slots(SegModelImpl& m) {
  return {{m.encoder->patch_embed->weight, 1, false},
          {m.input_block->conv1->weight, 1, false},
          {m.input_block->skip->weight, 1, false}};
}

void expand_slots(std::vector<ChannelSlot> slots, int64_t current, int64_t new_total, uint64_t seed) {
  if (new_total <= current)
    throw ValidationError("expand_input_channels needs more than the current " + std::to_string(current) +
                          " channels, got " + std::to_string(new_total));
  auto gen = at::detail::createCPUGenerator(seed);
  torch::NoGradGuard g;
  for (auto& s : slots) {
    auto old = s.param.detach().clone();
    auto shape = old.sizes().vec();
    const int64_t have = shape[static_cast<size_t>(s.axis)];
    shape[static_cast<size_t>(s.axis)] = new_total - have;
    torch::Tensor fresh;
    if (s.is_bias) {
      fresh = torch::zeros(shape, old.options());
    } else {
      auto full = shape;
      full[static_cast<size_t>(s.axis)] = new_total;
      int64_t fan_in = 1;
      for (size_t i = 1; i < full.size(); ++i) fan_in *= full[i];
      fresh = torch::randn(shape, gen, old.options()) * std::sqrt(2.0 / static_cast<double>(fan_in));
    }
    s.param.set_data(torch::cat({old, fresh}, s.axis));
  }
}

void restrict_slots(std::vector<ChannelSlot> slots, int64_t current, const std::vector<int64_t>& keep) {
  if (keep.empty()) throw ValidationError("restrict_input_channels needs at least one channel to keep");
  std::set<int64_t> seen;
  for (auto k : keep) {
    if (k < 0 || k >= current)
      throw ValidationError("channel index " + std::to_string(k) + " out of range for " + std::to_string(current) +
                            " channels");
    if (!seen.insert(k).second) throw ValidationError("channel index " + std::to_string(k) + " listed twice");
  }
  const auto idx = torch::tensor(keep, torch::kInt64);
  torch::NoGradGuard g;
  for (auto& s : slots) s.param.set_data(s.param.detach().index_select(s.axis, idx).clone());
}

}  // namespace

void expand_input_channels(SslModelImpl& model, int64_t new_total, uint64_t seed) {
  expand_slots(slots(model), model.in_channels(), new_total, seed);
  model.encoder->set_in_channels(new_total);
}

void expand_input_channels(SegModelImpl& model, int64_t new_total, uint64_t seed) {
  expand_slots(slots(model), model.in_channels(), new_total, seed);
  model.encoder->set_in_channels(new_total);
}

void restrict_input_channels(SslModelImpl& model, const std::vector<int64_t>& keep) {
  restrict_slots(slots(model), model.in_channels(), keep);
  model.encoder->set_in_channels(static_cast<int64_t>(keep.size()));
}

void restrict_input_channels(SegModelImpl& model, const std::vector<int64_t>& keep) {
  restrict_slots(slots(model), model.in_channels(), keep);
  model.encoder->set_in_channels(static_cast<int64_t>(keep.size()));
}

}  // namespace brainssl
