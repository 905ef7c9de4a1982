#include "brainssl/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "brainssl/error.hpp"

namespace brainssl {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum : int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

template <typename T>
T load(const std::vector<char>& buf, size_t offset, bool swap) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

template <typename T>
void store(std::vector<char>& buf, size_t offset, T value) {
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

std::vector<char> slurp(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::vector<char> out;
  char chunk[1 << 16];
  int n = 0;
  while ((n = gzread(f, chunk, sizeof(chunk))) > 0) out.insert(out.end(), chunk, chunk + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError("corrupt gzip stream in " + path.string());
  return out;
}

struct ParsedHeader {
  NiftiHeaderInfo info;
  bool swap = false;
  float slope = 0.0f;
  float inter = 0.0f;
};

ParsedHeader parse_header(const std::vector<char>& buf, const std::filesystem::path& path) {
  if (buf.size() < kHeaderSize) throw FormatError("truncated NIfTI header in " + path.string());
  ParsedHeader h;
  auto size = load<int32_t>(buf, 0, false);
  if (size != kHeaderSize) {
    h.swap = true;
    size = load<int32_t>(buf, 0, true);
    if (size != kHeaderSize) throw FormatError("not a NIfTI-1 file (sizeof_hdr != 348): " + path.string());
  }
  const char* magic = buf.data() + 344;
  if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0)
    throw FormatError("bad NIfTI-1 magic in " + path.string());
  if (std::strncmp(magic, "ni1", 3) == 0)
    throw FormatError("two-file NIfTI (.hdr/.img) is not supported: " + path.string());

  std::array<int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[static_cast<size_t>(i)] = load<int16_t>(buf, 40 + 2 * static_cast<size_t>(i), h.swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("invalid dim[0] in " + path.string());
  int rank = dim[0];
  while (rank > 3 && dim[static_cast<size_t>(rank)] == 1) --rank;
  if (rank != 3)
    throw UnsupportedRankError("expected a 3D image, got rank " + std::to_string(rank) + " in " + path.string());
  for (int i = 1; i <= 3; ++i)
    if (dim[static_cast<size_t>(i)] < 1) throw FormatError("nonpositive dimension in " + path.string());
  h.info.dims = {dim[1], dim[2], dim[3]};
  for (int i = 0; i < 3; ++i) {
    const float p = load<float>(buf, 76 + 4 * static_cast<size_t>(i + 1), h.swap);
    h.info.spacing[static_cast<size_t>(i)] = p > 0.0f ? static_cast<double>(p) : 1.0;
  }
  h.info.datatype = load<int16_t>(buf, 70, h.swap);
  h.info.vox_offset = load<float>(buf, 108, h.swap);
  h.slope = load<float>(buf, 112, h.swap);
  h.inter = load<float>(buf, 116, h.swap);
  return h;
}

template <typename T>
void decode(const std::vector<char>& buf, size_t offset, size_t n, bool swap, std::vector<double>& out) {
  if (buf.size() < offset + n * sizeof(T)) throw FormatError("NIfTI payload shorter than header dims");
  out.resize(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<double>(load<T>(buf, offset + i * sizeof(T), swap));
}

}  // namespace

NiftiHeaderInfo read_nifti_header(const std::filesystem::path& path) {
  return parse_header(slurp(path), path).info;
}

Volume read_nifti(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  const auto h = parse_header(buf, path);
  const auto dims = h.info.dims;
  const auto n = static_cast<size_t>(dims.voxels());
  const auto offset = static_cast<size_t>(std::max(h.info.vox_offset, static_cast<float>(kHeaderSize)));

  std::vector<double> raw;
  switch (h.info.datatype) {
    case kUint8: decode<uint8_t>(buf, offset, n, h.swap, raw); break;
    case kInt16: decode<int16_t>(buf, offset, n, h.swap, raw); break;
    case kInt32: decode<int32_t>(buf, offset, n, h.swap, raw); break;
    case kFloat32: decode<float>(buf, offset, n, h.swap, raw); break;
    case kFloat64: decode<double>(buf, offset, n, h.swap, raw); break;
    default:
      throw FormatError("unsupported NIfTI datatype " + std::to_string(h.info.datatype) + " in " + path.string());
  }
  const bool scaled = h.slope != 0.0f && std::isfinite(h.slope) && !(h.slope == 1.0f && h.inter == 0.0f);

  // File order is i fastest; array order is W (= k) fastest.
  std::vector<float> voxels(n);
  for (int64_t k = 0; k < dims.w; ++k)
    for (int64_t j = 0; j < dims.h; ++j)
      for (int64_t i = 0; i < dims.d; ++i) {
        double v = raw[static_cast<size_t>(i + dims.d * (j + dims.h * k))];
        if (scaled) v = v * h.slope + h.inter;
        voxels[static_cast<size_t>((i * dims.h + j) * dims.w + k)] = static_cast<float>(v);
      }
  auto stem = path.filename().string();
  for (const char* ext : {".gz", ".nii"})
    if (stem.size() > std::strlen(ext) && stem.ends_with(ext)) stem.resize(stem.size() - std::strlen(ext));
  return Volume(dims, std::move(voxels), h.info.spacing, stem, {"ch0"});
}

void write_nifti(const Volume& volume, const std::filesystem::path& path) {
  if (volume.channels() != 1)
    throw ValidationError("write_nifti expects a single-channel volume, got " +
                          std::to_string(volume.channels()) + " channels");
  const auto dims = volume.dims();
  if (dims.d > 32767 || dims.h > 32767 || dims.w > 32767) throw ValidationError("dims exceed NIfTI-1 limits");
  const auto n = static_cast<size_t>(dims.voxels());

  std::vector<char> buf(kVoxOffset + n * sizeof(float), 0);
  store<int32_t>(buf, 0, kHeaderSize);
  store<char>(buf, 38, 'r');
  const int16_t dim[8] = {3, static_cast<int16_t>(dims.d), static_cast<int16_t>(dims.h),
                          static_cast<int16_t>(dims.w), 1, 1, 1, 1};
  for (size_t i = 0; i < 8; ++i) store<int16_t>(buf, 40 + 2 * i, dim[i]);
  store<int16_t>(buf, 70, kFloat32);
  store<int16_t>(buf, 72, 32);
  const auto& sp = volume.spacing();
  const float pixdim[8] = {1.0f, static_cast<float>(sp[0]), static_cast<float>(sp[1]), static_cast<float>(sp[2]),
                           1.0f, 1.0f, 1.0f, 1.0f};
  for (size_t i = 0; i < 8; ++i) store<float>(buf, 76 + 4 * i, pixdim[i]);
  store<float>(buf, 108, static_cast<float>(kVoxOffset));
  store<float>(buf, 112, 1.0f);
  store<float>(buf, 116, 0.0f);
  store<char>(buf, 123, 2);  // mm
  store<int16_t>(buf, 252, 0);
  store<int16_t>(buf, 254, 2);  // sform: aligned anatomy
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 4; ++c) store<float>(buf, 280 + 16 * r + 4 * c, r == c ? pixdim[r + 1] : 0.0f);
  std::memcpy(buf.data() + 344, "n+1\0", 4);

  auto src = volume.channel(0);
  for (int64_t k = 0; k < dims.w; ++k)
    for (int64_t j = 0; j < dims.h; ++j)
      for (int64_t i = 0; i < dims.d; ++i) {
        const float v = src[static_cast<size_t>((i * dims.h + j) * dims.w + k)];
        store<float>(buf, kVoxOffset + sizeof(float) * static_cast<size_t>(i + dims.d * (j + dims.h * k)), v);
      }

  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (f == nullptr) throw IoError("cannot write " + path.string());
    const auto written = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
    const int rc = gzclose(f);
    if (written != static_cast<int>(buf.size()) || rc != Z_OK) throw IoError("failed writing " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace brainssl
