#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sasvr/dataio.hpp"
#include "sasvr/error.hpp"

namespace sasvr {

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;
constexpr char kRawMagic[4] = {'S', 'V', 'R', 'V'};
constexpr std::uint32_t kRawVersion = 1;
constexpr std::size_t kRawHeaderSize = 32;

enum NiftiType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
};

template <typename T>
T get_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put_le(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
  }
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError(IoError::Kind::MissingFile, "no such file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Kind::WriteFailed, "failed writing " + path.string());
}

void append_floats(std::vector<unsigned char>& bytes, const std::vector<float>& values) {
  const std::size_t start = bytes.size();
  bytes.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) put_le<float>(&bytes[start + 4 * i], values[i]);
}

// Widen a header float through its shortest decimal form, so 2.4f reads back as 2.4.
double widen_decimal(float f) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), f);
  double d = f;
  std::from_chars(buf, res.ptr, d);
  return d;
}

void parse_provenance(const std::string& descrip, Volume& vol) {
  // "subject=<id>;t=<n>"
  const auto s = descrip.find("subject=");
  const auto t = descrip.find(";t=");
  if (s == std::string::npos || t == std::string::npos || t < s) return;
  vol.subject_id = descrip.substr(s + 8, t - s - 8);
  try {
    vol.time_index = std::stoi(descrip.substr(t + 3));
  } catch (const std::exception&) {
    vol.time_index = 0;
  }
}

Volume load_raw(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < kRawHeaderSize) {
    throw IoError(IoError::Kind::MalformedHeader, "truncated raw header: " + path.string());
  }
  const auto* p = bytes.data();
  if (get_le<std::uint32_t>(p + 4) != kRawVersion) {
    throw IoError(IoError::Kind::MalformedHeader, "unknown raw version: " + path.string());
  }
  VolumeGeometry geom;
  for (int a = 0; a < 3; ++a) {
    const auto d = get_le<std::uint32_t>(p + 8 + 4 * a);
    if (d < 1 || d > (1U << 16)) {
      throw IoError(IoError::Kind::MalformedHeader, "bad raw dimensions: " + path.string());
    }
    geom.shape[a] = static_cast<int>(d);
  }
  if (get_le<std::uint32_t>(p + 20) != static_cast<std::uint32_t>(kFloat32)) {
    throw IoError(IoError::Kind::UnsupportedDatatype, "raw volumes must be float32");
  }
  geom.spacing = get_le<double>(p + 24);
  if (!(geom.spacing > 0.0) || !std::isfinite(geom.spacing)) {
    throw IoError(IoError::Kind::MalformedHeader, "bad raw spacing: " + path.string());
  }
  const std::size_t n = geom.voxel_count();
  if (bytes.size() < kRawHeaderSize + 4 * n) {
    throw IoError(IoError::Kind::MalformedHeader, "truncated raw data: " + path.string());
  }
  Volume vol(geom);
  for (std::size_t i = 0; i < n; ++i) vol.data[i] = get_le<float>(p + kRawHeaderSize + 4 * i);
  return vol;
}

Volume load_nifti(const std::vector<unsigned char>& bytes, const std::filesystem::path& path,
                  const LoadOptions& options) {
  if (bytes.size() < kNiftiHeaderSize) {
    throw IoError(IoError::Kind::MalformedHeader, "truncated NIfTI header: " + path.string());
  }
  const auto* p = bytes.data();
  const auto sizeof_hdr = get_le<std::int32_t>(p);
  if (sizeof_hdr != static_cast<std::int32_t>(kNiftiHeaderSize)) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == kNiftiHeaderSize) {
      throw IoError(IoError::Kind::UnsupportedDatatype, "big-endian NIfTI is not supported");
    }
    throw IoError(IoError::Kind::MalformedHeader, "not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(p + 344, "n+1", 4) != 0) {
    throw IoError(IoError::Kind::MalformedHeader,
                  "only single-file NIfTI-1 (n+1) is supported: " + path.string());
  }
  const auto ndim = get_le<std::int16_t>(p + 40);
  if (ndim < 1 || ndim > 7) {
    throw IoError(IoError::Kind::MalformedHeader, "bad NIfTI dimension count");
  }
  std::array<int, 3> xyz{1, 1, 1};
  for (int a = 0; a < std::min<int>(ndim, 3); ++a) {
    const auto d = get_le<std::int16_t>(p + 42 + 2 * a);
    if (d < 1) throw IoError(IoError::Kind::MalformedHeader, "bad NIfTI dimensions");
    xyz[a] = d;
  }
  for (int a = 3; a < ndim; ++a) {
    if (get_le<std::int16_t>(p + 42 + 2 * a) > 1) {
      throw IoError(IoError::Kind::UnsupportedDatatype, "only 3D NIfTI volumes are supported");
    }
  }
  const auto datatype = get_le<std::int16_t>(p + 70);
  std::size_t bytes_per = 0;
  switch (datatype) {
    case kUint8:
    case kInt8: bytes_per = 1; break;
    case kInt16:
    case kUint16: bytes_per = 2; break;
    case kInt32:
    case kFloat32: bytes_per = 4; break;
    case kFloat64: bytes_per = 8; break;
    default:
      throw IoError(IoError::Kind::UnsupportedDatatype,
                    "unsupported NIfTI datatype " + std::to_string(datatype));
  }
  std::array<double, 3> pix{};
  for (int a = 0; a < 3; ++a) pix[a] = std::abs(widen_decimal(get_le<float>(p + 80 + 4 * a)));
  for (double s : pix) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw IoError(IoError::Kind::MalformedHeader, "bad NIfTI voxel spacing");
    }
  }
  const bool isotropic =
      std::abs(pix[0] - pix[1]) <= 1e-6 * pix[0] && std::abs(pix[0] - pix[2]) <= 1e-6 * pix[0];
  if (!isotropic && !options.allow_anisotropic) {
    throw InvalidArgument("anisotropic voxel spacing in " + path.string());
  }
  const auto vox_offset = static_cast<std::size_t>(get_le<float>(p + 108));
  if (vox_offset < kNiftiHeaderSize) {
    throw IoError(IoError::Kind::MalformedHeader, "bad NIfTI vox_offset");
  }
  double slope = get_le<float>(p + 112);
  const double inter = get_le<float>(p + 116);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;

  VolumeGeometry geom;
  geom.shape = {xyz[2], xyz[1], xyz[0]};
  geom.spacing = pix[0];
  const std::size_t n = geom.voxel_count();
  if (bytes.size() < vox_offset + n * bytes_per) {
    throw IoError(IoError::Kind::MalformedHeader, "truncated NIfTI data: " + path.string());
  }
  Volume vol(geom);
  const auto* d = p + vox_offset;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (datatype) {
      case kUint8: v = d[i]; break;
      case kInt8: v = static_cast<std::int8_t>(d[i]); break;
      case kInt16: v = get_le<std::int16_t>(d + 2 * i); break;
      case kUint16: v = get_le<std::uint16_t>(d + 2 * i); break;
      case kInt32: v = get_le<std::int32_t>(d + 4 * i); break;
      case kFloat32: v = get_le<float>(d + 4 * i); break;
      case kFloat64: v = get_le<double>(d + 8 * i); break;
      default: break;
    }
    vol.data[i] = (slope == 1.0 && inter == 0.0) ? static_cast<float>(v)
                                                 : static_cast<float>(v * slope + inter);
  }
  const char* descrip = reinterpret_cast<const char*>(p + 148);
  parse_provenance(std::string(descrip, strnlen(descrip, 80)), vol);
  return vol;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path, const LoadOptions& options) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kRawMagic, 4) == 0) {
    return load_raw(bytes, path);
  }
  return load_nifti(bytes, path, options);
}

void save_nifti(const Volume& vol, const std::filesystem::path& path) {
  vol.geometry.validate();
  for (int d : vol.geometry.shape) {
    if (d > 32767) throw InvalidArgument("dimension too large for NIfTI-1");
  }
  std::vector<unsigned char> bytes(kNiftiDataOffset, 0);
  auto* p = bytes.data();
  put_le<std::int32_t>(p, static_cast<std::int32_t>(kNiftiHeaderSize));
  const std::int16_t dims[8] = {3,
                                static_cast<std::int16_t>(vol.geometry.width()),
                                static_cast<std::int16_t>(vol.geometry.height()),
                                static_cast<std::int16_t>(vol.geometry.depth()),
                                1, 1, 1, 1};
  for (int a = 0; a < 8; ++a) put_le<std::int16_t>(p + 40 + 2 * a, dims[a]);
  put_le<std::int16_t>(p + 70, kFloat32);
  put_le<std::int16_t>(p + 72, 32);
  const float pixdim[8] = {1.0F,
                           static_cast<float>(vol.geometry.spacing),
                           static_cast<float>(vol.geometry.spacing),
                           static_cast<float>(vol.geometry.spacing),
                           1.0F, 1.0F, 1.0F, 1.0F};
  for (int a = 0; a < 8; ++a) put_le<float>(p + 76 + 4 * a, pixdim[a]);
  put_le<float>(p + 108, static_cast<float>(kNiftiDataOffset));
  put_le<float>(p + 112, 1.0F);
  put_le<float>(p + 116, 0.0F);
  p[123] = 2;  // xyzt_units: mm
  const std::string descrip =
      "subject=" + vol.subject_id.substr(0, 60) + ";t=" + std::to_string(vol.time_index);
  std::memcpy(p + 148, descrip.data(), std::min<std::size_t>(descrip.size(), 79));
  std::memcpy(p + 344, "n+1", 4);
  append_floats(bytes, vol.data);
  write_file(path, bytes);
}

void save_raw(const Volume& vol, const std::filesystem::path& path) {
  vol.geometry.validate();
  std::vector<unsigned char> bytes(kRawHeaderSize, 0);
  auto* p = bytes.data();
  std::memcpy(p, kRawMagic, 4);
  put_le<std::uint32_t>(p + 4, kRawVersion);
  for (int a = 0; a < 3; ++a) {
    put_le<std::uint32_t>(p + 8 + 4 * a, static_cast<std::uint32_t>(vol.geometry.shape[a]));
  }
  put_le<std::uint32_t>(p + 20, static_cast<std::uint32_t>(kFloat32));
  put_le<double>(p + 24, vol.geometry.spacing);
  append_floats(bytes, vol.data);
  write_file(path, bytes);
}

void save_volume(const Volume& vol, const std::filesystem::path& path) {
  if (path.extension() == ".svrv") {
    save_raw(vol, path);
  } else {
    save_nifti(vol, path);
  }
}

}  // namespace sasvr
