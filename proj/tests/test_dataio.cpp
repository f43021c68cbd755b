#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "sasvr/dataio.hpp"
#include "sasvr/error.hpp"
#include "sasvr/random.hpp"

using namespace sasvr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sasvr_dataio_tests";
  fs::create_directories(dir);
  return dir / name;
}

template <typename T>
void put(std::vector<unsigned char>& b, std::size_t at, T v) {
  std::memcpy(b.data() + at, &v, sizeof(T));
}

// Minimal single-file NIfTI-1 writer, independent of the library's.
std::vector<unsigned char> nifti_bytes(int nx, int ny, int nz, std::int16_t datatype,
                                       std::int16_t bitpix, const void* data, std::size_t bytes,
                                       float sx = 2.4F, float sy = 2.4F, float sz = 2.4F,
                                       float slope = 0.0F, float inter = 0.0F) {
  std::vector<unsigned char> b(352 + bytes, 0);
  put<std::int32_t>(b, 0, 348);
  put<std::int16_t>(b, 40, 3);
  put<std::int16_t>(b, 42, static_cast<std::int16_t>(nx));
  put<std::int16_t>(b, 44, static_cast<std::int16_t>(ny));
  put<std::int16_t>(b, 46, static_cast<std::int16_t>(nz));
  put<std::int16_t>(b, 48, 1);
  put<std::int16_t>(b, 70, datatype);
  put<std::int16_t>(b, 72, bitpix);
  put<float>(b, 76, 1.0F);
  put<float>(b, 80, sx);
  put<float>(b, 84, sy);
  put<float>(b, 88, sz);
  put<float>(b, 108, 352.0F);
  put<float>(b, 112, slope);
  put<float>(b, 116, inter);
  b[123] = 2;  // mm
  std::memcpy(b.data() + 344, "n+1\0", 4);
  std::memcpy(b.data() + 352, data, bytes);
  return b;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Volume ramp(const std::array<int, 3>& shape) {
  VolumeGeometry g;
  g.shape = shape;
  Volume v(g);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i) * 0.25F - 3.0F;
  return v;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("NIfTI and raw round trips are lossless") {
  Volume v = ramp({4, 5, 6});
  v.subject_id = "sub-07";
  v.time_index = 3;
  for (const char* name : {"rt.nii", "rt.svrv"}) {
    const auto p = scratch(name);
    save_volume(v, p);
    const Volume back = load_volume(p);
    CHECK(back.geometry.shape == v.geometry.shape);
    CHECK(back.geometry.spacing == 2.4);
    CHECK(back.data == v.data);
  }
  const Volume nii = load_volume(scratch("rt.nii"));
  CHECK(nii.subject_id == "sub-07");
  CHECK(nii.time_index == 3);
}

TEST_CASE("foreign NIfTI files decode with axis order and scaling") {
  const std::int16_t vals[2 * 3 * 4] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11,
                                        12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23};
  const auto p = scratch("int16.nii");
  write_bytes(p, nifti_bytes(4, 3, 2, 4, 16, vals, sizeof(vals), 2.4F, 2.4F, 2.4F, 0.5F, 1.0F));
  const Volume v = load_volume(p);
  CHECK(v.geometry.shape == std::array<int, 3>{2, 3, 4});
  CHECK(v.at(0, 0, 1) == doctest::Approx(1.5));
  CHECK(v.at(0, 1, 0) == doctest::Approx(3.0));   // 4 * 0.5 + 1
  CHECK(v.at(1, 2, 3) == doctest::Approx(12.5));  // 23 * 0.5 + 1

  const std::uint8_t bytes[8] = {0, 10, 20, 30, 40, 50, 60, 255};
  const auto q = scratch("u8.nii");
  write_bytes(q, nifti_bytes(2, 2, 2, 2, 8, bytes, sizeof(bytes)));
  CHECK(load_volume(q).at(1, 1, 1) == 255.0F);
}

TEST_CASE("unreadable inputs raise typed errors") {
  CHECK_THROWS_AS(load_volume(scratch("does-not-exist.nii")), IoError);
  try {
    load_volume(scratch("does-not-exist.nii"));
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::MissingFile);
  }

  const float data[8] = {};
  auto b = nifti_bytes(2, 2, 2, 16, 32, data, sizeof(data));
  b.resize(b.size() - 5);
  write_bytes(scratch("trunc.nii"), b);
  try {
    load_volume(scratch("trunc.nii"));
    FAIL("truncated file accepted");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::MalformedHeader);
  }

  auto big = nifti_bytes(2, 2, 2, 16, 32, data, sizeof(data));
  std::reverse(big.begin(), big.begin() + 4);
  write_bytes(scratch("big.nii"), big);
  try {
    load_volume(scratch("big.nii"));
    FAIL("big-endian file accepted");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::UnsupportedDatatype);
  }

  const std::int16_t rgb[8] = {};
  write_bytes(scratch("rgb.nii"), nifti_bytes(2, 2, 1, 128, 24, rgb, 12));
  try {
    load_volume(scratch("rgb.nii"));
    FAIL("RGB datatype accepted");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::UnsupportedDatatype);
  }
}

TEST_CASE("anisotropic spacing is rejected unless allowed") {
  const float data[8] = {};
  write_bytes(scratch("aniso.nii"), nifti_bytes(2, 2, 2, 16, 32, data, sizeof(data), 2.4F, 2.4F, 3.0F));
  CHECK_THROWS_AS(load_volume(scratch("aniso.nii")), InvalidArgument);
  CHECK(load_volume(scratch("aniso.nii"), {true}).geometry.spacing == 2.4);
}

TEST_CASE("preprocess normalizes then centres with the odd voxel trailing") {
  Volume v = ramp({2, 3, 3});
  const Volume out = preprocess(v, {5, 4, 3});
  CHECK(out.geometry.shape == std::array<int, 3>{5, 4, 3});
  // depth 2 -> 5: one leading plane, two trailing; rows 3 -> 4: none leading, one trailing
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 3; ++i) {
      CHECK(out.at(0, j, i) == 0.0F);
      CHECK(out.at(3, j, i) == 0.0F);
      CHECK(out.at(4, j, i) == 0.0F);
    }
  CHECK(out.at(1, 0, 0) == 0.0F);
  CHECK(out.at(2, 2, 2) == 1.0F);
  CHECK(out.at(1, 1, 1) == doctest::Approx(4.0 / 17.0));
  for (int i = 0; i < 3; ++i) CHECK(out.at(2, 3, i) == 0.0F);

  Volume flat(VolumeGeometry{{2, 2, 2}, 2.4, Vec3::Zero()}, 5.0F);
  for (float x : preprocess(flat, {2, 2, 2}).data) CHECK(x == 0.0F);
  CHECK_THROWS_AS(preprocess(v, {1, 3, 3}), InvalidArgument);
}

TEST_CASE("subject split honours ratios with largest-remainder rounding") {
  std::vector<std::string> ids;
  for (int i = 0; i < 138; ++i) ids.push_back("s" + std::to_string(i));
  const auto m = split_subjects(ids, {}, 5);
  CHECK(m.train.size() == 88);
  CHECK(m.test.size() == 28);
  CHECK(m.val.size() == 22);
  std::set<std::string> seen(m.train.begin(), m.train.end());
  seen.insert(m.test.begin(), m.test.end());
  seen.insert(m.val.begin(), m.val.end());
  CHECK(seen.size() == 138);

  const auto again = split_subjects(ids, {}, 5);
  CHECK(again.train == m.train);
  CHECK(split_subjects(ids, {}, 6).train != m.train);
}

TEST_CASE("subject split validation") {
  CHECK_THROWS_AS(split_subjects({"a", "b"}, {0.5, 0.3, 0.3}, 1), InvalidArgument);
  CHECK_THROWS_AS(split_subjects({"a", "a", "b"}, {}, 1), InvalidArgument);
  CHECK_THROWS_AS(split_subjects({}, {}, 1), InvalidArgument);
  const auto tiny = split_subjects({"a", "b"}, {}, 1);
  CHECK_FALSE(tiny.warnings.empty());
}

TEST_CASE("phantoms are normalized, seeded and have an empty background") {
  const Volume a = make_phantom({24, 32, 32}, 3);
  const Volume b = make_phantom({24, 32, 32}, 3);
  const Volume c = make_phantom({24, 32, 32}, 4);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  CHECK(*std::max_element(a.data.begin(), a.data.end()) == 1.0F);
  CHECK(*std::min_element(a.data.begin(), a.data.end()) >= 0.0F);
  CHECK(a.at(0, 0, 0) == 0.0F);
  CHECK(a.at(23, 31, 31) == 0.0F);
  CHECK(a.at(12, 16, 16) > 0.0F);
  CHECK_THROWS_AS(make_phantom({4, 32, 32}, 1), InvalidArgument);
}

TEST_CASE("phantom series drift slowly around the base frame") {
  const auto s = make_phantom_series({16, 16, 16}, 9, 6);
  REQUIRE(s.size() == 6);
  const Volume base = make_phantom({16, 16, 16}, 9);
  for (const auto& f : s) {
    // multiplicative gain within [0.91, 0.99]
    int outside = 0;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      const double b = base.data[i];
      const double x = f.data[i];
      if (x < 0.91 * b - 1e-6 || x > 0.99 * b + 1e-6 || x < 0.0 || x > 1.0) ++outside;
    }
    CHECK(outside == 0);
  }
  CHECK(s[0].time_index == 0);
  CHECK(s[5].time_index == 5);
}

}  // TEST_SUITE
