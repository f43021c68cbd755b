#include "sasvr/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sasvr/error.hpp"
#include "sasvr/random.hpp"

namespace sasvr {

Volume preprocess(const Volume& vol, const std::array<int, 3>& target_shape) {
  vol.geometry.validate();
  for (int a = 0; a < 3; ++a) {
    if (vol.geometry.shape[a] > target_shape[a]) {
      throw InvalidArgument("volume is larger than the target shape");
    }
  }
  Volume normalized = vol;
  if (!vol.data.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(vol.data.begin(), vol.data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw NumericError("volume has non-finite values");
    if (hi > lo) {
      const double range = hi - lo;
      for (float& v : normalized.data) v = static_cast<float>((v - lo) / range);
    } else {
      std::fill(normalized.data.begin(), normalized.data.end(), 0.0F);
    }
  }
  if (vol.geometry.shape == target_shape) return normalized;

  VolumeGeometry geom = vol.geometry;
  geom.shape = target_shape;
  Volume out(geom);
  out.subject_id = vol.subject_id;
  out.time_index = vol.time_index;
  std::array<int, 3> lead{};
  for (int a = 0; a < 3; ++a) lead[a] = (target_shape[a] - vol.geometry.shape[a]) / 2;
  const auto& s = vol.geometry.shape;
  for (int k = 0; k < s[0]; ++k) {
    for (int j = 0; j < s[1]; ++j) {
      const float* src = &normalized.data[normalized.index(k, j, 0)];
      std::copy(src, src + s[2], &out.data[out.index(k + lead[0], j + lead[1], lead[2])]);
    }
  }
  return out;
}

SplitManifest split_subjects(std::vector<std::string> ids, const SplitRatios& ratios,
                             std::uint64_t seed) {
  if (ids.empty()) throw InvalidArgument("no subject ids to split");
  const double r[3] = {ratios.train, ratios.test, ratios.val};
  for (double x : r) {
    if (!(x >= 0.0)) throw InvalidArgument("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must sum to 1");
  }
  {
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InvalidArgument("duplicate subject ids");
    }
  }

  Rng rng(seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    std::swap(ids[i], ids[rng.index(i + 1)]);
  }

  const auto n = static_cast<double>(ids.size());
  std::size_t counts[3];
  double frac[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = n * r[s];
    counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[s] = exact - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t left = ids.size() - assigned, o = 0; left > 0; --left, ++o) {
    ++counts[order[o % 3]];
  }

  SplitManifest m;
  m.ratios = ratios;
  m.seed = seed;
  auto it = ids.begin();
  m.train.assign(it, it + static_cast<std::ptrdiff_t>(counts[0]));
  it += static_cast<std::ptrdiff_t>(counts[0]);
  m.test.assign(it, it + static_cast<std::ptrdiff_t>(counts[1]));
  it += static_cast<std::ptrdiff_t>(counts[1]);
  m.val.assign(it, ids.end());
  if (m.train.empty() || m.test.empty() || m.val.empty()) {
    m.warnings.push_back("split has an empty partition (" + std::to_string(ids.size()) +
                         " subjects)");
  }
  return m;
}

namespace {

struct Blob {
  Vec3 center;  // normalized coordinates in [-1, 1]
  Vec3 radii;
  double intensity;
  double exponent;
};

// 1 inside, 0 outside, C1-smooth ramp around the surface. `width` is in
// normalized coordinates, so small blobs get edges as soft as large ones.
double soft_inside(const Vec3& u, const Blob& b, double width) {
  const Vec3 d = (u - b.center).cwiseQuotient(b.radii).cwiseAbs();
  const double r = std::pow(std::pow(d.x(), b.exponent) + std::pow(d.y(), b.exponent) +
                                std::pow(d.z(), b.exponent),
                            1.0 / b.exponent);
  width /= b.radii.minCoeff();
  const double t = std::clamp((1.0 + width * 0.5 - r) / width, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct PhantomLayout {
  Blob head;
  std::vector<Blob> structures;
  std::array<Vec3, 3> wave_dirs;
  std::array<double, 3> wave_phase;
};

PhantomLayout phantom_layout(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9A17));
  auto jitter = [&](double v, double amount) { return v + rng.uniform(-amount, amount); };
  auto jvec = [&](Vec3 v, double amount) {
    return Vec3(jitter(v.x(), amount), jitter(v.y(), amount), jitter(v.z(), amount));
  };
  PhantomLayout l;
  l.head = {jvec(Vec3(0.03, -0.04, 0.02), 0.03), jvec(Vec3(0.80, 0.86, 0.80), 0.03), 0.55, 3.0};
  // Offsets chosen so no 90 degree rotation or flip maps the layout onto itself.
  l.structures = {
      {jvec(Vec3(-0.22, -0.10, 0.10), 0.05), jvec(Vec3(0.16, 0.34, 0.22), 0.03),
       jitter(-0.40, 0.05), 2.0},
      {jvec(Vec3(0.18, -0.05, 0.05), 0.05), jvec(Vec3(0.10, 0.22, 0.16), 0.02),
       jitter(-0.35, 0.05), 2.0},
      {jvec(Vec3(0.36, 0.40, -0.30), 0.05), jvec(Vec3(0.22, 0.18, 0.22), 0.03),
       jitter(0.45, 0.05), 2.0},
      {jvec(Vec3(-0.35, 0.45, 0.35), 0.05), jvec(Vec3(0.18, 0.14, 0.20), 0.03),
       jitter(0.30, 0.05), 2.0},
      {jvec(Vec3(0.05, -0.55, -0.30), 0.05), jvec(Vec3(0.40, 0.12, 0.18), 0.03),
       jitter(0.25, 0.05), 2.0},
  };
  for (int w = 0; w < 3; ++w) {
    l.wave_dirs[w] = Vec3(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    l.wave_phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return l;
}

double phantom_value(const PhantomLayout& l, const Vec3& u, double edge) {
  const double inside = soft_inside(u, l.head, edge);
  if (inside <= 0.0) return 0.0;
  double v = l.head.intensity;
  // Bright rim just inside the envelope.
  Blob inner = l.head;
  inner.radii *= 0.82;
  v += 0.30 * (1.0 - soft_inside(u, inner, edge * 1.5));
  for (const Blob& b : l.structures) v += b.intensity * soft_inside(u, b, edge * 1.5);
  double texture = 0.0;
  for (int w = 0; w < 3; ++w) texture += std::cos(l.wave_dirs[w].dot(u) * 3.0 + l.wave_phase[w]);
  v += 0.03 * texture;
  return inside * std::max(v, 0.05);
}

Vec3 normalized_coord(const std::array<int, 3>& shape, int k, int j, int i) {
  auto norm = [](int idx, int n) { return n > 1 ? (2.0 * idx / (n - 1) - 1.0) : 0.0; };
  return Vec3(norm(i, shape[2]), norm(j, shape[1]), norm(k, shape[0]));
}

Volume render_phantom(const std::array<int, 3>& shape, const PhantomLayout& layout,
                      double spacing) {
  VolumeGeometry geom;
  geom.shape = shape;
  geom.spacing = spacing;
  geom.validate();
  // Edge ramp about three voxels wide along the shortest axis.
  const int min_dim = std::min({shape[0], shape[1], shape[2]});
  const double edge = 6.0 / std::max(min_dim - 1, 1);
  Volume vol(geom);
  for (int k = 0; k < shape[0]; ++k) {
    for (int j = 0; j < shape[1]; ++j) {
      for (int i = 0; i < shape[2]; ++i) {
        vol.at(k, j, i) =
            static_cast<float>(phantom_value(layout, normalized_coord(shape, k, j, i), edge));
      }
    }
  }
  return vol;
}

}  // namespace

Volume make_phantom(const std::array<int, 3>& shape, std::uint64_t seed, double spacing) {
  for (int d : shape) {
    if (d < 8) throw InvalidArgument("phantom dimensions must be >= 8");
  }
  Volume vol = render_phantom(shape, phantom_layout(seed), spacing);
  const float hi = *std::max_element(vol.data.begin(), vol.data.end());
  for (float& v : vol.data) v /= hi;
  vol.subject_id = "phantom-" + std::to_string(seed);
  return vol;
}

std::vector<Volume> make_phantom_series(const std::array<int, 3>& shape, std::uint64_t seed,
                                        int frames, double spacing) {
  if (frames < 1) throw InvalidArgument("series needs at least one frame");
  const Volume base = make_phantom(shape, seed, spacing);
  Rng rng(derive_seed(seed, 0xB01D));
  const Vec3 dir(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<Volume> series;
  series.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    Volume v = base;
    v.time_index = t;
    const double amp = 0.04 * std::sin(2.0 * std::numbers::pi * t / std::max(frames, 8) + phase);
    for (int k = 0; k < shape[0]; ++k) {
      for (int j = 0; j < shape[1]; ++j) {
        for (int i = 0; i < shape[2]; ++i) {
          const double field = 0.5 * (1.0 + std::sin(dir.dot(normalized_coord(shape, k, j, i))));
          float& x = v.at(k, j, i);
          x = static_cast<float>(std::clamp(x * (0.95 + amp * field), 0.0, 1.0));
        }
      }
    }
    series.push_back(std::move(v));
  }
  return series;
}

}  // namespace sasvr
