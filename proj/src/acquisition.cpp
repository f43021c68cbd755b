#include "sasvr/acquisition.hpp"

#include <cmath>

#include "sasvr/error.hpp"
#include "sasvr/random.hpp"

namespace sasvr {

namespace {

enum SeedStream : std::uint64_t { kParams = 1, kShot = 2, kReference = 3 };

SamplePair make_pair(std::shared_ptr<const Volume> reference, const RigidParams& params, int shot,
                     const SliceProtocol& protocol) {
  const auto& geom = reference->geometry;
  if (geom.depth() < protocol.total_slices) {
    throw InvalidArgument("protocol slice count exceeds the reference depth");
  }
  SamplePair pair;
  pair.params = params;
  pair.shot = shot;
  pair.reference_id = reference->subject_id;
  const AffineTransform t_gt = compose_affine(params, geom);
  const Volume moving = resample(*reference, t_gt);
  pair.stack = extract_stack(moving,
                             slice_indices(protocol.total_slices, shot, protocol.slices_per_shot));
  pair.d_init = initial_distance(params, geom);
  pair.reference = std::move(reference);
  return pair;
}

}  // namespace

void ParamRanges::validate() const {
  for (double a : {alpha_x, alpha_y, alpha_z, t_x, t_y, t_z}) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw InvalidArgument("parameter ranges must be >= 0");
  }
}

void SliceProtocol::validate() const {
  if (slices_per_shot < 1 || total_slices < 1 || total_slices % slices_per_shot != 0) {
    throw InvalidArgument("slices per shot must divide the slice count");
  }
  if (shot >= shot_count()) throw InvalidArgument("shot index out of range");
}

RigidParams sample_rigid_params(std::uint64_t seed, const ParamRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  auto draw = [&](double a) { return a * (2.0 * rng.uniform() - 1.0) + 0.0; };
  RigidParams p;
  p.alpha_x = draw(ranges.alpha_x);
  p.alpha_y = draw(ranges.alpha_y);
  p.alpha_z = draw(ranges.alpha_z);
  p.t_x = draw(ranges.t_x);
  p.t_y = draw(ranges.t_y);
  p.t_z = draw(ranges.t_z);
  return p;
}

std::vector<int> slice_indices(int total_slices, int shot, int slices_per_shot) {
  if (slices_per_shot < 1 || total_slices < 1 || total_slices % slices_per_shot != 0) {
    throw InvalidArgument("slices per shot must divide the slice count");
  }
  const int gap = total_slices / slices_per_shot;
  if (shot < 0 || shot >= gap) {
    throw InvalidArgument("shot index " + std::to_string(shot) + " outside [0, " +
                          std::to_string(gap) + ")");
  }
  std::vector<int> idx(static_cast<std::size_t>(slices_per_shot));
  for (int k = 0; k < slices_per_shot; ++k) idx[static_cast<std::size_t>(k)] = shot + k * gap;
  return idx;
}

SliceStack extract_stack(const Volume& vol, const std::vector<int>& indices) {
  if (indices.empty()) throw InvalidArgument("empty slice index list");
  SliceStack s;
  s.slices = static_cast<int>(indices.size());
  s.height = vol.geometry.height();
  s.width = vol.geometry.width();
  s.indices = indices;
  s.geometry = vol.geometry;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  s.data.resize(plane * indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int d = indices[k];
    if (d < 0 || d >= vol.geometry.depth()) {
      throw InvalidArgument("slice index " + std::to_string(d) + " out of bounds");
    }
    const float* src = vol.data.data() + static_cast<std::size_t>(d) * plane;
    std::copy(src, src + plane, s.data.begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  return s;
}

double initial_distance(const RigidParams& params, const VolumeGeometry& geom) {
  return grid_distance(compose_affine(params, geom), AffineTransform::identity(), geom);
}

SamplePair synthesize_pair(std::shared_ptr<const Volume> reference, std::uint64_t seed,
                           const ParamRanges& ranges, const SliceProtocol& protocol) {
  if (!reference) throw InvalidArgument("missing reference volume");
  protocol.validate();
  const RigidParams params = sample_rigid_params(derive_seed(seed, kParams), ranges);
  int shot = protocol.shot;
  if (shot < 0) {
    Rng rng(derive_seed(seed, kShot));
    shot = static_cast<int>(rng.index(static_cast<std::uint64_t>(protocol.shot_count())));
  }
  SamplePair pair = make_pair(std::move(reference), params, shot, protocol);
  pair.seed = seed;
  return pair;
}

Dataset build_dataset(const SplitReferences& references, const SplitCounts& counts,
                      std::uint64_t seed, const ParamRanges& ranges,
                      const SliceProtocol& protocol) {
  struct Job {
    const char* name;
    const std::vector<std::shared_ptr<const Volume>>* refs;
    int count;
    std::vector<SamplePair>* out;
  };
  Dataset ds;
  const Job jobs[3] = {{"train", &references.train, counts.train, &ds.train},
                       {"val", &references.val, counts.val, &ds.val},
                       {"test", &references.test, counts.test, &ds.test}};
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Job& job = jobs[s];
    if (job.count < 0) throw InvalidArgument("pair counts must be >= 0");
    if (job.count > 0 && job.refs->empty()) {
      throw InvalidArgument(std::string("no reference volumes for split ") + job.name);
    }
    job.out->reserve(static_cast<std::size_t>(job.count));
    for (int p = 0; p < job.count; ++p) {
      const std::uint64_t pair_seed = derive_seed(seed, s, static_cast<std::uint64_t>(p));
      Rng pick(derive_seed(pair_seed, kReference));
      const auto& ref = (*job.refs)[pick.index(job.refs->size())];
      SamplePair pair = synthesize_pair(ref, pair_seed, ranges, protocol);
      pair.pair_id = std::string(job.name) + "-" + std::to_string(p);
      job.out->push_back(std::move(pair));
    }
  }
  return ds;
}

ManifestEntry manifest_entry(const SamplePair& pair, const std::string& split) {
  ManifestEntry e;
  e.pair_id = pair.pair_id;
  e.split = split;
  e.reference_id = pair.reference_id;
  e.seed = pair.seed;
  e.shot = pair.shot;
  e.params = pair.params;
  e.slice_indices = pair.stack.indices;
  e.d_init = pair.d_init;
  return e;
}

SamplePair regenerate_pair(const ManifestEntry& entry, std::shared_ptr<const Volume> reference,
                           const SliceProtocol& protocol) {
  if (!reference) throw InvalidArgument("missing reference volume");
  protocol.validate();
  SamplePair pair = make_pair(std::move(reference), entry.params, entry.shot, protocol);
  pair.pair_id = entry.pair_id;
  pair.seed = entry.seed;
  return pair;
}

}  // namespace sasvr
