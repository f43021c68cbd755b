#include "sasvr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "sasvr/error.hpp"
#include "sasvr/random.hpp"
#include "sasvr/svg_plot.hpp"
#include "sasvr/training.hpp"

namespace sasvr {

std::vector<RigidParams> NetworkPredictor::predict(const std::vector<const SamplePair*>& pairs) {
  std::vector<RigidParams> out;
  out.reserve(pairs.size());
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size_));
  for (std::size_t start = 0; start < pairs.size(); start += bs) {
    const std::vector<const SamplePair*> chunk(
        pairs.begin() + static_cast<std::ptrdiff_t>(start),
        pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + bs)));
    const auto pred = model_.forward(batch_stacks(chunk), batch_volumes(chunk), nn::Mode::Eval);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::array<double, 6> v{};
      for (std::size_t i = 0; i < 6; ++i) v[i] = pred.params[b * 6 + i];
      out.push_back(RigidParams::from_array(v));
    }
  }
  return out;
}

std::vector<RigidParams> OraclePredictor::predict(const std::vector<const SamplePair*>& pairs) {
  std::vector<RigidParams> out;
  for (const auto* p : pairs) out.push_back(p->params);
  return out;
}

std::vector<RigidParams> IdentityPredictor::predict(const std::vector<const SamplePair*>& pairs) {
  return std::vector<RigidParams>(pairs.size());
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

void EvalReport::aggregate() {
  auto column = [&](double PairMetrics::*field) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.*field);
    return mean_std(v);
  };
  d_init = column(&PairMetrics::d_init);
  d_reg = column(&PairMetrics::d_reg);
  e_rot = column(&PairMetrics::e_rot);
  e_tr = column(&PairMetrics::e_tr);
  mse_rot = column(&PairMetrics::mse_rot);
  mse_tr = column(&PairMetrics::mse_tr);
}

void EvalReport::write_pairs_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "pair_id,alpha_x,alpha_y,alpha_z,t_x,t_y,t_z,D_init_mm,D_reg_mm,E_rot_deg,E_tr_mm,"
       "MSE_rot_deg2,MSE_tr_mm2\n";
  for (const auto& r : rows) {
    const auto p = r.predicted.to_array();
    f << fmt::format(
        "{},{:.8g},{:.8g},{:.8g},{:.8g},{:.8g},{:.8g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},"
        "{:.10g}\n",
        r.pair_id, p[0], p[1], p[2], p[3], p[4], p[5], r.d_init, r.d_reg, r.e_rot, r.e_tr,
        r.mse_rot, r.mse_tr);
  }
}

void EvalReport::write_summary_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "model,dataset,pairs,D_init_mean,D_init_std,D_reg_mean,D_reg_std,E_rot_mean,E_rot_std,"
       "E_tr_mean,E_tr_std,MSE_rot_mean,MSE_rot_std,MSE_tr_mean,MSE_tr_std\n";
  f << fmt::format("{},{},{}", model_id, dataset_id, rows.size());
  for (const MeanStd* m : {&d_init, &d_reg, &e_rot, &e_tr, &mse_rot, &mse_tr}) {
    f << fmt::format(",{:.10g},{:.10g}", m->mean, m->std);
  }
  f << '\n';
}

PairMetrics pair_metrics(const RigidParams& predicted, const SamplePair& pair,
                         const Grid3D& grid) {
  PairMetrics m;
  m.pair_id = pair.pair_id;
  m.predicted = predicted;
  m.d_init = pair.d_init;
  // l_sim of the loss is D_reg by construction
  const auto l = loss(predicted, pair.params, grid, 0.0, 0.0);
  m.d_reg = l.l_sim;
  m.mse_rot = l.l_ang;
  m.mse_tr = l.l_tr;
  m.e_rot = std::sqrt(m.mse_rot);
  m.e_tr = std::sqrt(m.mse_tr);
  return m;
}

EvalReport evaluate(Predictor& predictor, const std::vector<SamplePair>& pairs,
                    const std::string& model_id, const std::string& dataset_id) {
  EvalReport report;
  report.model_id = model_id;
  report.dataset_id = dataset_id;
  if (pairs.empty()) return report;
  const Grid3D grid = make_grid(pairs.front().reference->geometry);
  std::vector<const SamplePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const auto preds = predictor.predict(ptrs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!(pairs[i].reference->geometry == grid.geometry)) {
      throw InvalidArgument("evaluation pairs must share one geometry");
    }
    report.rows.push_back(pair_metrics(preds[i], pairs[i], grid));
  }
  report.aggregate();
  return report;
}

RuntimeStats benchmark_runtime(Predictor& predictor, const std::vector<SamplePair>& pairs,
                               int repetitions) {
  if (repetitions < 2) throw InvalidArgument("benchmark needs at least 2 repetitions");
  if (pairs.empty()) throw InvalidArgument("benchmark needs at least one pair");
  RuntimeStats stats;
  stats.repetitions = repetitions;
  stats.pairs = pairs.size();
  for (int r = 0; r < repetitions; ++r) {
    for (const auto& pair : pairs) {
      const auto t0 = std::chrono::steady_clock::now();
      predictor.predict_one(pair);
      const double s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (r > 0) stats.samples.push_back(s);
    }
  }
  std::vector<double> sorted = stats.samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  stats.median_seconds = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  stats.mean_seconds = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  stats.min_seconds = sorted.front();
  stats.max_seconds = sorted.back();
  return stats;
}

double TimeSeriesStudy::variance_reduced_fraction() const {
  if (voxels.empty()) return 0.0;
  int reduced = 0;
  for (const auto& v : voxels) {
    if (mean_std(v.after).std < mean_std(v.before).std) ++reduced;
  }
  return static_cast<double>(reduced) / static_cast<double>(voxels.size());
}

double TimeSeriesStudy::max_interior_error() const {
  double worst = 0.0;
  for (const auto& v : voxels) {
    if (!v.interior) continue;
    for (std::size_t t = 0; t < v.after.size(); ++t) {
      worst = std::max(worst, std::abs(v.after[t] - v.motion_free[t]));
    }
  }
  return worst;
}

void TimeSeriesStudy::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "roi,i,j,k,interior,t,motion_free,before,after\n";
  for (const auto& v : voxels) {
    for (std::size_t t = 0; t < v.motion_free.size(); ++t) {
      f << fmt::format("{},{},{},{},{},{},{:.8g},{:.8g},{:.8g}\n", v.roi, v.ijk[0], v.ijk[1],
                       v.ijk[2], v.interior ? 1 : 0, t, v.motion_free[t], v.before[t],
                       v.after[t]);
    }
  }
}

void TimeSeriesStudy::write_summary_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "roi,lo_i,lo_j,lo_k,hi_i,hi_j,hi_k,voxels,var_motion_free,var_before,var_after,"
       "reduced_fraction\n";
  for (std::size_t r = 0; r < rois.size(); ++r) {
    double vf = 0, vb = 0, va = 0;
    int n = 0, reduced = 0;
    for (const auto& v : voxels) {
      if (v.roi != static_cast<int>(r)) continue;
      const auto sf = mean_std(v.motion_free).std, sb = mean_std(v.before).std,
                 sa = mean_std(v.after).std;
      vf += sf * sf;
      vb += sb * sb;
      va += sa * sa;
      reduced += sa < sb ? 1 : 0;
      ++n;
    }
    const double d = n > 0 ? n : 1;
    const auto& b = rois[r];
    f << fmt::format("{},{},{},{},{},{},{},{},{:.8g},{:.8g},{:.8g},{:.6g}\n", r, b.lo[0], b.lo[1],
                     b.lo[2], b.hi[0], b.hi[1], b.hi[2], n, vf / d, vb / d, va / d, reduced / d);
  }
  f << fmt::format("all,,,,,,,{},,,,{:.6g}\n", voxels.size(), variance_reduced_fraction());
}

void TimeSeriesStudy::write_plots(const std::filesystem::path& directory,
                                  int voxels_per_roi) const {
  std::filesystem::create_directories(directory);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    std::vector<const VoxelSeries*> members;
    for (const auto& v : voxels) {
      if (v.roi == static_cast<int>(r)) members.push_back(&v);
    }
    // evenly spaced picks through the box
    const int take = std::min<int>(voxels_per_roi, static_cast<int>(members.size()));
    for (int k = 0; k < take; ++k) {
      const auto& v = *members[static_cast<std::size_t>(k) * members.size() /
                               static_cast<std::size_t>(take)];
      write_line_plot(
          directory / fmt::format("roi{}_voxel_{}_{}_{}.svg", r, v.ijk[0], v.ijk[1], v.ijk[2]),
          fmt::format("ROI {} voxel ({}, {}, {})", r, v.ijk[0], v.ijk[1], v.ijk[2]), "time point",
          "normalized intensity",
          {{"motion-free", "#2b8a3e", v.motion_free, false},
           {"BR", "#c92a2a", v.before, true},
           {"AR", "#1864ab", v.after, false}});
    }
  }
}

std::vector<RoiBox> select_rois(const Volume& frame, int edge, int count) {
  const auto& g = frame.geometry;
  const int d = g.depth(), h = g.height(), w = g.width();
  if (edge < 1 || count < 1) throw InvalidArgument("ROI edge and count must be >= 1");
  const int mk = std::max(edge, d / 4), mj = std::max(edge, h / 4), mi = std::max(edge, w / 4);
  if (d - 2 * mk < 1 || h - 2 * mj < 1 || w - 2 * mi < 1) {
    throw InvalidArgument("volume too small for ROI selection");
  }
  struct Cand {
    double mag;
    int k, j, i;
  };
  std::vector<Cand> cands;
  for (int k = mk; k < d - mk; ++k) {
    for (int j = mj; j < h - mj; ++j) {
      for (int i = mi; i < w - mi; ++i) {
        const double gx = frame.at(k, j, i + 1) - frame.at(k, j, i - 1);
        const double gy = frame.at(k, j + 1, i) - frame.at(k, j - 1, i);
        const double gz = frame.at(k + 1, j, i) - frame.at(k - 1, j, i);
        cands.push_back({std::sqrt(gx * gx + gy * gy + gz * gz), k, j, i});
      }
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.mag > b.mag; });
  std::vector<RoiBox> boxes;
  std::vector<Cand> centres;
  for (const auto& c : cands) {
    if (static_cast<int>(boxes.size()) == count) break;
    bool far = true;
    for (const auto& o : centres) {
      const int cheb = std::max({std::abs(c.i - o.i), std::abs(c.j - o.j), std::abs(c.k - o.k)});
      if (cheb < 2 * edge) far = false;
    }
    if (!far) continue;
    centres.push_back(c);
    RoiBox b;
    b.lo = {c.i - edge / 2, c.j - edge / 2, c.k - edge / 2};
    b.hi = {b.lo[0] + edge, b.lo[1] + edge, b.lo[2] + edge};
    boxes.push_back(b);
  }
  return boxes;
}

TimeSeriesStudy motion_study(const std::vector<Volume>& series, Predictor& predictor,
                             const std::vector<RoiBox>& rois, std::uint64_t seed,
                             const ParamRanges& ranges, const SliceProtocol& protocol,
                             Interpolation interpolation) {
  if (series.empty()) throw InvalidArgument("empty time series");
  ranges.validate();
  protocol.validate();
  const auto& g = series.front().geometry;
  for (const auto& v : series) {
    if (!(v.geometry == g)) throw InvalidArgument("time series frames differ in geometry");
  }
  for (const auto& b : rois) {
    for (int a = 0; a < 3; ++a) {
      const int n = g.shape[static_cast<std::size_t>(2 - a)];
      if (b.lo[a] < 0 || b.hi[a] > n || b.lo[a] >= b.hi[a]) {
        throw InvalidArgument("ROI box outside the volume");
      }
    }
  }
  auto reference = std::make_shared<const Volume>(series.front());

  TimeSeriesStudy study;
  study.rois = rois;
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto& b = rois[r];
    for (int k = b.lo[2]; k < b.hi[2]; ++k) {
      for (int j = b.lo[1]; j < b.hi[1]; ++j) {
        for (int i = b.lo[0]; i < b.hi[0]; ++i) {
          VoxelSeries v;
          v.roi = static_cast<int>(r);
          v.ijk = {i, j, k};
          v.interior = true;
          study.voxels.push_back(v);
        }
      }
    }
  }

  for (std::size_t t = 0; t < series.size(); ++t) {
    const std::uint64_t ts = derive_seed(seed, t);
    SamplePair pair;
    pair.pair_id = fmt::format("t{}", t);
    pair.reference_id = reference->subject_id;
    pair.seed = ts;
    pair.params = sample_rigid_params(derive_seed(ts, 1), ranges);
    pair.shot = protocol.shot >= 0
                    ? protocol.shot
                    : static_cast<int>(Rng(derive_seed(ts, 2)).index(
                          static_cast<std::uint64_t>(protocol.shot_count())));
    const AffineTransform motion = compose_affine(pair.params, g);
    const Volume corrupted = resample(series[t], motion, interpolation);
    pair.stack = extract_stack(
        corrupted, slice_indices(protocol.total_slices, pair.shot, protocol.slices_per_shot));
    pair.reference = reference;
    pair.d_init = initial_distance(pair.params, g);

    const RigidParams predicted = predictor.predict_one(pair);
    if (!predicted.is_finite()) throw NumericError("non-finite prediction at time point " + std::to_string(t));
    const Volume corrected = resample(corrupted, invert(compose_affine(predicted, g)), interpolation);
    study.motion.push_back(pair.params);
    study.predicted.push_back(predicted);

    for (auto& v : study.voxels) {
      const auto [i, j, k] = v.ijk;
      v.motion_free.push_back(series[t].at(k, j, i));
      v.before.push_back(corrupted.at(k, j, i));
      v.after.push_back(corrected.at(k, j, i));
      // the voxel's content must stay clear of the field-of-view border
      const Vec3 q = g.physical_to_index(motion.apply(g.index_to_physical(Vec3(i, j, k))));
      for (int a = 0; a < 3; ++a) {
        const int n = g.shape[static_cast<std::size_t>(2 - a)];
        if (q[a] < 2.0 || q[a] > n - 3.0) v.interior = false;
      }
    }
  }
  return study;
}

std::vector<int> select_reference_frames(const std::vector<AffineTransform>& transforms,
                                         int count) {
  if (count < 0 || count > static_cast<int>(transforms.size())) {
    throw InvalidArgument(fmt::format("cannot select {} frames from {}", count, transforms.size()));
  }
  std::vector<std::pair<double, int>> keyed;
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    keyed.emplace_back((transforms[i].matrix() - Mat4::Identity()).norm(), static_cast<int>(i));
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(keyed[static_cast<std::size_t>(i)].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sasvr
