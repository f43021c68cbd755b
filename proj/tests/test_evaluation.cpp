#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "sasvr/error.hpp"
#include "sasvr/evaluation.hpp"
#include "sasvr/svg_plot.hpp"
#include "sasvr/training.hpp"

using namespace sasvr;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("sasvr_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Predicts the ground truth plus a fixed per-pair offset.
class OffsetPredictor : public Predictor {
 public:
  std::string name() const override { return "offset"; }
  std::vector<RigidParams> predict(const std::vector<const SamplePair*>& pairs) override {
    std::vector<RigidParams> out;
    for (const auto* p : pairs) {
      RigidParams r = p->params;
      const double s = static_cast<double>(p->pair_id.size() % 3 + 1);
      r.alpha_x += 0.5 * s;
      r.t_y -= 1.5 * s;
      out.push_back(r);
    }
    return out;
  }
};

double population_std(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("oracle predictor scores zero everywhere") {
  const auto pairs = fixture::tiny_pairs(6, 1);
  OraclePredictor oracle;
  const auto report = evaluate(oracle, pairs, "oracle", "tiny");
  REQUIRE(report.rows.size() == 6);
  for (const auto& r : report.rows) {
    CHECK(r.d_reg == 0.0);
    CHECK(r.e_rot == 0.0);
    CHECK(r.e_tr == 0.0);
    CHECK(r.mse_rot == 0.0);
    CHECK(r.mse_tr == 0.0);
  }
  CHECK(report.d_reg.mean == 0.0);
}

TEST_CASE("identity predictor reproduces the stored initial distances") {
  const auto pairs = fixture::tiny_pairs(6, 2);
  IdentityPredictor id;
  const auto report = evaluate(id, pairs, "identity", "tiny");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(report.rows[i].d_reg == report.rows[i].d_init);
    CHECK(report.rows[i].d_init == pairs[i].d_init);
    CHECK(report.rows[i].predicted == RigidParams{});
  }
}

TEST_CASE("D_reg equals the training similarity term") {
  const auto pairs = fixture::tiny_pairs(4, 3);
  const Grid3D grid = make_grid(pairs[0].reference->geometry);
  OffsetPredictor off;
  for (const auto& p : pairs) {
    const RigidParams pred = off.predict_one(p);
    CHECK(pair_metrics(pred, p, grid).d_reg == loss(pred, p.params, grid, 10, 100).l_sim);
  }
}

TEST_CASE("rotation and translation errors") {
  const auto pairs = fixture::tiny_pairs(1, 4);
  const Grid3D grid = make_grid(pairs[0].reference->geometry);
  RigidParams pred = pairs[0].params;
  pred.alpha_x += 1.0;
  pred.alpha_y -= 2.0;
  pred.alpha_z += 2.0;
  pred.t_z += 3.0;
  const auto m = pair_metrics(pred, pairs[0], grid);
  CHECK(m.mse_rot == doctest::Approx(3.0));
  CHECK(m.e_rot == doctest::Approx(std::sqrt(3.0)));
  CHECK(m.mse_tr == doctest::Approx(3.0));
  CHECK(m.e_tr == doctest::Approx(std::sqrt(3.0)));
  CHECK(m.d_reg > 0.0);
}

TEST_CASE("aggregates are recomputable and order independent") {
  auto pairs = fixture::tiny_pairs(9, 5);
  OffsetPredictor off;
  const auto report = evaluate(off, pairs, "offset", "tiny");
  std::vector<double> d, r, t;
  for (const auto& row : report.rows) {
    d.push_back(row.d_reg);
    r.push_back(row.e_rot);
    t.push_back(row.e_tr);
  }
  CHECK(std::abs(report.d_reg.mean - std::accumulate(d.begin(), d.end(), 0.0) / 9.0) <= 1e-9);
  CHECK(std::abs(report.d_reg.std - population_std(d)) <= 1e-9);
  CHECK(std::abs(report.e_rot.std - population_std(r)) <= 1e-9);
  CHECK(std::abs(report.e_tr.std - population_std(t)) <= 1e-9);

  std::reverse(pairs.begin(), pairs.end());
  std::rotate(pairs.begin(), pairs.begin() + 4, pairs.end());
  const auto shuffled = evaluate(off, pairs, "offset", "tiny");
  for (auto [a, b] : {std::pair{report.d_reg, shuffled.d_reg}, std::pair{report.e_rot, shuffled.e_rot},
                      std::pair{report.e_tr, shuffled.e_tr}, std::pair{report.d_init, shuffled.d_init}}) {
    CHECK(std::abs(a.mean - b.mean) <= 1e-9);
    CHECK(std::abs(a.std - b.std) <= 1e-9);
  }

  const auto ms = mean_std({1, 2, 3, 4});
  CHECK(ms.mean == 2.5);
  CHECK(ms.std == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("report CSVs are deterministic") {
  const fs::path dir = temp_dir("report");
  const auto pairs = fixture::tiny_pairs(3, 6);
  OffsetPredictor off;
  for (const char* tag : {"a", "b"}) {
    const auto report = evaluate(off, pairs, "offset", "tiny");
    report.write_pairs_csv(dir / (std::string(tag) + "_pairs.csv"));
    report.write_summary_csv(dir / (std::string(tag) + "_summary.csv"));
  }
  CHECK(read_file(dir / "a_pairs.csv") == read_file(dir / "b_pairs.csv"));
  CHECK(read_file(dir / "a_summary.csv") == read_file(dir / "b_summary.csv"));
  const std::string summary = read_file(dir / "a_summary.csv");
  CHECK(summary.rfind("model,dataset,pairs,D_init_mean", 0) == 0);
  CHECK(summary.find("\noffset,tiny,3,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("network predictor agrees with a direct forward pass") {
  const auto pairs = fixture::tiny_pairs(5, 7);
  SaSvrNet<float> net(fixture::tiny_model(), 3);
  Rng rng(1);
  for (auto& v : net.regressor().head().weight().value.values()) v = static_cast<float>(0.05 * rng.normal());
  NetworkPredictor pred(net, "net", 2);
  const auto batched = pred.predict(fixture::pointers(pairs));
  REQUIRE(batched.size() == 5);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::vector<const SamplePair*> one{&pairs[i]};
    const auto out = net.forward(batch_stacks(one), batch_volumes(one), nn::Mode::Eval);
    CHECK(batched[i].alpha_x == doctest::Approx(out.params[0]).epsilon(1e-6));
    CHECK(batched[i].t_z == doctest::Approx(out.params[5]).epsilon(1e-6));
  }
}

TEST_CASE("runtime benchmark") {
  const auto pairs = fixture::tiny_pairs(2, 8);
  IdentityPredictor id;
  CHECK_THROWS_AS(benchmark_runtime(id, pairs, 1), InvalidArgument);
  const auto stats = benchmark_runtime(id, pairs, 3);
  CHECK(stats.samples.size() == 4);
  CHECK(stats.min_seconds <= stats.median_seconds);
  CHECK(stats.median_seconds <= stats.max_seconds);
  CHECK(stats.mean_seconds >= 0.0);
}

TEST_CASE("parameter count of the model") {
  SaSvrNet<float> net(fixture::tiny_model(), 1);
  std::size_t n = 0;
  for (auto& [name, p] : net.parameters().params) n += p->value.size();
  CHECK(count_parameters(net) == n);
}

TEST_CASE("reference frame selection") {
  std::vector<AffineTransform> identities(5);
  CHECK(select_reference_frames(identities, 3) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(select_reference_frames(identities, 6), InvalidArgument);

  auto one_bad = identities;
  one_bad[1] = compose_affine({3, 0, 0, 0, 0, 0}, VolumeGeometry{});
  for (int c = 1; c < 5; ++c) {
    const auto sel = select_reference_frames(one_bad, c);
    CHECK(std::find(sel.begin(), sel.end(), 1) == sel.end());
  }

  Rng rng(4);
  VolumeGeometry g;
  g.shape = {10, 12, 12};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AffineTransform> series;
    std::vector<std::pair<double, int>> norms;
    for (int i = 0; i < 12; ++i) {
      const RigidParams p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5),
                          rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
      series.push_back(rng.uniform() < 0.2 ? AffineTransform() : compose_affine(p, g));
      norms.push_back({(series.back().matrix() - Mat4::Identity()).norm(), i});
    }
    std::sort(norms.begin(), norms.end());
    std::vector<int> expect;
    for (int i = 0; i < 4; ++i) expect.push_back(norms[static_cast<std::size_t>(i)].second);
    std::sort(expect.begin(), expect.end());
    CHECK(select_reference_frames(series, 4) == expect);
  }
}

TEST_CASE("ROI selection stays clear of the borders") {
  const Volume v = make_phantom({24, 32, 32}, 5);
  const auto rois = select_rois(v, 3, 2);
  REQUIRE(rois.size() == 2);
  for (const auto& r : rois) {
    CHECK(r.voxel_count() == 27);
    // centres within [n/4, 3n/4) on every axis
    const int ci = r.lo[0] + 1;
    const int ck = r.lo[2] + 1;
    CHECK(r.hi[0] - r.lo[0] == 3);
    CHECK(ci >= 8);
    CHECK(ci < 32 - 8);
    CHECK(ck >= 6);
    CHECK(ck < 24 - 6);
  }
  int cheb = 0;
  for (int a = 0; a < 3; ++a) cheb = std::max(cheb, std::abs(rois[0].lo[a] - rois[1].lo[a]));
  CHECK(cheb >= 6);
}

TEST_CASE("motion study with identity and oracle predictors") {
  const auto series = make_phantom_series({24, 32, 32}, 99, 6);
  const auto rois = select_rois(series[0], 3, 2);
  const SliceProtocol protocol{6, 24, -1};

  IdentityPredictor id;
  const auto before = motion_study(series, id, rois, 11, {}, protocol);
  REQUIRE(before.voxels.size() == 54);
  for (const auto& v : before.voxels) {
    CHECK(v.before.size() == 6);
    CHECK(v.after.size() == 6);
    CHECK(v.motion_free.size() == 6);
    CHECK(v.after == v.before);
  }

  OraclePredictor oracle;
  const auto after = motion_study(series, oracle, rois, 11, {}, protocol);
  int interior = 0;
  for (const auto& v : after.voxels) interior += v.interior ? 1 : 0;
  CHECK(interior > 0);
  CHECK(after.max_interior_error() < 0.02);
  CHECK(after.motion == before.motion);
  CHECK(after.predicted == after.motion);

  const fs::path dir = temp_dir("study");
  after.write_csv(dir / "a.csv");
  after.write_csv(dir / "b.csv");
  CHECK(read_file(dir / "a.csv") == read_file(dir / "b.csv"));
  after.write_summary_csv(dir / "summary.csv");
  after.write_plots(dir / "plots", 2);
  int svgs = 0;
  for (const auto& e : fs::directory_iterator(dir / "plots")) {
    ++svgs;
    const std::string text = read_file(e.path());
    CHECK(text.find("<svg") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') > 3);
    CHECK(text.find("motion-free") != std::string::npos);
  }
  CHECK(svgs == 4);
  fs::remove_all(dir);
}

TEST_CASE("line plots are pure functions of their inputs") {
  const std::vector<PlotSeries> s{{"a", "#000", {1, 2, 3}, false}, {"b", "red", {3, 1, 2}, true}};
  const auto x = line_plot_svg("t", "x", "y", s);
  CHECK(x == line_plot_svg("t", "x", "y", s));
  CHECK(x.find("stroke-dasharray") != std::string::npos);
  CHECK(x != line_plot_svg("t", "x", "y", {s[0]}));
}

}  // TEST_SUITE
