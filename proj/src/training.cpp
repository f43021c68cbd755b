#include "sasvr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "sasvr/error.hpp"
#include "sasvr/evaluation.hpp"
#include "sasvr/random.hpp"

namespace sasvr {

LossBreakdown loss(const RigidParams& pred, const RigidParams& gt, const Grid3D& grid,
                   double lambda1, double lambda2, std::array<double, 6>* grad) {
  const auto& geom = grid.geometry;
  const AffineTransform t_gt = compose_affine(gt, geom);

  LossBreakdown out;
  out.lambda1 = lambda1;
  out.lambda2 = lambda2;
  // A diverged network; the caller decides how to report it.
  if (!pred.is_finite()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.total = out.l_sim = out.l_ang = out.l_tr = nan;
    if (grad) grad->fill(nan);
    return out;
  }
  const AffineTransform t_pred = compose_affine(pred, geom);
  out.l_sim = grid_distance(t_gt, t_pred, grid);
  const auto p = pred.to_array();
  const auto g = gt.to_array();
  for (int i = 0; i < 3; ++i) {
    out.l_ang += (p[i] - g[i]) * (p[i] - g[i]) / 3.0;
    out.l_tr += (p[i + 3] - g[i + 3]) * (p[i + 3] - g[i + 3]) / 3.0;
  }
  out.total = out.l_sim + lambda1 * out.l_ang + lambda2 * out.l_tr;
  if (!grad) return out;

  // e = T_gt x - T_pred x, T_pred x = R (x - c) + c + t
  const Mat3 dl = t_gt.linear() - t_pred.linear();
  const Vec3 dof = t_gt.offset() - t_pred.offset();
  const Vec3 c = geom.rotation_center;
  Mat3 outer = Mat3::Zero();
  Vec3 usum = Vec3::Zero();
  for (const Vec3& x : grid.points) {
    const Vec3 e = dl * x + dof;
    const double n = e.norm();
    if (n == 0.0) continue;
    const Vec3 u = e / n;
    outer += u * (x - c).transpose();
    usum += u;
  }
  const double count = grid.points.empty() ? 1.0 : static_cast<double>(grid.points.size());
  const auto jac = euler_rotation_jacobian(pred);
  auto& gr = *grad;
  for (int i = 0; i < 3; ++i) {
    gr[i] = -jac[i].cwiseProduct(outer).sum() / count + lambda1 * 2.0 * (p[i] - g[i]) / 3.0;
    gr[i + 3] = -usum[i] / count + lambda2 * 2.0 * (p[i + 3] - g[i + 3]) / 3.0;
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be finite and >= 0");
  }
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidArgument("lambdas must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (steps < 0) throw InvalidArgument("steps must be >= 0");
  if (eval_every < 0) throw InvalidArgument("eval_every must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw InvalidArgument("bad Adam settings");
  }
  model.validate();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "step,total,l_sim,l_ang,l_tr,val_D_reg\n";
  if (initial_val_d_reg) f << fmt::format("0,,,,,{:.10g}\n", *initial_val_d_reg);
  for (const auto& r : steps) {
    f << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},", r.step, r.loss.total, r.loss.l_sim,
                     r.loss.l_ang, r.loss.l_tr);
    if (r.val_d_reg) f << fmt::format("{:.10g}", *r.val_d_reg);
    f << '\n';
  }
}

Adam::Adam(nn::ParameterSet<float>& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params_.params) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t k = 0; k < params_.params.size(); ++k) {
    auto& p = *params_.params[k].second;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p.value[i] = static_cast<float>(p.value[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

nn::Tensor<float> batch_stacks(const std::vector<const SamplePair*>& pairs) {
  if (pairs.empty()) throw InvalidArgument("empty batch");
  const auto& s0 = pairs.front()->stack;
  nn::Tensor<float> out({static_cast<int>(pairs.size()), s0.slices, s0.height, s0.width});
  const std::size_t per = s0.data.size();
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    const auto& s = pairs[b]->stack;
    if (s.data.size() != per) throw InvalidArgument("batch stacks differ in shape");
    std::copy(s.data.begin(), s.data.end(), out.data() + b * per);
  }
  return out;
}

nn::Tensor<float> batch_volumes(const std::vector<const SamplePair*>& pairs) {
  if (pairs.empty()) throw InvalidArgument("empty batch");
  const auto& g = pairs.front()->reference->geometry;
  nn::Tensor<float> out({static_cast<int>(pairs.size()), g.depth(), g.height(), g.width()});
  const std::size_t per = g.voxel_count();
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    const auto& v = *pairs[b]->reference;
    if (v.data.size() != per) throw InvalidArgument("batch volumes differ in shape");
    std::copy(v.data.begin(), v.data.end(), out.data() + b * per);
  }
  return out;
}

namespace {

RigidParams row_params(const nn::Tensor<float>& params, int row) {
  std::array<double, 6> v{};
  for (int i = 0; i < 6; ++i) v[static_cast<std::size_t>(i)] = params[row * 6 + i];
  return RigidParams::from_array(v);
}

using State = std::vector<nn::AlignedVector<float>>;

State snapshot(SaSvrNet<float>& model) {
  State s;
  for (auto& [name, p] : model.parameters().params) s.push_back(p->value.values());
  for (auto& [name, b] : model.parameters().buffers) s.push_back(b->values());
  return s;
}

void restore(SaSvrNet<float>& model, const State& s) {
  std::size_t k = 0;
  for (auto& [name, p] : model.parameters().params) p->value.values() = s[k++];
  for (auto& [name, b] : model.parameters().buffers) b->values() = s[k++];
}

void check_compatible(const ModelConfig& c, const std::vector<SamplePair>& pairs) {
  for (const auto& pair : pairs) {
    const auto& g = pair.reference->geometry;
    if (pair.stack.slices != c.slices || g.depth() != c.depth || g.height() != c.height ||
        g.width() != c.width || pair.stack.height != c.height || pair.stack.width != c.width) {
      throw InvalidArgument("pair " + pair.pair_id + " does not match the model input shape");
    }
  }
}

enum Stream : std::uint64_t { kShuffle = 21 };

}  // namespace

LossBreakdown train_step(SaSvrNet<float>& model, Adam& optimizer,
                         const std::vector<const SamplePair*>& batch, const Grid3D& grid,
                         double lambda1, double lambda2) {
  model.parameters().zero_grad();
  const auto pred = model.forward(batch_stacks(batch), batch_volumes(batch), nn::Mode::Train);
  const int n = static_cast<int>(batch.size());
  nn::Tensor<float> dparams({n, 6});
  LossBreakdown mean;
  mean.lambda1 = lambda1;
  mean.lambda2 = lambda2;
  for (int b = 0; b < n; ++b) {
    std::array<double, 6> g{};
    const auto l = loss(row_params(pred.params, b), batch[static_cast<std::size_t>(b)]->params,
                        grid, lambda1, lambda2, &g);
    mean.total += l.total / n;
    mean.l_sim += l.l_sim / n;
    mean.l_ang += l.l_ang / n;
    mean.l_tr += l.l_tr / n;
    for (int i = 0; i < 6; ++i) dparams[b * 6 + i] = static_cast<float>(g[static_cast<std::size_t>(i)] / n);
  }
  if (!std::isfinite(mean.total)) return mean;
  model.backward(dparams);
  optimizer.step();
  return mean;
}

double mean_d_reg(SaSvrNet<float>& model, const std::vector<SamplePair>& pairs,
                  const Grid3D& grid) {
  if (pairs.empty()) return 0.0;
  NetworkPredictor predictor(model);
  std::vector<const SamplePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const auto preds = predictor.predict(ptrs);
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) sum += pair_metrics(preds[i], pairs[i], grid).d_reg;
  return sum / static_cast<double>(pairs.size());
}

TrainResult train(const TrainConfig& config, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const ProgressFn& progress) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw InvalidArgument("training and validation sets must be non-empty");
  }
  check_compatible(config.model, train_set);
  check_compatible(config.model, val_set);
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.model = std::make_unique<SaSvrNet<float>>(config.model, config.seed);
  auto& model = *result.model;
  const Grid3D grid = make_grid(train_set.front().reference->geometry);
  Adam optimizer(model.parameters(), config.learning_rate, config.beta1, config.beta2,
                 config.adam_eps);

  const int n = static_cast<int>(train_set.size());
  const int per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int eval_every = config.eval_every > 0 ? config.eval_every : per_epoch;

  result.best_val_d_reg = mean_d_reg(model, val_set, grid);
  result.history.initial_val_d_reg = result.best_val_d_reg;
  State best = snapshot(model);

  std::vector<int> order(static_cast<std::size_t>(n));
  int cursor = n;
  int epoch = 0;
  for (int step = 1; step <= config.steps; ++step) {
    if (cursor >= n) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(config.seed, kShuffle, static_cast<std::uint64_t>(epoch++)));
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[rng.index(static_cast<std::uint64_t>(i) + 1)]);
      }
      cursor = 0;
    }
    std::vector<const SamplePair*> batch;
    for (; cursor < n && static_cast<int>(batch.size()) < config.batch_size; ++cursor) {
      batch.push_back(&train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor)])]);
    }
    StepRecord rec;
    rec.step = step;
    rec.loss = train_step(model, optimizer, batch, grid, config.lambda1, config.lambda2);
    if (!std::isfinite(rec.loss.total)) {
      throw NumericError(fmt::format(
          "non-finite training loss at step {} (l_sim={}, l_ang={}, l_tr={}); lower the learning "
          "rate or check the inputs",
          step, rec.loss.l_sim, rec.loss.l_ang, rec.loss.l_tr));
    }
    if (step % eval_every == 0 || step == config.steps) {
      const double v = mean_d_reg(model, val_set, grid);
      rec.val_d_reg = v;
      if (v < result.best_val_d_reg) {
        result.best_val_d_reg = v;
        result.best_step = step;
        best = snapshot(model);
      }
    }
    result.history.steps.push_back(rec);
    if (progress) progress(rec);
  }
  restore(model, best);
  result.history.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<std::pair<double, double>> default_lambda_grid() {
  return {{1.0, 100.0}, {10.0, 40.0}, {10.0, 100.0}};
}

std::vector<SweepRow> sweep_lambdas(const std::vector<std::pair<double, double>>& grid,
                                    const TrainConfig& config,
                                    const std::vector<SamplePair>& train_set,
                                    const std::vector<SamplePair>& val_set) {
  if (grid.empty()) throw InvalidArgument("lambda grid is empty");
  std::vector<SweepRow> rows;
  for (const auto& [l1, l2] : grid) {
    TrainConfig cfg = config;
    cfg.lambda1 = l1;
    cfg.lambda2 = l2;
    auto result = train(cfg, train_set, val_set);
    NetworkPredictor predictor(*result.model);
    const auto report = evaluate(predictor, val_set, "sweep", "val");
    rows.push_back({l1, l2, report.d_reg.mean, report.e_rot.mean, report.e_tr.mean, false});
  }
  double min_rot = std::numeric_limits<double>::infinity();
  double min_tr = min_rot;
  for (const auto& r : rows) {
    min_rot = std::min(min_rot, r.e_rot);
    min_tr = std::min(min_tr, r.e_tr);
  }
  auto score = [&](const SweepRow& r) {
    const double a = min_rot > 0.0 ? r.e_rot / min_rot : (r.e_rot > 0.0 ? 2.0 : 1.0);
    const double b = min_tr > 0.0 ? r.e_tr / min_tr : (r.e_tr > 0.0 ? 2.0 : 1.0);
    return a + b;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (score(rows[i]) < score(rows[best])) best = i;
  }
  rows[best].selected = true;
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
  f << "lambda1,lambda2,D_reg_mm,E_rot_deg,E_tr_mm,selected\n";
  for (const auto& r : rows) {
    f << fmt::format("{:g},{:g},{:.10g},{:.10g},{:.10g},{}\n", r.lambda1, r.lambda2, r.d_reg,
                     r.e_rot, r.e_tr, r.selected ? 1 : 0);
  }
}

}  // namespace sasvr
