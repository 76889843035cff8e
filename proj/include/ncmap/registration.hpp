#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ncmap/adam.hpp"
#include "ncmap/error.hpp"
#include "ncmap/feature_field.hpp"
#include "ncmap/geometry.hpp"
#include "ncmap/rotations.hpp"

namespace ncmap {

enum class ResetStrategy { none, random, sa };

inline std::string_view to_string(ResetStrategy s) {
  switch (s) {
    case ResetStrategy::none: return "none";
    case ResetStrategy::random: return "random";
    case ResetStrategy::sa: return "sa";
  }
  return "?";
}

inline ResetStrategy parse_strategy(std::string_view s) {
  if (s == "none" || s == "no_reset") return ResetStrategy::none;
  if (s == "random") return ResetStrategy::random;
  if (s == "sa") return ResetStrategy::sa;
  throw InputError("unknown reset strategy '" + std::string(s) + "'");
}

struct RegConfig {
  int n_points = 4096;
  int n_val = 2048;
  /// Number of descents (the first one plus every restart).
  int n_iter = 100;
  int max_steps = 300;
  double learning_rate = 0.05;
  AdamConfig adam{0.9, 0.999, 1e-8};
  int t_m = 10;
  double stall_tol = 1e-5;
  int t_diff = 5;
  ResetStrategy strategy = ResetStrategy::sa;
  double t0 = 0.05;
  double t_min = 1e-4;
  double alpha_t = 0.9;
  int n_t_iter = 5;
  Parametrization parametrization = Parametrization::quaternion;
  RotationSampler sampler = RotationSampler::axis_angle_uniform;
  /// Draw fresh training points at every descent step instead of a fixed set.
  bool resample_points = false;
  Rotation initial;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_points < 1 || n_val < 1) throw InputError("point counts must be >= 1");
    if (n_iter < 1) throw InputError("n_iter must be >= 1");
    if (max_steps < 1) throw InputError("max_steps must be >= 1");
    if (t_m < 1 || t_diff < 1) throw InputError("t_m and t_diff must be >= 1");
    if (!(alpha_t > 0.0 && alpha_t < 1.0)) throw InputError("alpha_t must lie in (0, 1)");
    if (!(t_min > 0.0)) throw InputError("t_min must be > 0");
    if (!(t0 > 0.0)) throw InputError("t0 must be > 0");
    if (n_t_iter < 1) throw InputError("n_t_iter must be >= 1");
    if (!(learning_rate > 0.0)) throw InputError("learning rate must be > 0");
    if (std::isnan(stall_tol) || stall_tol < 0.0) throw InputError("stall_tol must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Energy

inline std::vector<UnitPoint> rotate_points(const Rotation& r, std::span<const UnitPoint> pts) {
  std::vector<UnitPoint> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(r.apply(p));
  return out;
}

template <FeatureFieldLike F, FeatureFieldLike M>
void check_channels(const F& fixed, const M& moving) {
  if (fixed.channels() != moving.channels()) {
    throw ShapeError("fixed field has " + std::to_string(fixed.channels()) + " channels, moving field has " +
                     std::to_string(moving.channels()));
  }
}

/// Mean over points and channels of (target - M(R p))^2.
template <FeatureFieldLike M>
double energy_against(const M& moving, const Rotation& rot, std::span<const UnitPoint> pts,
                      const Eigen::MatrixXd& targets) {
  if (pts.empty()) throw InputError("energy needs at least one point");
  const auto rotated = rotate_points(rot, pts);
  const Eigen::MatrixXd m = moving.evaluate(rotated);
  if (m.rows() != targets.rows() || m.cols() != targets.cols()) throw ShapeError("target shape mismatch");
  return (m - targets).squaredNorm() / static_cast<double>(m.size());
}

/// Mean squared feature difference F(p) - M(R p) over points and channels.
template <FeatureFieldLike F, FeatureFieldLike M>
double energy(const F& fixed, const M& moving, const Rotation& rot, std::span<const UnitPoint> pts) {
  check_channels(fixed, moving);
  return energy_against(moving, rot, pts, fixed.evaluate(pts));
}

struct EnergyGradient {
  double energy = 0.0;
  ParamVector gradient;
};

/// Energy and its exact gradient with respect to the rotation parameters.
template <FeatureFieldLike M>
EnergyGradient energy_gradient_against(const M& moving, const RotationParams& params, std::span<const UnitPoint> pts,
                                       const Eigen::MatrixXd& targets) {
  if (pts.empty()) throw InputError("energy needs at least one point");
  const Rotation rot = to_rotation(params);
  const auto dr = rotation_matrix_jacobian(params);
  const auto rotated = rotate_points(rot, pts);
  const Pullback pb = moving.residual_pullback(rotated, targets);
  const double count = static_cast<double>(pb.residual.size());
  // sum_i vjp_i p_i^T, contracted with each dR/dtheta_k.
  Mat3 g = Mat3::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    g.noalias() += pb.vjp.row(static_cast<Eigen::Index>(i)).transpose() * pts[i].vec().transpose();
  }
  EnergyGradient out;
  out.energy = pb.residual.squaredNorm() / count;
  out.gradient.resize(params.size());
  for (int k = 0; k < params.size(); ++k) {
    out.gradient[k] = 2.0 / count * dr[static_cast<std::size_t>(k)].cwiseProduct(g).sum();
  }
  return out;
}

template <FeatureFieldLike F, FeatureFieldLike M>
EnergyGradient energy_gradient(const F& fixed, const M& moving, const RotationParams& params,
                               std::span<const UnitPoint> pts) {
  check_channels(fixed, moving);
  return energy_gradient_against(moving, params, pts, fixed.evaluate(pts));
}

// ---------------------------------------------------------------------------
// Descent with stall detection

/// Fixed evaluation points and the fixed field's values there.
struct EvaluationSet {
  std::vector<UnitPoint> points;
  Eigen::MatrixXd targets;
};

struct DescentResult {
  RotationParams end;
  double end_loss = 0.0;
  std::vector<double> losses;
  bool stalled = false;
};

/// Tracks |L_t - mean(previous t_m losses)| < tol over consecutive steps.
class StallDetector {
 public:
  StallDetector(int t_m, double tol, int t_diff) : t_m_(t_m), tol_(tol), t_diff_(t_diff) {}

  /// Feeds L_t; true once the condition has held t_diff times in a row.
  bool push(double loss) {
    if (static_cast<int>(window_.size()) == t_m_) {
      const double mean = sum_ / t_m_;
      const double diff = std::abs(loss - mean);
      if (diff < tol_ || std::isinf(tol_)) {
        ++run_;
      } else {
        run_ = 0;
      }
      sum_ -= window_.front();
      window_.pop_front();
    }
    window_.push_back(loss);
    sum_ += loss;
    return run_ >= t_diff_;
  }

 private:
  int t_m_;
  double tol_;
  int t_diff_;
  std::deque<double> window_;
  double sum_ = 0.0;
  int run_ = 0;
};

/// Adam on rotation parameters from `start` until the loss stalls or the
/// step cap is reached. Every iteration evaluates the loss at the current
/// parameters; the returned end point is the last evaluated one.
/// `next_batch()` supplies the points of each iteration.
template <FeatureFieldLike M, class NextBatch>
DescentResult descend_with(const M& moving, const RotationParams& start, const RegConfig& cfg, NextBatch&& next_batch) {
  DescentResult out;
  RotationParams params = start;
  Adam adam(params.size(), cfg.adam);
  StallDetector stall(cfg.t_m, cfg.stall_tol, cfg.t_diff);
  for (int step = 0; step < cfg.max_steps; ++step) {
    const EvaluationSet& batch = next_batch();
    const EnergyGradient eg = energy_gradient_against(moving, params, batch.points, batch.targets);
    if (!std::isfinite(eg.energy) || !eg.gradient.allFinite()) {
      throw NumericFault("non-finite registration loss", step);
    }
    out.losses.push_back(eg.energy);
    out.end = params;
    out.end_loss = eg.energy;
    if (stall.push(eg.energy)) {
      out.stalled = true;
      break;
    }
    if (step + 1 == cfg.max_steps) break;
    adam.step(params.values, eg.gradient, cfg.learning_rate);
    renormalize(params);
  }
  return out;
}

template <FeatureFieldLike M>
DescentResult descend(const M& moving, const RotationParams& start, const EvaluationSet& train, const RegConfig& cfg) {
  return descend_with(moving, start, cfg, [&]() -> const EvaluationSet& { return train; });
}

template <FeatureFieldLike F, FeatureFieldLike M>
DescentResult descend(const F& fixed, const M& moving, const RotationParams& start, std::span<const UnitPoint> pts,
                      const RegConfig& cfg) {
  check_channels(fixed, moving);
  EvaluationSet train{{pts.begin(), pts.end()}, fixed.evaluate(pts)};
  return descend(moving, start, train, cfg);
}

// ---------------------------------------------------------------------------
// Simulated-annealing reset

struct SaResult {
  RotationParams next;
  bool accepted = false;
  double temperature = 0.0;
  int draws = 0;
  double candidate_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Metropolis test of one candidate: ΔL < 0 always; ΔL > 0 with
/// probability exp(-ΔL/T); ΔL == 0 never.
template <class URBG>
bool sa_accept(double delta, double temperature, URBG& rng) {
  if (delta < 0.0) return true;
  if (delta > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    return unit(rng) < std::exp(-delta / temperature);
  }
  return false;
}

inline double sa_cool(double temperature, const RegConfig& cfg) {
  return temperature > cfg.t_min ? cfg.alpha_t * temperature : temperature;
}

/// One annealing reset. `draw_candidate(rng)` proposes a rotation and
/// `candidate_energy(rotation)` scores it on the training set. If every
/// draw is rejected the current parameters are kept.
template <class URBG, class Draw, class Score>
SaResult sa_reset(const RotationParams& current, double current_loss, double temperature, const RegConfig& cfg,
                  URBG& rng, Draw&& draw_candidate, Score&& candidate_energy) {
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  SaResult out{current, false, temperature, 0};
  for (int k = 0; k < cfg.n_t_iter; ++k) {
    const Rotation cand = draw_candidate(rng);
    const double loss = candidate_energy(cand);
    ++out.draws;
    if (sa_accept(loss - current_loss, temperature, rng)) {
      out.next = from_rotation(cand, current.kind);
      out.accepted = true;
      out.candidate_loss = loss;
      break;
    }
  }
  out.temperature = sa_cool(temperature, cfg);
  return out;
}

// ---------------------------------------------------------------------------
// NC-Reg

enum class ResetKind { initial, sa_accepted, sa_rejected, random };

inline std::string_view to_string(ResetKind k) {
  switch (k) {
    case ResetKind::initial: return "initial";
    case ResetKind::sa_accepted: return "sa_accepted";
    case ResetKind::sa_rejected: return "sa_rejected";
    case ResetKind::random: return "random";
  }
  return "?";
}

struct RestartRecord {
  ResetKind started_by = ResetKind::initial;
  Rotation start;
  Rotation end;
  double end_loss = 0.0;
  double val_loss = 0.0;
  int steps = 0;
  bool stalled = false;
  double temperature = 0.0;  ///< temperature when the descent started
};

struct RegistrationResult {
  Rotation rotation;
  RotationParams params;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_train_loss = std::numeric_limits<double>::infinity();
  std::size_t best_index = 0;
  std::vector<double> loss_trace;
  std::vector<int> trace_descent;  ///< descent index of each loss_trace entry
  std::vector<double> best_val_trace;
  std::vector<RestartRecord> restarts;
  std::vector<double> temperatures;
  double wall_time = 0.0;
  std::uint64_t point_seed = 0;
  std::uint64_t reset_seed = 0;
  int total_steps = 0;
};

/// Seeds of the evaluation points and reset stream derived from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Training and validation points: one uniform draw of N + N_val points
/// split in two.
inline std::pair<std::vector<UnitPoint>, std::vector<UnitPoint>> registration_points(const RegConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0));
  auto all = sample_sphere_uniform(static_cast<std::size_t>(cfg.n_points + cfg.n_val), rng);
  std::vector<UnitPoint> val(all.begin() + cfg.n_points, all.end());
  all.resize(static_cast<std::size_t>(cfg.n_points));
  return {std::move(all), std::move(val)};
}

/// Registers `moving` onto `fixed`: returns R minimizing the mean of
/// (F(p) - M(R p))^2. Works for any pair of fields, so the interpolation
/// baseline is the same routine on mesh fields.
template <FeatureFieldLike F, FeatureFieldLike M>
RegistrationResult nc_reg(const F& fixed, const M& moving, const RegConfig& cfg) {
  cfg.validate();
  check_channels(fixed, moving);
  const auto t_start = std::chrono::steady_clock::now();

  RegistrationResult res;
  res.point_seed = derive_seed(cfg.seed, 0);
  res.reset_seed = derive_seed(cfg.seed, 1);
  auto [train_pts, val_pts] = registration_points(cfg);
  EvaluationSet train{std::move(train_pts), {}};
  train.targets = fixed.evaluate(train.points);
  EvaluationSet val{std::move(val_pts), {}};
  val.targets = fixed.evaluate(val.points);

  Rng reset_rng(res.reset_seed);
  Rng batch_rng(derive_seed(cfg.seed, 2));
  EvaluationSet fresh;
  auto next_batch = [&]() -> const EvaluationSet& {
    if (!cfg.resample_points) return train;
    fresh.points = sample_sphere_uniform(static_cast<std::size_t>(cfg.n_points), batch_rng);
    fresh.targets = fixed.evaluate(fresh.points);
    return fresh;
  };

  RotationParams params = from_rotation(cfg.initial, cfg.parametrization);
  ResetKind started_by = ResetKind::initial;
  double temperature = cfg.t0;
  for (int d = 0; d < cfg.n_iter; ++d) {
    RestartRecord rec;
    rec.started_by = started_by;
    rec.start = to_rotation(params);
    rec.temperature = temperature;
    const DescentResult desc = descend_with(moving, params, cfg, next_batch);
    for (double l : desc.losses) {
      res.loss_trace.push_back(l);
      res.trace_descent.push_back(d);
    }
    res.total_steps += static_cast<int>(desc.losses.size());
    rec.end = to_rotation(desc.end);
    rec.end_loss = cfg.resample_points ? energy_against(moving, rec.end, train.points, train.targets) : desc.end_loss;
    rec.val_loss = energy_against(moving, rec.end, val.points, val.targets);
    rec.steps = static_cast<int>(desc.losses.size());
    rec.stalled = desc.stalled;
    if (rec.val_loss < res.best_val_loss) {
      res.best_val_loss = rec.val_loss;
      res.best_train_loss = rec.end_loss;
      res.rotation = rec.end;
      res.params = desc.end;
      res.best_index = res.restarts.size();
    }
    res.best_val_trace.push_back(res.best_val_loss);
    res.restarts.push_back(rec);
    res.temperatures.push_back(temperature);

    if (d + 1 == cfg.n_iter || cfg.strategy == ResetStrategy::none) break;
    if (cfg.strategy == ResetStrategy::random) {
      params = from_rotation(sample_rotation(cfg.sampler, reset_rng), cfg.parametrization);
      started_by = ResetKind::random;
    } else {
      const SaResult sa = sa_reset(
          desc.end, rec.end_loss, temperature, cfg, reset_rng,
          [&](Rng& g) { return sample_rotation(cfg.sampler, g); },
          [&](const Rotation& r) { return energy_against(moving, r, train.points, train.targets); });
      params = sa.next;
      temperature = sa.temperature;
      started_by = sa.accepted ? ResetKind::sa_accepted : ResetKind::sa_rejected;
    }
  }
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

/// The interpolation baseline: registration with both sides evaluated by
/// point location and barycentric weights on their meshes.
inline RegistrationResult interp_reg(const SphericalMesh& fixed_mesh, const FeatureMap& fixed_feat,
                                     const SphericalMesh& moving_mesh, const FeatureMap& moving_feat,
                                     const RegConfig& cfg) {
  return nc_reg(MeshField(fixed_mesh, fixed_feat), MeshField(moving_mesh, moving_feat), cfg);
}

// ---------------------------------------------------------------------------
// Brute-force oracle

struct OracleResult {
  Rotation rotation;
  double energy = std::numeric_limits<double>::infinity();
  double yaw = 0.0, pitch = 0.0, roll = 0.0;  ///< degrees
  std::size_t grid_size = 0;
};

struct EulerGrid {
  int n_yaw, n_pitch, n_roll;
  double step;
  std::size_t size() const {
    return static_cast<std::size_t>(n_yaw) * static_cast<std::size_t>(n_pitch) * static_cast<std::size_t>(n_roll);
  }
  double yaw(int i) const { return -180.0 + i * step; }
  double pitch(int j) const { return -90.0 + j * step; }
  double roll(int k) const { return -180.0 + k * step; }
};

/// Z-Y-X grid: yaw and roll over [-180, 180), pitch over [-90, 90]
/// including both ends.
inline EulerGrid euler_grid(double step_deg) {
  if (!(step_deg >= 5.0)) throw InputError("oracle grid step must be >= 5 degrees");
  const double eps = 1e-9;
  EulerGrid g;
  g.step = step_deg;
  g.n_yaw = static_cast<int>(std::ceil(360.0 / step_deg - eps));
  g.n_roll = g.n_yaw;
  g.n_pitch = static_cast<int>(std::floor(180.0 / step_deg + eps)) + 1;
  return g;
}

/// Exhaustive minimum of the energy over the Euler grid. Rotations whose
/// partial sum already exceeds the best full sum are abandoned early; the
/// minimizer and its energy are unaffected.
template <FeatureFieldLike M>
OracleResult brute_force_oracle_against(const M& moving, double step_deg, std::span<const UnitPoint> pts,
                                        const Eigen::MatrixXd& targets) {
  if (pts.empty()) throw InputError("oracle needs at least one point");
  const EulerGrid grid = euler_grid(step_deg);
  // A short first chunk rejects most rotations after a handful of points.
  constexpr std::size_t first_chunk = 16, chunk = 64;
  OracleResult best;
  best.grid_size = grid.size();
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<UnitPoint> rotated(chunk);
  for (int i = 0; i < grid.n_yaw; ++i) {
    for (int j = 0; j < grid.n_pitch; ++j) {
      for (int k = 0; k < grid.n_roll; ++k) {
        const Rotation r = from_euler_zyx(rad(grid.yaw(i)), rad(grid.pitch(j)), rad(grid.roll(k)));
        double sse = 0.0;
        for (std::size_t s = 0; s < pts.size() && sse <= best_sse;) {
          const std::size_t b = std::min(s == 0 ? first_chunk : chunk, pts.size() - s);
          rotated.resize(b);
          for (std::size_t t = 0; t < b; ++t) rotated[t] = r.apply(pts[s + t]);
          const Eigen::MatrixXd m = moving.evaluate(rotated);
          sse += (m - targets.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(b))).squaredNorm();
          s += b;
        }
        if (sse < best_sse) {
          best_sse = sse;
          best.rotation = r;
          best.yaw = grid.yaw(i);
          best.pitch = grid.pitch(j);
          best.roll = grid.roll(k);
        }
      }
    }
  }
  best.energy = energy_against(moving, best.rotation, pts, targets);
  return best;
}

template <FeatureFieldLike F, FeatureFieldLike M>
OracleResult brute_force_oracle(const F& fixed, const M& moving, double step_deg, std::span<const UnitPoint> pts) {
  check_channels(fixed, moving);
  return brute_force_oracle_against(moving, step_deg, pts, fixed.evaluate(pts));
}

}  // namespace ncmap
