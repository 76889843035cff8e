#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "ncmap/adam.hpp"
#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"
#include "ncmap/neural_field.hpp"
#include "ncmap/spatial_index.hpp"

namespace ncmap {

struct TrainConfig {
  int n_faces = 1024;
  int n_points = 4;
  int iterations = 3000;
  double table_learning_rate = 1e-2;
  double mlp_learning_rate = 1e-3;
  AdamConfig adam{0.9, 0.99, 1e-10};
  FaceSampling face_sampling = FaceSampling::area_weighted;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_faces < 1 || n_points < 1) throw InputError("n_faces and n_points must be >= 1");
    if (iterations < 0) throw InputError("iterations must be >= 0");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
      throw InputError("Adam betas must lie in (0, 1)");
    }
    if (!(table_learning_rate > 0.0) || !(mlp_learning_rate > 0.0)) {
      throw InputError("learning rates must be positive");
    }
  }
};

struct FitResult {
  NeuralCorticalMap map;
  std::vector<double> loss_trace;
};

/// Overfits a neural map to one mesh: every iteration draws a fresh batch of
/// face/point samples and takes one Adam step on the batch MSE.
inline FitResult fit(const SphericalMesh& mesh, const FeatureMap& feat, const TrainConfig& cfg,
                     const HashEncodingConfig& enc = {}, MlpConfig mlp = {}) {
  cfg.validate();
  feat.check_matches(mesh);
  mlp.output_dim = feat.channels();
  FitResult out{NeuralCorticalMap(enc, mlp, cfg.seed), {}};
  NeuralCorticalMap& map = out.map;
  map.set_channel_names(feat.channel_names);

  const Eigen::Index n_params = static_cast<Eigen::Index>(map.parameter_count());
  const Eigen::Index n_tables = map.table_parameter_count();
  Adam adam(n_params, cfg.adam);
  const std::vector<Adam::Segment> segments = {{0, n_tables, cfg.table_learning_rate},
                                               {n_tables, n_params - n_tables, cfg.mlp_learning_rate}};
  // Sampling uses its own stream so initialization and batches are decoupled.
  Rng rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
  const FaceSampler sampler(mesh, cfg.face_sampling);
  const std::size_t batch = static_cast<std::size_t>(cfg.n_faces) * static_cast<std::size_t>(cfg.n_points);
  std::vector<UnitPoint> points(batch);
  Eigen::MatrixXd targets(feat.channels(), static_cast<Eigen::Index>(batch));
  Eigen::VectorXd grad(n_params);
  out.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t k = 0;
    for (int i = 0; i < cfg.n_faces; ++i) {
      const std::size_t f = sampler.draw(rng);
      const Face& face = mesh.faces()[f];
      for (int j = 0; j < cfg.n_points; ++j, ++k) {
        const auto w = sample_simplex(rng);
        const Vec3 planar = w[0] * mesh.corner(f, 0) + w[1] * mesh.corner(f, 1) + w[2] * mesh.corner(f, 2);
        points[k] = UnitPoint(planar);
        // Sampled weights are exactly the area weights of the planar point.
        targets.col(static_cast<Eigen::Index>(k)) =
            w[0] * feat.values.row(face[0]).transpose() + w[1] * feat.values.row(face[1]).transpose() +
            w[2] * feat.values.row(face[2]).transpose();
      }
    }
    grad.setZero();
    const double loss = map.loss_and_gradient(points, targets, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw NumericFault("non-finite training loss", it);
    }
    out.loss_trace.push_back(loss);
    adam.step(map.mutable_parameters(), grad, segments);
  }
  map.set_iterations(static_cast<std::uint64_t>(cfg.iterations));
  return out;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares of y on x.
inline LinearFit linear_regression(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("regression needs two equal-length vectors (n >= 2)");
  const double mx = x.mean(), my = y.mean();
  const Eigen::ArrayXd dx = x.array() - mx;
  const Eigen::ArrayXd dy = y.array() - my;
  const double sxx = dx.square().sum();
  if (!(sxx > 0.0)) throw UndefinedStatistic("regression target has zero variance");
  const double sxy = (dx * dy).sum();
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double syy = dy.square().sum();
  const double sse = (dy - f.slope * dx).square().sum();
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 0.0;
  return f;
}

/// Reference values at arbitrary points by locate_face + barycentric weights.
inline Eigen::MatrixXd interpolate_at(const SphericalMesh& mesh, const FeatureMap& feat, const FaceIndex& index,
                                      std::span<const UnitPoint> points) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(points.size()), feat.channels());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const FaceHit hit = locate_face(mesh, points[i], index);
    const Face& f = mesh.faces()[hit.face_index];
    out.row(static_cast<Eigen::Index>(i)) = hit.weights[0] * feat.values.row(f[0]) +
                                            hit.weights[1] * feat.values.row(f[1]) +
                                            hit.weights[2] * feat.values.row(f[2]);
  }
  return out;
}

/// Per-channel regression of predictions on interpolated reference values
/// at every vertex of `eval_mesh`. `predict` maps the vertex list to a
/// V x n_f matrix (normally a neural map's batch evaluation).
template <class Predict>
std::vector<LinearFit> evaluate_fit_fidelity(Predict&& predict, const SphericalMesh& eval_mesh,
                                             const SphericalMesh& reference_mesh, const FeatureMap& reference_feat) {
  reference_feat.check_matches(reference_mesh);
  const FaceIndex index(reference_mesh);
  const Eigen::MatrixXd target = interpolate_at(reference_mesh, reference_feat, index, eval_mesh.vertices());
  const Eigen::MatrixXd pred = predict(std::span<const UnitPoint>(eval_mesh.vertices()));
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("prediction shape mismatch");
  std::vector<LinearFit> out;
  for (Eigen::Index c = 0; c < target.cols(); ++c) out.push_back(linear_regression(target.col(c), pred.col(c)));
  return out;
}

inline std::vector<LinearFit> evaluate_fit_fidelity(const NeuralCorticalMap& map, const SphericalMesh& eval_mesh,
                                                    const SphericalMesh& reference_mesh,
                                                    const FeatureMap& reference_feat) {
  if (map.channels() != reference_feat.channels()) throw ShapeError("model and reference channel counts differ");
  return evaluate_fit_fidelity([&](std::span<const UnitPoint> p) { return map.evaluate(p); }, eval_mesh,
                               reference_mesh, reference_feat);
}

}  // namespace ncmap
