#pragma once

#include <concepts>
#include <memory>
#include <span>
#include <variant>

#include <Eigen/Core>

#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"
#include "ncmap/neural_field.hpp"
#include "ncmap/spatial_index.hpp"

namespace ncmap {

/// A map S^2 -> R^{n_f} that registration can evaluate and differentiate.
template <class T>
concept FeatureFieldLike = requires(const T& f, std::span<const UnitPoint> pts, const Eigen::MatrixXd& targets,
                                    const UnitPoint& p) {
  { f.channels() } -> std::convertible_to<int>;
  { f.evaluate(pts) } -> std::convertible_to<Eigen::MatrixXd>;
  { f.residual_pullback(pts, targets) } -> std::convertible_to<Pullback>;
  { f.input_jacobian(p) } -> std::convertible_to<InputJacobian>;
};

/// Field backed by a trained neural cortical map.
class NeuralField {
 public:
  NeuralField() = default;
  explicit NeuralField(std::shared_ptr<const NeuralCorticalMap> map) : map_(std::move(map)) {
    if (!map_) throw InputError("null neural map");
  }
  explicit NeuralField(NeuralCorticalMap map)
      : NeuralField(std::make_shared<const NeuralCorticalMap>(std::move(map))) {}

  const NeuralCorticalMap& map() const { return *map_; }
  int channels() const { return map_->channels(); }
  Eigen::MatrixXd evaluate(std::span<const UnitPoint> pts) const { return map_->evaluate(pts); }
  Pullback residual_pullback(std::span<const UnitPoint> pts, const Eigen::MatrixXd& targets) const {
    return map_->residual_pullback(pts, targets);
  }
  InputJacobian input_jacobian(const UnitPoint& p) const { return map_->input_gradient(p); }

 private:
  std::shared_ptr<const NeuralCorticalMap> map_;
};

/// Field given by barycentric interpolation on a mesh, located by central
/// projection. Its Jacobian is the in-plane gradient of the linear
/// interpolant chained with the projection from the sphere to the face plane.
class MeshField {
 public:
  MeshField() = default;
  MeshField(SphericalMesh mesh, FeatureMap feat) {
    feat.check_matches(mesh);
    auto d = std::make_shared<Data>();
    d->index = FaceIndex(mesh);
    d->mesh = std::move(mesh);
    d->feat = std::move(feat);
    data_ = std::move(d);
  }

  const SphericalMesh& mesh() const { return data_->mesh; }
  const FeatureMap& features() const { return data_->feat; }
  const FaceIndex& index() const { return data_->index; }
  int channels() const { return data_->feat.channels(); }

  Eigen::VectorXd value(const UnitPoint& p) const {
    const FaceHit hit = locate_face(mesh(), p, index());
    return blend(hit).transpose();
  }

  Eigen::MatrixXd evaluate(std::span<const UnitPoint> pts) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), channels());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = blend(locate_face(mesh(), pts[i], index()));
    }
    return out;
  }

  InputJacobian input_jacobian(const UnitPoint& p) const {
    const FaceHit hit = locate_face(mesh(), p, index());
    return jacobian(hit.face_index, p.vec());
  }

  Pullback residual_pullback(std::span<const UnitPoint> pts, const Eigen::MatrixXd& targets) const {
    const auto n = static_cast<Eigen::Index>(pts.size());
    if (targets.rows() != n || targets.cols() != channels()) throw ShapeError("target shape mismatch");
    Pullback pb;
    pb.residual.resize(n, channels());
    pb.vjp.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const UnitPoint& p = pts[static_cast<std::size_t>(i)];
      const FaceHit hit = locate_face(mesh(), p, index());
      pb.residual.row(i) = blend(hit) - targets.row(i);
      pb.vjp.row(i) = pb.residual.row(i) * jacobian(hit.face_index, p.vec());
    }
    return pb;
  }

 private:
  struct Data {
    SphericalMesh mesh;
    FeatureMap feat;
    FaceIndex index;
  };

  Eigen::RowVectorXd blend(const FaceHit& hit) const {
    const Face& f = mesh().faces()[hit.face_index];
    const auto& v = data_->feat.values;
    return hit.weights[0] * v.row(f[0]) + hit.weights[1] * v.row(f[1]) + hit.weights[2] * v.row(f[2]);
  }

  InputJacobian jacobian(std::size_t face, const Vec3& q) const {
    const Vec3& p1 = mesh().corner(face, 0);
    const Vec3& p2 = mesh().corner(face, 1);
    const Vec3& p3 = mesh().corner(face, 2);
    const Face& f = mesh().faces()[face];
    const Vec3 n = (p2 - p1).cross(p3 - p1);
    const double n2 = n.squaredNorm();
    const auto& v = data_->feat.values;
    // In-plane gradient of the interpolant: sum_k f_k grad(w_k).
    const Vec3 g1 = n.cross(p3 - p2) / n2;
    const Vec3 g2 = n.cross(p1 - p3) / n2;
    const Vec3 g3 = n.cross(p2 - p1) / n2;
    InputJacobian grad(channels(), 3);
    for (int c = 0; c < channels(); ++c) {
      grad.row(c) = (v(f[0], c) * g1 + v(f[1], c) * g2 + v(f[2], c) * g3).transpose();
    }
    // x(q) = t q with t = (n.p1)/(n.q):  dx/dq = t (I - q n^T / (n.q)).
    const double nq = n.dot(q);
    const double t = n.dot(p1) / nq;
    const Mat3 dx = t * (Mat3::Identity() - q * n.transpose() / nq);
    return grad * dx;
  }

  std::shared_ptr<const Data> data_;
};

/// Either kind of field, chosen at run time (used by the command-line tool).
class FeatureField {
 public:
  FeatureField(NeuralField f) : impl_(std::move(f)) {}
  FeatureField(MeshField f) : impl_(std::move(f)) {}

  bool is_neural() const { return std::holds_alternative<NeuralField>(impl_); }
  const NeuralField* neural() const { return std::get_if<NeuralField>(&impl_); }
  const MeshField* mesh() const { return std::get_if<MeshField>(&impl_); }

  int channels() const {
    return std::visit([](const auto& f) { return f.channels(); }, impl_);
  }
  Eigen::MatrixXd evaluate(std::span<const UnitPoint> pts) const {
    return std::visit([&](const auto& f) { return f.evaluate(pts); }, impl_);
  }
  Pullback residual_pullback(std::span<const UnitPoint> pts, const Eigen::MatrixXd& targets) const {
    return std::visit([&](const auto& f) { return f.residual_pullback(pts, targets); }, impl_);
  }
  InputJacobian input_jacobian(const UnitPoint& p) const {
    return std::visit([&](const auto& f) { return f.input_jacobian(p); }, impl_);
  }

 private:
  std::variant<NeuralField, MeshField> impl_;
};

static_assert(FeatureFieldLike<NeuralField>);
static_assert(FeatureFieldLike<MeshField>);
static_assert(FeatureFieldLike<FeatureField>);

}  // namespace ncmap
