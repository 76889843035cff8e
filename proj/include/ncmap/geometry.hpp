#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ncmap/error.hpp"

namespace ncmap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rng = std::mt19937_64;

/// A point on S^2. Construction renormalizes unless the input is already unit
/// to within a few ulps, which keeps normalization idempotent and text/binary
/// round trips exact.
class UnitPoint {
 public:
  UnitPoint() : v_(0.0, 0.0, 1.0) {}
  explicit UnitPoint(const Vec3& v) : v_(v) {
    const double n2 = v_.squaredNorm();
    if (!(n2 > 0.0) || !std::isfinite(n2)) {
      throw DegenerateGeometry("cannot project a zero or non-finite vector onto the sphere");
    }
    if (std::abs(n2 - 1.0) > 8.0 * std::numeric_limits<double>::epsilon()) {
      v_ /= std::sqrt(n2);
    }
  }
  UnitPoint(double x, double y, double z) : UnitPoint(Vec3(x, y, z)) {}

  const Vec3& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  double dot(const UnitPoint& o) const { return v_.dot(o.v_); }

  friend bool operator==(const UnitPoint& a, const UnitPoint& b) { return a.v_ == b.v_; }

 private:
  Vec3 v_;
};

using Face = std::array<std::int32_t, 3>;

/// Unit-sphere triangle mesh. `raw_coordinates` keeps the file coordinates
/// verbatim when a mesh was read with non-unit vertices.
class SphericalMesh {
 public:
  SphericalMesh() = default;
  SphericalMesh(std::vector<UnitPoint> vertices, std::vector<Face> faces,
                std::vector<Vec3> raw = {})
      : vertices_(std::move(vertices)), faces_(std::move(faces)), raw_(std::move(raw)) {
    validate();
  }

  const std::vector<UnitPoint>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Vec3>& raw_coordinates() const { return raw_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  const Vec3& corner(std::size_t face, int k) const {
    return vertices_[static_cast<std::size_t>(faces_[face][k])].vec();
  }

  /// Planar area of a face.
  double face_area(std::size_t face) const {
    return 0.5 * (corner(face, 1) - corner(face, 0)).cross(corner(face, 2) - corner(face, 0)).norm();
  }

  Vec3 face_centroid(std::size_t face) const {
    return (corner(face, 0) + corner(face, 1) + corner(face, 2)) / 3.0;
  }

  std::size_t edge_count() const {
    std::vector<std::pair<std::int32_t, std::int32_t>> edges;
    edges.reserve(faces_.size() * 3);
    for (const Face& f : faces_) {
      for (int k = 0; k < 3; ++k) {
        auto a = f[k], b = f[(k + 1) % 3];
        edges.emplace_back(std::min(a, b), std::max(a, b));
      }
    }
    std::sort(edges.begin(), edges.end());
    return static_cast<std::size_t>(std::unique(edges.begin(), edges.end()) - edges.begin());
  }

  long euler_characteristic() const {
    return static_cast<long>(vertex_count()) - static_cast<long>(edge_count()) +
           static_cast<long>(face_count());
  }

 private:
  void validate() const {
    const auto n = static_cast<std::int64_t>(vertices_.size());
    if (!raw_.empty() && raw_.size() != vertices_.size()) {
      throw ShapeError("raw coordinate count does not match vertex count");
    }
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      const Face& f = faces_[i];
      for (auto idx : f) {
        if (idx < 0 || idx >= n) {
          throw ShapeError("face " + std::to_string(i) + " references vertex " +
                           std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
        }
      }
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
        throw DegenerateGeometry("face " + std::to_string(i) + " repeats a vertex index");
      }
      if (!(face_area(i) > 0.0)) {
        throw DegenerateGeometry("face " + std::to_string(i) + " has zero area");
      }
    }
  }

  std::vector<UnitPoint> vertices_;
  std::vector<Face> faces_;
  std::vector<Vec3> raw_;
};

/// Per-vertex feature values, one column per channel.
struct FeatureMap {
  Eigen::MatrixXd values;
  std::vector<std::string> channel_names;

  FeatureMap() = default;
  FeatureMap(Eigen::MatrixXd v, std::vector<std::string> names)
      : values(std::move(v)), channel_names(std::move(names)) {
    if (channel_names.empty()) {
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        channel_names.push_back("f" + std::to_string(c));
      }
    }
    if (static_cast<Eigen::Index>(channel_names.size()) != values.cols()) {
      throw ShapeError("channel name count does not match feature columns");
    }
    if (!values.allFinite()) throw InputError("feature map contains non-finite values");
  }

  Eigen::Index rows() const { return values.rows(); }
  int channels() const { return static_cast<int>(values.cols()); }

  void check_matches(const SphericalMesh& mesh) const {
    if (static_cast<std::size_t>(values.rows()) != mesh.vertex_count()) {
      throw ShapeError("feature map has " + std::to_string(values.rows()) +
                       " rows but mesh has " + std::to_string(mesh.vertex_count()) + " vertices");
    }
  }
};

/// Per-vertex integer region labels.
struct Parcellation {
  std::vector<int> labels;
  std::map<int, std::string> label_names;
};

// ---------------------------------------------------------------------------
// Barycentric interpolation

/// Area-ratio weights for `p` on the face (p1, p2, p3): each vertex is
/// weighted by the area of the opposite sub-triangle. Unsigned areas, so the
/// weights are only barycentric for points inside the triangle.
inline std::array<double, 3> area_weights(const Vec3& p1, const Vec3& p2, const Vec3& p3,
                                          const Vec3& p) {
  const double a1 = 0.5 * (p2 - p).cross(p3 - p).norm();
  const double a2 = 0.5 * (p1 - p).cross(p3 - p).norm();
  const double a3 = 0.5 * (p1 - p).cross(p2 - p).norm();
  const double total = a1 + a2 + a3;
  if (!(total >= 1e-12)) {
    throw DegenerateGeometry("degenerate face: sub-triangle areas sum to " + std::to_string(total));
  }
  return {a1 / total, a2 / total, a3 / total};
}

/// Signed barycentric coordinates of `p` projected onto the plane of the face.
inline std::array<double, 3> signed_barycentric(const Vec3& p1, const Vec3& p2, const Vec3& p3,
                                                const Vec3& p) {
  const Vec3 n = (p2 - p1).cross(p3 - p1);
  const double n2 = n.squaredNorm();
  if (!(n2 > 0.0)) throw DegenerateGeometry("degenerate face: zero normal");
  const double w1 = (p3 - p2).cross(p - p2).dot(n) / n2;
  const double w2 = (p1 - p3).cross(p - p3).dot(n) / n2;
  return {w1, w2, 1.0 - w1 - w2};
}

/// Interpolated feature vector at a point in (or near) the plane of a face.
inline Eigen::VectorXd barycentric_interpolate(const SphericalMesh& mesh, const FeatureMap& feat,
                                               std::size_t face, const Vec3& point) {
  if (face >= mesh.face_count()) throw ShapeError("face index out of range");
  const auto w = area_weights(mesh.corner(face, 0), mesh.corner(face, 1), mesh.corner(face, 2), point);
  const Face& f = mesh.faces()[face];
  return w[0] * feat.values.row(f[0]).transpose() + w[1] * feat.values.row(f[1]).transpose() +
         w[2] * feat.values.row(f[2]).transpose();
}

// ---------------------------------------------------------------------------
// Sampling

/// Uniform draw from the standard 2-simplex (sorted-uniform spacings).
template <class URBG>
std::array<double, 3> sample_simplex(URBG& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  double v = unit(rng);
  if (u > v) std::swap(u, v);
  return {u, v - u, 1.0 - v};
}

struct BarycentricSample {
  std::size_t face_index = 0;
  std::array<double, 3> weights{};
  Vec3 planar_point = Vec3::Zero();
  UnitPoint sphere_point;
};

struct TrainingSample {
  BarycentricSample sample;
  Eigen::VectorXd target;
};

enum class FaceSampling { area_weighted, uniform };

/// Draws faces from a mesh, by planar area or uniformly.
class FaceSampler {
 public:
  FaceSampler(const SphericalMesh& mesh, FaceSampling mode) : mode_(mode), count_(mesh.face_count()) {
    if (mesh.empty()) throw InputError("cannot sample faces of an empty mesh");
    if (mode_ == FaceSampling::area_weighted) {
      cumulative_.resize(count_);
      double acc = 0.0;
      for (std::size_t f = 0; f < count_; ++f) {
        acc += mesh.face_area(f);
        cumulative_[f] = acc;
      }
    }
  }

  template <class URBG>
  std::size_t draw(URBG& rng) const {
    if (mode_ == FaceSampling::uniform) {
      std::uniform_int_distribution<std::size_t> pick(0, count_ - 1);
      return pick(rng);
    }
    std::uniform_real_distribution<double> unit(0.0, cumulative_.back());
    const double u = unit(rng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), count_ - 1);
  }

 private:
  FaceSampling mode_;
  std::size_t count_;
  std::vector<double> cumulative_;
};

/// Draws `n_faces` faces and `n_points` simplex points on each. Targets are
/// interpolated at the planar point; the network input is its projection.
template <class URBG>
std::vector<TrainingSample> sample_faces_and_points(const SphericalMesh& mesh, const FeatureMap& feat,
                                                    int n_faces, int n_points, URBG& rng,
                                                    FaceSampling mode = FaceSampling::area_weighted) {
  if (n_faces < 1 || n_points < 1) throw InputError("n_faces and n_points must be >= 1");
  feat.check_matches(mesh);
  const FaceSampler sampler(mesh, mode);
  std::vector<TrainingSample> out;
  out.reserve(static_cast<std::size_t>(n_faces) * static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_faces; ++i) {
    const std::size_t f = sampler.draw(rng);
    for (int j = 0; j < n_points; ++j) {
      const auto w = sample_simplex(rng);
      BarycentricSample s;
      s.face_index = f;
      s.weights = w;
      s.planar_point = w[0] * mesh.corner(f, 0) + w[1] * mesh.corner(f, 1) + w[2] * mesh.corner(f, 2);
      s.sphere_point = UnitPoint(s.planar_point);
      Eigen::VectorXd target = barycentric_interpolate(mesh, feat, f, s.planar_point);
      out.push_back({s, std::move(target)});
    }
  }
  return out;
}

/// i.i.d. uniform points (normalized Gaussian vectors).
template <class URBG>
std::vector<UnitPoint> sample_sphere_uniform(std::size_t n, URBG& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<UnitPoint> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    if (v.squaredNorm() < 1e-24) continue;
    pts.emplace_back(v);
  }
  return pts;
}

/// Deterministic Fibonacci lattice.
inline std::vector<UnitPoint> sample_sphere_fibonacci(std::size_t n) {
  std::vector<UnitPoint> pts;
  pts.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Icosphere

/// Icosahedron subdivided `level` times, vertices projected to the sphere.
/// Faces are counter-clockwise seen from outside.
inline SphericalMesh make_icosphere(int level) {
  if (level < 0 || level > 7) throw InputError("icosphere level must be in [0, 7]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> midpoint;
    auto mid = [&](std::int32_t a, std::int32_t b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const auto idx = static_cast<std::int32_t>(v.size() - 1);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const auto a = mid(f[0], f[1]);
      const auto b = mid(f[1], f[2]);
      const auto c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  std::vector<UnitPoint> verts;
  verts.reserve(v.size());
  for (const auto& p : v) verts.emplace_back(p);
  return SphericalMesh(std::move(verts), std::move(faces));
}

}  // namespace ncmap
