#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"

namespace ncmap {

using Quat = Eigen::Vector4d;  // (w, x, y, z)

namespace detail {

inline Quat quat_mul(const Quat& a, const Quat& b) {
  return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Homogeneous quadratic form of the rotation matrix; equals the rotation for
/// unit q.
inline Mat3 quat_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),    //
      2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return r;
}

/// Partial derivatives of quat_matrix with respect to (w, x, y, z).
inline std::array<Mat3, 4> quat_matrix_partials(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << w, -z, y, z, w, -x, -y, x, w;
  d[1] << x, y, z, y, -x, -w, z, w, -x;
  d[2] << -y, x, w, x, y, z, -w, z, -y;
  d[3] << -z, -w, x, w, -z, y, x, y, z;
  for (auto& m : d) m *= 2.0;
  return d;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace detail

/// Element of SO(3) stored as a unit quaternion with w >= 0.
class Rotation {
 public:
  Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}

  static Rotation from_quaternion(const Quat& q) {
    const double n = q.norm();
    if (!(n >= 1e-12) || !std::isfinite(n)) {
      throw DegenerateParameter("quaternion norm below 1e-12 cannot define a rotation");
    }
    Rotation r;
    r.q_ = q / n;
    r.canonicalize();
    return r;
  }
  static Rotation from_quaternion(double w, double x, double y, double z) {
    return from_quaternion(Quat(w, x, y, z));
  }
  /// Rotation by `angle` radians about `axis` (need not be unit).
  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (!(n > 0.0)) return Rotation();
    const Vec3 u = axis / n;
    return from_quaternion(Quat(std::cos(angle / 2), std::sin(angle / 2) * u.x(),
                                std::sin(angle / 2) * u.y(), std::sin(angle / 2) * u.z()));
  }

  const Quat& quaternion() const { return q_; }
  double w() const { return q_[0]; }
  double x() const { return q_[1]; }
  double y() const { return q_[2]; }
  double z() const { return q_[3]; }

  Mat3 matrix() const { return detail::quat_matrix(q_); }
  Rotation inverse() const { return from_quaternion(Quat(q_[0], -q_[1], -q_[2], -q_[3])); }

  /// Rotation angle in [0, pi].
  double angle() const { return 2.0 * std::atan2(q_.tail<3>().norm(), std::abs(q_[0])); }

  Vec3 apply(const Vec3& p) const {
    const Vec3 v = q_.tail<3>();
    const Vec3 t = 2.0 * v.cross(p);
    return p + q_[0] * t + v.cross(t);
  }
  UnitPoint apply(const UnitPoint& p) const { return UnitPoint(apply(p.vec())); }

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    return from_quaternion(detail::quat_mul(a.q_, b.q_));
  }

 private:
  void canonicalize() {
    for (int i = 0; i < 4; ++i) {
      if (q_[i] != 0.0) {
        if (q_[i] < 0.0) q_ = -q_;
        return;
      }
    }
  }

  Quat q_;
};

/// Bi-invariant quaternion distance arccos(|q1 . q2|), radians in [0, pi/2].
inline double dist_R(const Rotation& a, const Rotation& b) {
  const double d = std::clamp(std::abs(a.quaternion().dot(b.quaternion())), -1.0, 1.0);
  return std::acos(d);
}

constexpr double deg(double radians) { return radians * 180.0 / std::numbers::pi; }
constexpr double rad(double degrees) { return degrees * std::numbers::pi / 180.0; }

// ---------------------------------------------------------------------------
// Parametrizations

enum class Parametrization { quaternion, axis_angle, euler_zyx, six_d };

inline int param_size(Parametrization p) {
  switch (p) {
    case Parametrization::quaternion: return 4;
    case Parametrization::axis_angle: return 3;
    case Parametrization::euler_zyx: return 3;
    case Parametrization::six_d: return 6;
  }
  return 0;
}

inline std::string_view to_string(Parametrization p) {
  switch (p) {
    case Parametrization::quaternion: return "quaternion";
    case Parametrization::axis_angle: return "axis_angle";
    case Parametrization::euler_zyx: return "euler";
    case Parametrization::six_d: return "six_d";
  }
  return "?";
}

inline Parametrization parse_parametrization(std::string_view s) {
  if (s == "quaternion" || s == "quat") return Parametrization::quaternion;
  if (s == "axis_angle" || s == "axis-angle") return Parametrization::axis_angle;
  if (s == "euler" || s == "euler_zyx") return Parametrization::euler_zyx;
  if (s == "six_d" || s == "6d") return Parametrization::six_d;
  throw InputError("unknown parametrization '" + std::string(s) + "'");
}

using ParamVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 6, 1>;

/// Raw rotation parameters:
///   quaternion  (w, x, y, z), normalized on use
///   axis_angle  rotation vector (angle * axis)
///   euler_zyx   (yaw about z, pitch about y, roll about x), R = Rz * Ry * Rx
///   six_d       two 3-vectors, Gram-Schmidt into the first two matrix columns
struct RotationParams {
  Parametrization kind = Parametrization::quaternion;
  ParamVector values = ParamVector::Zero(4);

  RotationParams() { values[0] = 1.0; }
  RotationParams(Parametrization k, ParamVector v) : kind(k), values(std::move(v)) {
    if (values.size() != param_size(kind)) throw ShapeError("parameter vector has wrong size");
  }
  int size() const { return static_cast<int>(values.size()); }
};

namespace detail {

inline Quat axis_angle_quat(const Vec3& v) {
  const double theta = v.norm();
  const double s = theta < 1e-4 ? 0.5 - theta * theta / 48.0 : std::sin(theta / 2) / theta;
  return Quat(std::cos(theta / 2), s * v.x(), s * v.y(), s * v.z());
}

/// d q / d v for the exponential map (4 x 3).
inline Eigen::Matrix<double, 4, 3> axis_angle_quat_jacobian(const Vec3& v) {
  const double theta = v.norm();
  double s, ds_over_theta;
  if (theta < 1e-4) {
    s = 0.5 - theta * theta / 48.0;
    ds_over_theta = -1.0 / 24.0 + theta * theta / 960.0;
  } else {
    s = std::sin(theta / 2) / theta;
    ds_over_theta = (0.5 * std::cos(theta / 2) * theta - std::sin(theta / 2)) / (theta * theta * theta);
  }
  Eigen::Matrix<double, 4, 3> j;
  j.row(0) = -0.5 * s * v.transpose();  // d cos(theta/2) = -sin(theta/2)/2 * v/theta
  j.bottomRows<3>() = s * Mat3::Identity() + ds_over_theta * v * v.transpose();
  return j;
}

inline Quat euler_quat(double yaw, double pitch, double roll) {
  const Quat qz(std::cos(yaw / 2), 0, 0, std::sin(yaw / 2));
  const Quat qy(std::cos(pitch / 2), 0, std::sin(pitch / 2), 0);
  const Quat qx(std::cos(roll / 2), std::sin(roll / 2), 0, 0);
  return quat_mul(quat_mul(qz, qy), qx);
}

inline Eigen::Matrix<double, 4, 3> euler_quat_jacobian(double yaw, double pitch, double roll) {
  const Quat qz(std::cos(yaw / 2), 0, 0, std::sin(yaw / 2));
  const Quat qy(std::cos(pitch / 2), 0, std::sin(pitch / 2), 0);
  const Quat qx(std::cos(roll / 2), std::sin(roll / 2), 0, 0);
  const Quat dz(-std::sin(yaw / 2) / 2, 0, 0, std::cos(yaw / 2) / 2);
  const Quat dy(-std::sin(pitch / 2) / 2, 0, std::cos(pitch / 2) / 2, 0);
  const Quat dx(-std::sin(roll / 2) / 2, std::cos(roll / 2) / 2, 0, 0);
  Eigen::Matrix<double, 4, 3> j;
  j.col(0) = quat_mul(quat_mul(dz, qy), qx);
  j.col(1) = quat_mul(quat_mul(qz, dy), qx);
  j.col(2) = quat_mul(quat_mul(qz, qy), dx);
  return j;
}

struct SixDFrame {
  Vec3 b1, b2, b3;
  double n1, nu;
  Vec3 u;
};

inline SixDFrame six_d_frame(const ParamVector& v) {
  const Vec3 a1 = v.head<3>();
  const Vec3 a2 = v.tail<3>();
  SixDFrame f;
  f.n1 = a1.norm();
  if (!(f.n1 > 1e-12)) throw DegenerateParameter("6D first vector has norm below 1e-12");
  f.b1 = a1 / f.n1;
  f.u = a2 - f.b1.dot(a2) * f.b1;
  f.nu = f.u.norm();
  if (!(f.nu > 1e-12)) throw DegenerateParameter("6D vectors are parallel");
  f.b2 = f.u / f.nu;
  f.b3 = f.b1.cross(f.b2);
  return f;
}

}  // namespace detail

inline Rotation to_rotation(const RotationParams& p) {
  if (!p.values.allFinite()) throw DegenerateParameter("non-finite rotation parameters");
  switch (p.kind) {
    case Parametrization::quaternion:
      return Rotation::from_quaternion(Quat(p.values[0], p.values[1], p.values[2], p.values[3]));
    case Parametrization::axis_angle:
      return Rotation::from_quaternion(detail::axis_angle_quat(p.values.head<3>()));
    case Parametrization::euler_zyx:
      return Rotation::from_quaternion(detail::euler_quat(p.values[0], p.values[1], p.values[2]));
    case Parametrization::six_d: {
      const auto f = detail::six_d_frame(p.values);
      Mat3 r;
      r.col(0) = f.b1;
      r.col(1) = f.b2;
      r.col(2) = f.b3;
      Eigen::Quaterniond q(r);
      return Rotation::from_quaternion(Quat(q.w(), q.x(), q.y(), q.z()));
    }
  }
  throw InputError("unknown parametrization");
}

inline Rotation from_euler_zyx(double yaw, double pitch, double roll) {
  return Rotation::from_quaternion(detail::euler_quat(yaw, pitch, roll));
}

/// Parameters of `r` in the requested parametrization. Axis-angle returns the
/// representative with angle in [0, pi]; Euler pitch lies in [-pi/2, pi/2].
inline RotationParams from_rotation(const Rotation& r, Parametrization kind) {
  ParamVector v(param_size(kind));
  switch (kind) {
    case Parametrization::quaternion:
      v = r.quaternion();
      break;
    case Parametrization::axis_angle: {
      const Vec3 im = r.quaternion().tail<3>();
      const double s = im.norm();
      const double w = r.w();
      const double theta = 2.0 * std::atan2(s, w);
      const double scale = s < 1e-8 ? 2.0 / w * (1.0 - s * s / (3.0 * w * w)) : theta / s;
      v = scale * im;
      break;
    }
    case Parametrization::euler_zyx: {
      const Mat3 m = r.matrix();
      v[0] = std::atan2(m(1, 0), m(0, 0));
      v[1] = std::asin(std::clamp(-m(2, 0), -1.0, 1.0));
      v[2] = std::atan2(m(2, 1), m(2, 2));
      break;
    }
    case Parametrization::six_d: {
      const Mat3 m = r.matrix();
      v.head<3>() = m.col(0);
      v.tail<3>() = m.col(1);
      break;
    }
  }
  return RotationParams(kind, v);
}

/// dR/dtheta_k for every parameter, through the whole construction used by
/// to_rotation (normalization, exponential map, Gram-Schmidt).
inline std::vector<Mat3> rotation_matrix_jacobian(const RotationParams& p) {
  std::vector<Mat3> out(static_cast<std::size_t>(p.size()));
  auto from_quat_chain = [&](const Quat& q, const Eigen::Matrix<double, 4, Eigen::Dynamic>& dq) {
    const auto partials = detail::quat_matrix_partials(q);
    for (int k = 0; k < p.size(); ++k) {
      Mat3 m = Mat3::Zero();
      for (int j = 0; j < 4; ++j) m += partials[static_cast<std::size_t>(j)] * dq(j, k);
      out[static_cast<std::size_t>(k)] = m;
    }
  };
  switch (p.kind) {
    case Parametrization::quaternion: {
      const Quat raw(p.values[0], p.values[1], p.values[2], p.values[3]);
      const double n = raw.norm();
      if (!(n > 1e-12)) throw DegenerateParameter("quaternion norm below 1e-12");
      const Quat q = raw / n;
      const Eigen::Matrix4d proj = (Eigen::Matrix4d::Identity() - q * q.transpose()) / n;
      from_quat_chain(q, proj);
      break;
    }
    case Parametrization::axis_angle: {
      const Vec3 v = p.values.head<3>();
      from_quat_chain(detail::axis_angle_quat(v), detail::axis_angle_quat_jacobian(v));
      break;
    }
    case Parametrization::euler_zyx: {
      const double y = p.values[0], pi = p.values[1], r = p.values[2];
      from_quat_chain(detail::euler_quat(y, pi, r), detail::euler_quat_jacobian(y, pi, r));
      break;
    }
    case Parametrization::six_d: {
      const auto f = detail::six_d_frame(p.values);
      const Vec3 a2 = p.values.tail<3>();
      const Mat3 I = Mat3::Identity();
      const Mat3 db1_da1 = (I - f.b1 * f.b1.transpose()) / f.n1;
      const Mat3 du_db1 = -f.b1.dot(a2) * I - f.b1 * a2.transpose();
      const Mat3 du_da2 = I - f.b1 * f.b1.transpose();
      const Mat3 db2_du = (I - f.b2 * f.b2.transpose()) / f.nu;
      const Mat3 db2_da1 = db2_du * du_db1 * db1_da1;
      const Mat3 db2_da2 = db2_du * du_da2;
      const Mat3 db3_da1 = -detail::skew(f.b2) * db1_da1 + detail::skew(f.b1) * db2_da1;
      const Mat3 db3_da2 = detail::skew(f.b1) * db2_da2;
      for (int k = 0; k < 3; ++k) {
        Mat3 m1, m2;
        m1.col(0) = db1_da1.col(k);
        m1.col(1) = db2_da1.col(k);
        m1.col(2) = db3_da1.col(k);
        m2.col(0) = Vec3::Zero();
        m2.col(1) = db2_da2.col(k);
        m2.col(2) = db3_da2.col(k);
        out[static_cast<std::size_t>(k)] = m1;
        out[static_cast<std::size_t>(k + 3)] = m2;
      }
      break;
    }
  }
  return out;
}

using PointJacobian = Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, 6>;

/// d(R(theta) p)/dtheta, 3 x dim(theta).
inline PointJacobian rotate_point_jacobian(const RotationParams& params, const Vec3& p) {
  const auto dr = rotation_matrix_jacobian(params);
  PointJacobian j(3, params.size());
  for (int k = 0; k < params.size(); ++k) j.col(k) = dr[static_cast<std::size_t>(k)] * p;
  return j;
}

/// Projects quaternion parameters back to unit norm; other kinds untouched.
inline void renormalize(RotationParams& p) {
  if (p.kind == Parametrization::quaternion) {
    const double n = p.values.norm();
    if (n > 1e-12) p.values /= n;
  }
}

// ---------------------------------------------------------------------------
// Sampling

enum class RotationSampler {
  axis_angle_uniform,  ///< angle ~ U[0, 2pi], axis = normalized Gaussian vector
  haar,              ///< normalized 4-d Gaussian quaternion
};

inline std::string_view to_string(RotationSampler s) {
  return s == RotationSampler::haar ? "haar" : "axis_angle_uniform";
}

inline RotationSampler parse_sampler(std::string_view s) {
  if (s == "haar") return RotationSampler::haar;
  if (s == "axis_angle_uniform" || s == "axis_angle") {
    return RotationSampler::axis_angle_uniform;
  }
  throw InputError("unknown rotation sampler '" + std::string(s) + "'");
}

struct AxisAngleDraw {
  Vec3 axis;
  double angle;
};

template <class URBG>
AxisAngleDraw sample_axis_angle(URBG& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  Vec3 a;
  do {
    a = Vec3(gauss(rng), gauss(rng), gauss(rng));
  } while (a.squaredNorm() < 1e-24);
  return {a.normalized(), angle(rng)};
}

template <class URBG>
Rotation sample_rotation(RotationSampler mode, URBG& rng) {
  if (mode == RotationSampler::axis_angle_uniform) {
    const auto d = sample_axis_angle(rng);
    return Rotation::from_axis_angle(d.axis, d.angle);
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  Quat q;
  do {
    q = Quat(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  } while (q.squaredNorm() < 1e-24);
  return Rotation::from_quaternion(q);
}

}  // namespace ncmap
