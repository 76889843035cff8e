#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ncmap/geometry.hpp"
#include "ncmap/rotations.hpp"

namespace ncmap {

/// Random band-limited sum of real spherical harmonics of degree 1..L.
/// Each degree carries equal expected power (coefficient variance 1/(2l+1)).
class HarmonicField {
 public:
  HarmonicField() = default;

  template <class URBG>
  HarmonicField(int degree, URBG& rng) : degree_(degree) {
    if (degree < 1) throw InputError("harmonic degree must be >= 1");
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int l = 1; l <= degree; ++l) {
      const double sd = 1.0 / std::sqrt(2.0 * l + 1.0);
      for (int m = -l; m <= l; ++m) coeffs_.push_back(sd * gauss(rng));
    }
  }

  int degree() const { return degree_; }

  double evaluate(const Vec3& p) const {
    const double theta = std::acos(std::clamp(p.z(), -1.0, 1.0));
    const double phi = std::atan2(p.y(), p.x());
    double sum = 0.0;
    std::size_t k = 0;
    for (int l = 1; l <= degree_; ++l) {
      for (int m = -l; m <= l; ++m, ++k) {
        const auto am = static_cast<unsigned>(std::abs(m));
        const double leg = std::sph_legendre(static_cast<unsigned>(l), am, theta);
        double y;
        if (m == 0) {
          y = leg;
        } else if (m > 0) {
          y = std::numbers::sqrt2 * leg * std::cos(m * phi);
        } else {
          y = std::numbers::sqrt2 * leg * std::sin(-m * phi);
        }
        sum += coeffs_[k] * y;
      }
    }
    return sum;
  }

  /// Adds `scale` times another field of the same or lower degree.
  HarmonicField& add(const HarmonicField& other, double scale) {
    if (other.degree_ > degree_) {
      coeffs_.resize(other.coeffs_.size(), 0.0);
      degree_ = other.degree_;
    }
    for (std::size_t i = 0; i < other.coeffs_.size(); ++i) coeffs_[i] += scale * other.coeffs_[i];
    return *this;
  }

 private:
  int degree_ = 0;
  std::vector<double> coeffs_;
};

/// Evaluates `field` at every vertex and standardizes to zero mean and unit
/// (population) variance.
inline Eigen::VectorXd standardized_samples(const HarmonicField& field, const SphericalMesh& mesh) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(mesh.vertex_count()));
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    v[static_cast<Eigen::Index>(i)] = field.evaluate(mesh.vertices()[i].vec());
  }
  v.array() -= v.mean();
  const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
  if (!(sd > 0.0)) throw UndefinedStatistic("synthetic channel has zero variance");
  v /= sd;
  return v;
}

/// Spherical Voronoi parcellation around `n_labels` distinct seed vertices.
template <class URBG>
Parcellation voronoi_parcellation(const SphericalMesh& mesh, int n_labels, URBG& rng) {
  if (n_labels < 2) throw InputError("n_labels must be >= 2");
  if (static_cast<std::size_t>(n_labels) > mesh.vertex_count()) {
    throw InputError("more labels than vertices");
  }
  std::vector<std::size_t> seeds;
  std::uniform_int_distribution<std::size_t> pick(0, mesh.vertex_count() - 1);
  while (seeds.size() < static_cast<std::size_t>(n_labels)) {
    const std::size_t s = pick(rng);
    if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) seeds.push_back(s);
  }
  Parcellation parc;
  parc.labels.resize(mesh.vertex_count());
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3& v = mesh.vertices()[i].vec();
    int best = 0;
    double best_dot = -2.0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const double d = v.dot(mesh.vertices()[seeds[s]].vec());
      if (d > best_dot) {
        best_dot = d;
        best = static_cast<int>(s);
      }
    }
    parc.labels[i] = best;
  }
  for (int l = 0; l < n_labels; ++l) parc.label_names[l] = "region_" + std::to_string(l);
  return parc;
}

struct SynthOptions {
  int level = 5;
  /// One harmonic degree per channel; a single entry applies to every channel.
  std::vector<int> degrees = {4};
  int n_channels = 1;
  int n_labels = 8;
  /// Shared anatomy (fields and parcel seeds).
  std::uint64_t anatomy_seed = 0;
  /// Subject-specific variation; ignored when variation == 0.
  std::uint64_t subject_seed = 0;
  double variation = 0.0;
};

struct SyntheticSubject {
  SphericalMesh mesh;
  FeatureMap features;
  Parcellation parcellation;
  std::vector<HarmonicField> fields;  // un-normalized generating fields
};

inline std::string default_channel_name(int degree, int index) {
  return (degree <= 4 ? std::string("sulc") : std::string("curv")) + std::to_string(index);
}

/// Synthetic cortex: an icosphere carrying band-limited harmonic channels
/// (unit empirical variance) and a Voronoi parcellation.
inline SyntheticSubject synth_subject(const SynthOptions& opt) {
  if (opt.n_channels < 1) throw InputError("n_channels must be >= 1");
  if (opt.degrees.empty()) throw InputError("at least one harmonic degree is required");
  SyntheticSubject s;
  s.mesh = make_icosphere(opt.level);
  Rng anatomy(opt.anatomy_seed);
  Rng subject(opt.subject_seed ^ 0x9E3779B97F4A7C15ULL);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(s.mesh.vertex_count()), opt.n_channels);
  std::vector<std::string> names;
  for (int c = 0; c < opt.n_channels; ++c) {
    const int degree = opt.degrees[std::min<std::size_t>(static_cast<std::size_t>(c), opt.degrees.size() - 1)];
    HarmonicField field(degree, anatomy);
    if (opt.variation != 0.0) field.add(HarmonicField(degree, subject), opt.variation);
    values.col(c) = standardized_samples(field, s.mesh);
    names.push_back(default_channel_name(degree, c));
    s.fields.push_back(std::move(field));
  }
  s.features = FeatureMap(std::move(values), std::move(names));
  s.parcellation = voronoi_parcellation(s.mesh, opt.n_labels, anatomy);
  return s;
}

inline SyntheticSubject synth_subject(int level, int harmonic_degree, int n_f, int n_labels,
                                      std::uint64_t seed) {
  SynthOptions opt;
  opt.level = level;
  opt.degrees = {harmonic_degree};
  opt.n_channels = n_f;
  opt.n_labels = n_labels;
  opt.anatomy_seed = seed;
  return synth_subject(opt);
}

/// Mesh with every vertex rotated by `r` (faces unchanged).
inline SphericalMesh rotate_mesh(const SphericalMesh& mesh, const Rotation& r) {
  std::vector<UnitPoint> verts;
  verts.reserve(mesh.vertex_count());
  for (const auto& v : mesh.vertices()) verts.push_back(r.apply(v));
  return SphericalMesh(std::move(verts), mesh.faces());
}

// ---------------------------------------------------------------------------
// Perturbations

struct Perturbation {
  double roll = 0.0;   ///< about x, radians
  double pitch = 0.0;  ///< about y
  double yaw = 0.0;    ///< about z
  Rotation rotation;
};

/// Intrinsic Z-Y-X composition R = Rz(yaw) Ry(pitch) Rx(roll).
inline Perturbation perturbation_from_angles(double roll, double yaw, double pitch) {
  return {roll, pitch, yaw, from_euler_zyx(yaw, pitch, roll)};
}

/// (roll, yaw, pitch) each uniform in [-max_deg, max_deg] degrees.
template <class URBG>
Perturbation make_perturbation(URBG& rng, double max_deg = 36.0) {
  std::uniform_real_distribution<double> u(-rad(max_deg), rad(max_deg));
  const double roll = u(rng);
  const double yaw = u(rng);
  const double pitch = u(rng);
  return perturbation_from_angles(roll, yaw, pitch);
}

inline Perturbation make_perturbation(std::uint64_t seed, double max_deg = 36.0) {
  Rng rng(seed);
  return make_perturbation(rng, max_deg);
}

}  // namespace ncmap
