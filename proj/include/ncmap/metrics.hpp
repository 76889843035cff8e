#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ncmap/error.hpp"
#include "ncmap/geometry.hpp"
#include "ncmap/rotations.hpp"
#include "ncmap/spatial_index.hpp"

namespace ncmap {

struct ChannelStats {
  double mse = 0.0;
  double pcc = 0.0;
};

/// Sample MSE and Pearson correlation of two equal-length vectors.
inline ChannelStats feature_mse_pcc(const Eigen::VectorXd& fixed, const Eigen::VectorXd& warped) {
  if (fixed.size() != warped.size()) throw ShapeError("feature vectors differ in length");
  if (fixed.size() < 2) throw ShapeError("feature comparison needs at least two values");
  const Eigen::ArrayXd a = fixed.array() - fixed.mean();
  const Eigen::ArrayXd b = warped.array() - warped.mean();
  const double saa = a.square().sum();
  const double sbb = b.square().sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) throw UndefinedStatistic("correlation is undefined for a constant vector");
  ChannelStats s;
  s.mse = (fixed - warped).squaredNorm() / static_cast<double>(fixed.size());
  s.pcc = std::clamp((a * b).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
  return s;
}

/// Column-wise feature_mse_pcc.
inline std::vector<ChannelStats> feature_mse_pcc(const Eigen::MatrixXd& fixed, const Eigen::MatrixXd& warped) {
  if (fixed.rows() != warped.rows() || fixed.cols() != warped.cols()) throw ShapeError("feature matrices differ in shape");
  std::vector<ChannelStats> out;
  for (Eigen::Index c = 0; c < fixed.cols(); ++c) {
    out.push_back(feature_mse_pcc(Eigen::VectorXd(fixed.col(c)), Eigen::VectorXd(warped.col(c))));
  }
  return out;
}

/// Dice overlap of two labelings. Macro: unweighted mean over labels present
/// in either labeling. Micro: pooled over labels, which equals the fraction
/// of agreeing vertices.
inline double dice_score(const std::vector<int>& a, const std::vector<int>& b, bool micro = false) {
  if (a.size() != b.size()) throw ShapeError("labelings differ in length");
  if (a.empty()) throw ShapeError("empty labelings");
  struct Count {
    std::size_t in_a = 0, in_b = 0, both = 0;
  };
  std::map<int, Count> counts;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++counts[a[i]].in_a;
    ++counts[b[i]].in_b;
    if (a[i] == b[i]) ++counts[a[i]].both;
  }
  if (micro) {
    std::size_t both = 0;
    for (const auto& [label, c] : counts) both += c.both;
    return static_cast<double>(both) / static_cast<double>(a.size());
  }
  double sum = 0.0;
  for (const auto& [label, c] : counts) {
    sum += 2.0 * static_cast<double>(c.both) / static_cast<double>(c.in_a + c.in_b);
  }
  return sum / static_cast<double>(counts.size());
}

/// Labels for every subject vertex: the vertex is rotated by `rotation`,
/// located on the template, and takes the label of the face corner with the
/// largest barycentric weight.
inline std::vector<int> transfer_labels(const SphericalMesh& template_mesh, const Parcellation& template_parc,
                                        const FaceIndex& index, const SphericalMesh& subject_mesh,
                                        const Rotation& rotation) {
  if (template_parc.labels.size() != template_mesh.vertex_count()) {
    throw ShapeError("parcellation length does not match the template mesh");
  }
  std::vector<int> out;
  out.reserve(subject_mesh.vertex_count());
  for (const auto& v : subject_mesh.vertices()) {
    const FaceHit hit = locate_face(template_mesh, rotation.apply(v), index);
    const auto k = static_cast<std::size_t>(std::max_element(hit.weights.begin(), hit.weights.end()) - hit.weights.begin());
    out.push_back(template_parc.labels[static_cast<std::size_t>(template_mesh.faces()[hit.face_index][k])]);
  }
  return out;
}

inline std::vector<int> transfer_labels(const SphericalMesh& template_mesh, const Parcellation& template_parc,
                                        const SphericalMesh& subject_mesh, const Rotation& rotation) {
  return transfer_labels(template_mesh, template_parc, FaceIndex(template_mesh), subject_mesh, rotation);
}

struct AlignmentReport {
  std::vector<ChannelStats> channels;
  double dice = 0.0;
  std::optional<double> rotation_error_deg;
  double seconds = 0.0;

  double mean_mse() const {
    double s = 0.0;
    for (const auto& c : channels) s += c.mse;
    return channels.empty() ? 0.0 : s / static_cast<double>(channels.size());
  }
  double mean_pcc() const {
    double s = 0.0;
    for (const auto& c : channels) s += c.pcc;
    return channels.empty() ? 0.0 : s / static_cast<double>(channels.size());
  }
};

}  // namespace ncmap
