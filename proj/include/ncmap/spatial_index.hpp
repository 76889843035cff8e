#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ncmap/geometry.hpp"

namespace ncmap {

/// Static 3-d tree over a point cloud, supporting k-nearest-neighbour queries.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Indices of the k nearest points, closest first.
  template <std::size_t K>
  std::size_t nearest(const Vec3& q, std::array<std::uint32_t, K>& out, std::size_t k = K) const {
    k = std::min({k, K, points_.size()});
    std::array<std::pair<double, std::uint32_t>, K> heap{};
    std::size_t count = 0;
    if (k == 0) return 0;
    search<K>(0, q, heap.data(), count, k);
    std::sort_heap(heap.begin(), heap.begin() + static_cast<std::ptrdiff_t>(count));
    for (std::size_t i = 0; i < count; ++i) out[i] = heap[i].second;
    return count;
  }

 private:
  static constexpr std::uint32_t kLeafSize = 8;

  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (auto i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = points_[order_[mid]][axis];
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  template <std::size_t K>
  void search(std::int32_t id, const Vec3& q, std::pair<double, std::uint32_t>* heap, std::size_t& count,
              std::size_t k) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const std::uint32_t idx = order_[i];
        const double d = (points_[idx] - q).squaredNorm();
        if (count < k) {
          heap[count++] = {d, idx};
          std::push_heap(heap, heap + count);
        } else if (d < heap[0].first) {
          std::pop_heap(heap, heap + count);
          heap[count - 1] = {d, idx};
          std::push_heap(heap, heap + count);
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::int32_t first = diff < 0 ? node.left : node.right;
    const std::int32_t second = diff < 0 ? node.right : node.left;
    search<K>(first, q, heap, count, k);
    if (count < k || diff * diff < heap[0].first) search<K>(second, q, heap, count, k);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Spatial index over face centroids for point-to-face lookup.
class FaceIndex {
 public:
  FaceIndex() = default;
  explicit FaceIndex(const SphericalMesh& mesh) {
    std::vector<Vec3> centroids;
    centroids.reserve(mesh.face_count());
    for (std::size_t f = 0; f < mesh.face_count(); ++f) centroids.push_back(mesh.face_centroid(f));
    tree_ = KdTree(std::move(centroids));
  }
  const KdTree& tree() const { return tree_; }
  std::size_t face_count() const { return tree_.size(); }

 private:
  KdTree tree_;
};

struct FaceHit {
  std::size_t face_index = 0;
  std::array<double, 3> weights{};
};

namespace detail {

constexpr double kWeightTolerance = 1e-9;

/// Central projection of `q` onto the plane of `face`, if the ray hits it
/// inside the triangle (weights >= -tol).
inline bool ray_hits_face(const SphericalMesh& mesh, std::size_t face, const Vec3& q, FaceHit& hit) {
  const Vec3& p1 = mesh.corner(face, 0);
  const Vec3& p2 = mesh.corner(face, 1);
  const Vec3& p3 = mesh.corner(face, 2);
  const Vec3 n = (p2 - p1).cross(p3 - p1);
  const double nq = n.dot(q);
  const double np = n.dot(p1);
  if (nq == 0.0 || (nq > 0.0) != (np > 0.0)) return false;
  const Vec3 x = (np / nq) * q;
  auto w = signed_barycentric(p1, p2, p3, x);
  if (w[0] < -kWeightTolerance || w[1] < -kWeightTolerance || w[2] < -kWeightTolerance) return false;
  double sum = 0.0;
  for (double& wi : w) {
    wi = std::max(wi, 0.0);
    sum += wi;
  }
  for (double& wi : w) wi /= sum;
  hit.face_index = face;
  hit.weights = w;
  return true;
}

}  // namespace detail

/// Face whose central projection contains `query`, with the barycentric
/// weights of the ray/plane intersection. Checks centroid-nearest candidates
/// first, then every face.
inline FaceHit locate_face(const SphericalMesh& mesh, const UnitPoint& query, const FaceIndex& index) {
  if (index.face_count() != mesh.face_count()) throw ShapeError("face index was built for another mesh");
  const Vec3& q = query.vec();
  FaceHit hit;
  std::array<std::uint32_t, 16> cand{};
  std::size_t done = 0;
  for (std::size_t k : {std::size_t{4}, std::size_t{16}}) {
    const std::size_t got = index.tree().nearest(q, cand, k);
    for (std::size_t i = done; i < got; ++i) {
      if (detail::ray_hits_face(mesh, cand[i], q, hit)) return hit;
    }
    done = got;
  }
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    if (detail::ray_hits_face(mesh, f, q, hit)) return hit;
  }
  throw MeshNotClosed("no face contains the query direction; the mesh is not closed");
}

}  // namespace ncmap
