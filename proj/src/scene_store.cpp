#include "mustr/scene_store.hpp"

#include <algorithm>
#include <cmath>

namespace mustr {

void KdTree3::build(const std::vector<Eigen::Vector3d>& pts) {
  nodes_.clear();
  root_ = -1;
  if (pts.empty()) return;
  nodes_.reserve(pts.size());
  std::vector<Eigen::Vector3d> work = pts;
  root_ = build_range(work, 0, static_cast<int>(work.size()));
}

int KdTree3::build_range(std::vector<Eigen::Vector3d>& pts, int lo, int hi) {
  if (lo >= hi) return -1;
  Eigen::Vector3d mn = pts[lo], mx = pts[lo];
  for (int i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(pts[i]);
    mx = mx.cwiseMax(pts[i]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(pts.begin() + lo, pts.begin() + mid, pts.begin() + hi,
                   [axis](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
                     return a[axis] < b[axis];
                   });
  const int idx = static_cast<int>(nodes_.size());
  nodes_.push_back({pts[mid], axis, -1, -1});
  const int left = build_range(pts, lo, mid);
  const int right = build_range(pts, mid + 1, hi);
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  return idx;
}

double KdTree3::nearest_sq(const Eigen::Vector3d& q) const {
  double best = std::numeric_limits<double>::infinity();
  if (root_ >= 0) search(root_, q, best);
  return best;
}

void KdTree3::search(int node, const Eigen::Vector3d& q, double& best) const {
  const Node& n = nodes_[node];
  best = std::min(best, (n.pt - q).squaredNorm());
  const double delta = q[n.axis] - n.pt[n.axis];
  const int near = delta < 0.0 ? n.left : n.right;
  const int far = delta < 0.0 ? n.right : n.left;
  if (near >= 0) search(near, q, best);
  if (far >= 0 && delta * delta < best) search(far, q, best);
}

int octant_index(const Eigen::Vector3d& dir) {
  if (!(dir.norm() > 0.0)) throw ContractError("octant_index: zero direction");
  return (dir.x() < 0.0 ? 1 : 0) + (dir.y() < 0.0 ? 2 : 0) + (dir.z() < 0.0 ? 4 : 0);
}

void SceneStore::insert(const std::vector<Eigen::Vector3d>& points,
                        const std::vector<Eigen::Vector3d>& rays) {
  if (points.size() != rays.size()) throw ContractError("scene insert: points/rays length mismatch");
  for (std::size_t i = 0; i < points.size(); ++i) {
    Octant& o = octants_[octant_index(rays[i])];
    o.pts.push_back(points[i]);
    o.rays.push_back(rays[i]);
  }
  for (Octant& o : octants_) {
    const std::size_t pending = o.pts.size() - o.built;
    if (pending == 0) continue;
    if (o.built == 0 || pending * 2 >= o.built) {
      o.tree.build(o.pts);
      o.built = o.pts.size();
    }
  }
}

std::vector<double> SceneStore::nearest_normalized(const std::vector<Eigen::Vector3d>& points,
                                                   const std::vector<Eigen::Vector3d>& rays,
                                                   const std::vector<double>& depths) const {
  if (points.size() != rays.size() || points.size() != depths.size())
    throw ContractError("nearest_normalized: input length mismatch");
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(depths[i] > 0.0)) throw ContractError("nearest_normalized: non-positive depth");
    const Octant& o = octants_[octant_index(rays[i])];
    double best = o.tree.nearest_sq(points[i]);
    for (std::size_t j = o.built; j < o.pts.size(); ++j)
      best = std::min(best, (o.pts[j] - points[i]).squaredNorm());
    out[i] = std::isinf(best) ? best : std::sqrt(best) / depths[i];
  }
  return out;
}

std::size_t SceneStore::total() const {
  std::size_t n = 0;
  for (const Octant& o : octants_) n += o.pts.size();
  return n;
}

void SceneStore::dump_ply(std::ostream& os) const {
  os << "ply\nformat ascii 1.0\nelement vertex " << total()
     << "\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float "
        "ny\nproperty float nz\nend_header\n";
  for (const Octant& o : octants_)
    for (std::size_t i = 0; i < o.pts.size(); ++i) {
      const auto& p = o.pts[i];
      const auto& r = o.rays[i];
      os << static_cast<float>(p.x()) << " " << static_cast<float>(p.y()) << " "
         << static_cast<float>(p.z()) << " " << static_cast<float>(r.x()) << " "
         << static_cast<float>(r.y()) << " " << static_cast<float>(r.z()) << "\n";
    }
}

double discovery_rate(const std::vector<double>& normalized_distances, double percentile) {
  if (normalized_distances.empty()) throw ContractError("discovery_rate: empty input");
  if (!(percentile > 0.0 && percentile < 100.0))
    throw ContractError("discovery_rate: percentile must lie in (0,100)");
  std::vector<double> sorted = normalized_distances;
  std::sort(sorted.begin(), sorted.end());  // +inf sorts last
  const std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::min(std::max<std::size_t>(rank, 1), n);
  return sorted[rank - 1];
}

}  // namespace mustr
