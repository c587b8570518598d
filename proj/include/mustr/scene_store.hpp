#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include "mustr/error.hpp"

namespace mustr {

// Online gate: a frame is admitted when the p-th percentile of its
// depth-normalized nearest-scene distances exceeds tau_d.
struct GateParams {
  double tau_d = 0.05;
  double percentile = 85.0;

  void validate() const {
    if (!(tau_d > 0.0 && tau_d < 1.0)) throw ContractError("gate: tau_d must lie in (0,1)");
    if (!(percentile > 0.0 && percentile < 100.0))
      throw ContractError("gate: percentile must lie in (0,100)");
  }
};

// Exact 3D nearest-neighbour tree (median split along the widest axis).
class KdTree3 {
 public:
  void build(const std::vector<Eigen::Vector3d>& pts);
  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  // squared distance to the nearest stored point; +inf when empty
  double nearest_sq(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    Eigen::Vector3d pt;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  std::vector<Node> nodes_;
  int root_ = -1;
  int build_range(std::vector<Eigen::Vector3d>& pts, int lo, int hi);
  void search(int node, const Eigen::Vector3d& q, double& best) const;
};

// Index of the viewing-direction octant: bit0(x<0) + 2*bit1(y<0) + 4*bit2(z<0);
// zero components count as non-negative.
int octant_index(const Eigen::Vector3d& dir);

// The accumulated 3D scene, split into eight KD-trees by the observation
// ray's octant. Trees are rebuilt in bulk once an octant grows by >= 50%
// since the last build; fresh points sit in a linear overflow buffer until
// then, so queries stay exact at all times.
class SceneStore {
 public:
  void insert(const std::vector<Eigen::Vector3d>& points,
              const std::vector<Eigen::Vector3d>& rays);

  // Per query: nearest distance within the ray's octant divided by the pixel
  // depth. Empty octants yield +inf.
  std::vector<double> nearest_normalized(const std::vector<Eigen::Vector3d>& points,
                                         const std::vector<Eigen::Vector3d>& rays,
                                         const std::vector<double>& depths) const;

  std::size_t count(int octant) const { return octants_[octant].pts.size(); }
  std::size_t total() const;
  bool empty() const { return total() == 0; }

  // ASCII PLY, ray stored in the normal channel.
  void dump_ply(std::ostream& os) const;

 private:
  struct Octant {
    std::vector<Eigen::Vector3d> pts;   // all points routed here
    std::vector<Eigen::Vector3d> rays;
    KdTree3 tree;                       // over pts[0, built)
    std::size_t built = 0;
  };
  std::array<Octant, 8> octants_;
};

// Nearest-rank percentile of the normalized distances; +inf entries sort last.
double discovery_rate(const std::vector<double>& normalized_distances, double percentile);

}  // namespace mustr
