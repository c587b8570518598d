#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <vector>

#include "mustr/error.hpp"

namespace mustr {

enum class PointFrame { LocalCamera, GlobalFrame1 };

// Dense per-pixel 3D points in meters with a validity mask. Double precision:
// pose recovery targets 1e-9 on noiseless input.
struct PointMap {
  int rows = 0;
  int cols = 0;
  std::vector<Eigen::Vector3d> pts;    // rows*cols, row-major
  std::vector<std::uint8_t> valid;     // same length
  PointFrame frame = PointFrame::LocalCamera;

  std::size_t size() const { return pts.size(); }
  const Eigen::Vector3d& at(int r, int c) const { return pts[static_cast<std::size_t>(r) * cols + c]; }
};

// Maps camera coordinates into the reference frame: x_ref = scale * R * x_cam + t.
struct CameraPose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
  CameraPose inverse() const {
    CameraPose inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.conjugate();
    inv.translation = -(inv.scale * (inv.rotation * translation));
    return inv;
  }
  // this ∘ other (apply other first)
  CameraPose compose(const CameraPose& other) const {
    CameraPose out;
    out.scale = scale * other.scale;
    out.rotation = (rotation * other.rotation).normalized();
    out.translation = scale * (rotation * other.translation) + translation;
    return out;
  }
};

// x -> x * log(1+|x|)/|x|, with f(0) = 0.
Eigen::Vector3d log_map(const Eigen::Vector3d& x);

// Robust confidence-weighted pinhole focal from a local pointmap, principal
// point at the image center. Median-initialized Weiszfeld iteration on the
// reprojection residual; needs at least 8 valid pixels in front of the camera.
double estimate_focal(const PointMap& local, const std::vector<double>& conf,
                      int weiszfeld_iters = 10);

// Weighted least-squares similarity (or rigid) alignment dst ~ s R src + t.
// det(R) = +1 always; collinear or undersized inputs raise DegeneracyError.
CameraPose umeyama(const std::vector<Eigen::Vector3d>& src,
                   const std::vector<Eigen::Vector3d>& dst,
                   const std::vector<double>& weights, bool with_scale);

struct PoseEstimate {
  CameraPose pose;  // camera -> frame-1
  double focal = 0.0;
};

// Pose from the transformation between the local and global pointmaps of one
// frame, over confident pixels (absolute threshold, then top 70% by
// confidence). Rigid by default; both maps are metric outputs of one network.
PoseEstimate recover_pose(const PointMap& local, const PointMap& global,
                          const std::vector<double>& conf, double conf_thresh,
                          bool with_scale = false);

// Vertical field of view in degrees for focal f (pixels) and image height H.
double fov_from_focal(double focal_px, double image_h);

}  // namespace mustr
