#include "mustr/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace mustr {

Eigen::Vector3d log_map(const Eigen::Vector3d& x) {
  const double r = x.norm();
  if (r < 1e-300) return Eigen::Vector3d::Zero();
  return x * (std::log1p(r) / r);
}

double estimate_focal(const PointMap& local, const std::vector<double>& conf,
                      int weiszfeld_iters) {
  if (conf.size() != local.size())
    throw ContractError("estimate_focal: confidence size mismatch");
  const double cx = (local.cols - 1) * 0.5;
  const double cy = (local.rows - 1) * 0.5;

  struct Obs {
    Eigen::Vector2d p;  // pixel offset from principal point
    Eigen::Vector2d q;  // (x/z, y/z)
    double w;
  };
  std::vector<Obs> obs;
  std::vector<double> per_pixel_f;
  obs.reserve(local.size());
  for (int r = 0; r < local.rows; ++r)
    for (int c = 0; c < local.cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * local.cols + c;
      if (!local.valid[i]) continue;
      const Eigen::Vector3d& x = local.pts[i];
      if (!(x.z() > 0.0)) continue;
      Obs o;
      o.p = Eigen::Vector2d(c - cx, r - cy);
      o.q = Eigen::Vector2d(x.x() / x.z(), x.y() / x.z());
      o.w = std::max(conf[i], 0.0);
      const double qn = o.q.norm();
      if (qn > 1e-9) per_pixel_f.push_back(o.p.norm() / qn);
      obs.push_back(o);
    }
  if (obs.size() < 8 || per_pixel_f.empty())
    throw DegeneracyError("estimate_focal: fewer than 8 valid pixels with positive depth");

  std::nth_element(per_pixel_f.begin(), per_pixel_f.begin() + per_pixel_f.size() / 2,
                   per_pixel_f.end());
  double f = per_pixel_f[per_pixel_f.size() / 2];

  for (int it = 0; it < weiszfeld_iters; ++it) {
    double num = 0.0, den = 0.0;
    for (const auto& o : obs) {
      const double d = std::max((o.p - f * o.q).norm(), 1e-12);
      const double w = o.w / d;
      num += w * o.p.dot(o.q);
      den += w * o.q.squaredNorm();
    }
    if (den <= 0.0) break;
    f = num / den;
  }
  if (!(f > 0.0)) throw DegeneracyError("estimate_focal: non-positive focal estimate");
  return f;
}

CameraPose umeyama(const std::vector<Eigen::Vector3d>& src,
                   const std::vector<Eigen::Vector3d>& dst,
                   const std::vector<double>& weights, bool with_scale) {
  if (src.size() != dst.size() || (!weights.empty() && weights.size() != src.size()))
    throw ContractError("umeyama: mismatched input lengths");
  const std::size_t n = src.size();
  if (n < 3) throw DegeneracyError("umeyama: need at least 3 correspondences");

  double wsum = 0.0;
  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    mu_s += w * src[i];
    mu_d += w * dst[i];
  }
  if (!(wsum > 0.0)) throw DegeneracyError("umeyama: zero total weight");
  mu_s /= wsum;
  mu_d /= wsum;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const Eigen::Vector3d ds = src[i] - mu_s;
    const Eigen::Vector3d dd = dst[i] - mu_d;
    cov += w * dd * ds.transpose();
    var_s += w * ds.squaredNorm();
  }
  cov /= wsum;
  var_s /= wsum;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (!(d(0) > 0.0) || d(1) <= 1e-12 * d(0))
    throw DegeneracyError("umeyama: rank-deficient covariance (collinear or identical points)");

  Eigen::Vector3d s_diag = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_diag(2) = -1.0;

  CameraPose pose;
  const Eigen::Matrix3d rot =
      svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
  pose.rotation = Eigen::Quaterniond(rot).normalized();
  pose.scale = with_scale ? (d.dot(s_diag) / var_s) : 1.0;
  if (!(pose.scale > 0.0)) throw DegeneracyError("umeyama: non-positive scale");
  pose.translation = mu_d - pose.scale * (rot * mu_s);
  return pose;
}

PoseEstimate recover_pose(const PointMap& local, const PointMap& global,
                          const std::vector<double>& conf, double conf_thresh,
                          bool with_scale) {
  if (local.rows != global.rows || local.cols != global.cols)
    throw ContractError("recover_pose: pointmap resolution mismatch");
  if (conf.size() != local.size()) throw ContractError("recover_pose: confidence size mismatch");

  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < local.size(); ++i)
    if (local.valid[i] && global.valid[i] && conf[i] > conf_thresh) sel.push_back(i);
  if (sel.size() < 3)
    throw DegeneracyError("recover_pose: not enough confident pixels above threshold");

  // keep the top 70% most confident of the selected pixels
  std::vector<double> cvals;
  cvals.reserve(sel.size());
  for (std::size_t i : sel) cvals.push_back(conf[i]);
  const std::size_t kth = cvals.size() - (cvals.size() * 7 + 9) / 10;  // 30th percentile index
  std::nth_element(cvals.begin(), cvals.begin() + kth, cvals.end());
  const double cut = cvals[kth];

  std::vector<Eigen::Vector3d> src, dst;
  std::vector<double> w;
  PointMap sub_local;
  sub_local.rows = local.rows;
  sub_local.cols = local.cols;
  sub_local.pts = local.pts;
  sub_local.valid.assign(local.size(), 0);
  std::vector<double> focal_conf(local.size(), 0.0);
  for (std::size_t i : sel) {
    if (conf[i] < cut) continue;
    src.push_back(local.pts[i]);
    dst.push_back(global.pts[i]);
    w.push_back(conf[i]);
    sub_local.valid[i] = 1;
    focal_conf[i] = conf[i];
  }
  if (src.size() < 3) throw DegeneracyError("recover_pose: not enough confident pixels");

  PoseEstimate est;
  est.focal = estimate_focal(sub_local, focal_conf);
  est.pose = umeyama(src, dst, w, with_scale);
  return est;
}

double fov_from_focal(double focal_px, double image_h) {
  if (!(focal_px > 0.0)) throw ContractError("fov_from_focal: focal must be positive");
  return 2.0 * std::atan(image_h / (2.0 * focal_px)) * 180.0 / M_PI;
}

}  // namespace mustr
