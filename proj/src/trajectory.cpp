#include "mustr/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mustr {

void Trajectory::append(double t, const CameraPose& pose) {
  if (!entries.empty() && !(t > entries.back().timestamp))
    throw ContractError("trajectory: timestamps must be strictly increasing");
  entries.push_back({t, pose});
}

Trajectory read_tum(std::istream& is, const std::string& source_name) {
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw DataError(source_name + ":" + std::to_string(lineno) +
                      ": expected 'timestamp tx ty tz qx qy qz qw'");
    std::string extra;
    if (ss >> extra)
      throw DataError(source_name + ":" + std::to_string(lineno) + ": trailing fields");
    CameraPose pose;
    Eigen::Quaterniond q(qw, qx, qy, qz);
    const double n = q.norm();
    if (!(n > 0.0))
      throw DataError(source_name + ":" + std::to_string(lineno) + ": zero quaternion");
    if (std::abs(n - 1.0) > 1e-6)
      std::cerr << "warning: " << source_name << ":" << lineno
                << ": quaternion normalized (|q|=" << n << ")\n";
    pose.rotation = q.normalized();
    pose.translation = Eigen::Vector3d(tx, ty, tz);
    if (!traj.entries.empty() && !(t > traj.entries.back().timestamp))
      throw DataError(source_name + ":" + std::to_string(lineno) +
                      ": timestamps must be strictly increasing");
    traj.entries.push_back({t, pose});
  }
  return traj;
}

Trajectory read_tum_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open trajectory file: " + path);
  return read_tum(f, path);
}

void write_tum(std::ostream& os, const Trajectory& traj) {
  os.precision(12);
  for (const auto& e : traj.entries) {
    const auto& q = e.pose.rotation;
    const auto& t = e.pose.translation;
    os << e.timestamp << " " << t.x() << " " << t.y() << " " << t.z() << " " << q.x() << " "
       << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
}

void write_tum_file(const std::string& path, const Trajectory& traj) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open trajectory file for writing: " + path);
  write_tum(f, traj);
}

std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est,
                                                           const Trajectory& gt, double window) {
  // all candidate pairs within the window, greedily matched by |dt|
  struct Cand {
    double dt;
    std::size_t i, j;
  };
  std::vector<Cand> cands;
  std::size_t j0 = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est.entries[i].timestamp;
    while (j0 < gt.size() && gt.entries[j0].timestamp < t - window) ++j0;
    for (std::size_t j = j0; j < gt.size() && gt.entries[j].timestamp <= t + window; ++j)
      cands.push_back({std::abs(gt.entries[j].timestamp - t), i, j});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::vector<std::uint8_t> used_i(est.size(), 0), used_j(gt.size(), 0);
  for (const auto& c : cands) {
    if (used_i[c.i] || used_j[c.j]) continue;
    used_i[c.i] = used_j[c.j] = 1;
    out.emplace_back(c.i, c.j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

CameraPose align_positions(const Trajectory& est, const Trajectory& gt, AlignMode align,
                           std::vector<Eigen::Vector3d>* est_pts_out,
                           std::vector<Eigen::Vector3d>* gt_pts_out) {
  auto pairs = associate(est, gt);
  if (pairs.size() < 3)
    throw DataError("trajectory association: fewer than 3 matched poses (" +
                    std::to_string(pairs.size()) + ")");
  std::vector<Eigen::Vector3d> pe, pg;
  pe.reserve(pairs.size());
  pg.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    pe.push_back(est.entries[i].pose.translation);
    pg.push_back(gt.entries[j].pose.translation);
  }
  CameraPose T = umeyama(pe, pg, {}, align == AlignMode::Similarity);
  if (est_pts_out) *est_pts_out = std::move(pe);
  if (gt_pts_out) *gt_pts_out = std::move(pg);
  return T;
}

}  // namespace

double ate_rmse(const Trajectory& est, const Trajectory& gt, AlignMode align,
                std::vector<double>* residuals_m) {
  std::vector<Eigen::Vector3d> pe, pg;
  CameraPose T = align_positions(est, gt, align, &pe, &pg);
  double acc = 0.0;
  if (residuals_m) residuals_m->clear();
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const double r = (T.apply(pe[i]) - pg[i]).norm();
    acc += r * r;
    if (residuals_m) residuals_m->push_back(r);
  }
  return std::sqrt(acc / static_cast<double>(pe.size())) * 100.0;
}

double scale_error(const Trajectory& est, const Trajectory& gt) {
  CameraPose T = align_positions(est, gt, AlignMode::Similarity, nullptr, nullptr);
  return std::abs(1.0 - T.scale) * 100.0;
}

double fov_error(double f_est, double f_gt, double image_h) {
  return std::abs(fov_from_focal(f_est, image_h) - fov_from_focal(f_gt, image_h));
}

double MetricsReport::residual_mean_m() const {
  if (residuals_m.empty()) return 0.0;
  double acc = 0.0;
  for (double r : residuals_m) acc += r;
  return acc / static_cast<double>(residuals_m.size());
}

double MetricsReport::residual_median_m() const {
  if (residuals_m.empty()) return 0.0;
  std::vector<double> s = residuals_m;
  std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
  return s[s.size() / 2];
}

}  // namespace mustr
