#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mustr/geometry.hpp"

namespace mustr {

struct TrajectoryEntry {
  double timestamp = 0.0;  // seconds
  CameraPose pose;
};

// Timestamped camera poses, strictly increasing timestamps.
struct Trajectory {
  std::vector<TrajectoryEntry> entries;

  std::size_t size() const { return entries.size(); }
  void append(double t, const CameraPose& pose);
};

enum class AlignMode { Rigid, Similarity };

// TUM interchange format: "timestamp tx ty tz qx qy qz qw", '#' comments.
Trajectory read_tum(std::istream& is, const std::string& source_name = "<stream>");
Trajectory read_tum_file(const std::string& path);
void write_tum(std::ostream& os, const Trajectory& traj);
void write_tum_file(const std::string& path, const Trajectory& traj);

// Nearest-timestamp association within a window (seconds), one-to-one.
std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est,
                                                           const Trajectory& gt,
                                                           double window = 0.02);

// RMSE of positional residuals after aligning est onto gt, in centimeters.
double ate_rmse(const Trajectory& est, const Trajectory& gt, AlignMode align,
                std::vector<double>* residuals_m = nullptr);

// |1 - s| * 100 with s the similarity-alignment scale from est to gt.
double scale_error(const Trajectory& est, const Trajectory& gt);

// |fov(f_est) - fov(f_gt)| in degrees.
double fov_error(double f_est, double f_gt, double image_h);

struct MetricsReport {
  double ate_rmse_cm = 0.0;
  double fov_error_deg = 0.0;
  double scale_error_pct = 0.0;
  double fps = 0.0;
  std::vector<double> residuals_m;  // per associated pose

  double residual_mean_m() const;
  double residual_median_m() const;
};

}  // namespace mustr
