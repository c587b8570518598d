#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "mustr/geometry.hpp"
#include "mustr/model.hpp"

namespace mustr {

// Binary PPM (P6), maxval up to 65535; values scaled into [0,1].
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

// ASCII PLY of a colored point cloud.
void write_ply_points(std::ostream& os, const std::vector<Eigen::Vector3d>& pts,
                      const std::vector<Eigen::Vector3d>* colors = nullptr);

}  // namespace mustr
