#include "mustr/io.hpp"

#include <fstream>
#include <ostream>

namespace mustr {

namespace {

// next whitespace-delimited token, skipping '#' comments
std::string ppm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError(path + ": truncated PPM header");
  return tok;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image: " + path);
  if (ppm_token(f, path) != "P6") throw DataError(path + ": not a binary PPM (P6) file");
  Image img;
  try {
    img.w = std::stoi(ppm_token(f, path));
    img.h = std::stoi(ppm_token(f, path));
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PPM dimensions");
  }
  const int maxval = std::stoi(ppm_token(f, path));
  if (img.w <= 0 || img.h <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError(path + ": unsupported PPM header");
  const std::size_t n = static_cast<std::size_t>(img.w) * img.h * 3;
  img.rgb.resize(n);
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw DataError(path + ": truncated PPM data");
    for (std::size_t i = 0; i < n; ++i) img.rgb[i] = static_cast<float>(buf[i]) / maxval;
  } else {
    std::vector<unsigned char> buf(n * 2);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
    if (static_cast<std::size_t>(f.gcount()) != n * 2) throw DataError(path + ": truncated PPM data");
    for (std::size_t i = 0; i < n; ++i) {
      const int v = buf[2 * i] << 8 | buf[2 * i + 1];  // big-endian per spec
      img.rgb[i] = static_cast<float>(v) / maxval;
    }
  }
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image for writing: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> buf(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const float v = std::min(std::max(img.rgb[i], 0.0f), 1.0f);
    buf[i] = static_cast<unsigned char>(v * 255.0f + 0.5f);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_ply_points(std::ostream& os, const std::vector<Eigen::Vector3d>& pts,
                      const std::vector<Eigen::Vector3d>* colors) {
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (colors)
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    os << static_cast<float>(pts[i].x()) << " " << static_cast<float>(pts[i].y()) << " "
       << static_cast<float>(pts[i].z());
    if (colors) {
      const auto& c = (*colors)[i];
      for (int k = 0; k < 3; ++k)
        os << " " << std::min(255, std::max(0, static_cast<int>(c[k] * 255.0 + 0.5)));
    }
    os << "\n";
  }
}

}  // namespace mustr
