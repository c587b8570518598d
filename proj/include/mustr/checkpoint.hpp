#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mustr/nn.hpp"

namespace mustr {

// Checkpoint format (byte-exact, little-endian):
//   magic "MUSTR1" (6 bytes), then per parameter:
//     u32 name length, name bytes, u32 rank, u32 shape[rank], float32 data.
// Parameters are stored as float32 regardless of the in-memory precision.

inline constexpr char kCheckpointMagic[6] = {'M', 'U', 'S', 'T', 'R', '1'};

namespace detail {

inline void require_little_endian() {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  if constexpr (std::endian::native != std::endian::little)
    throw ContractError("checkpoint: big-endian hosts are not supported");
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError(path + ": truncated checkpoint");
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParamRefs<T>& params) {
  detail::require_little_endian();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, 6);
  for (const auto* p : params) {
    detail::write_u32(f, static_cast<std::uint32_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_u32(f, static_cast<std::uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) detail::write_u32(f, static_cast<std::uint32_t>(d));
    std::vector<float> buf(p->value.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value.at(i));
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!f) throw DataError("write failure on checkpoint: " + path);
}

// Loads into existing parameters by name; every file entry must match a known
// parameter of identical shape, and every parameter must be present.
template <class T>
void load_checkpoint(const std::string& path, const ParamRefs<T>& params) {
  detail::require_little_endian();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  if (!f.read(magic, 6) || std::string(magic, 6) != std::string(kCheckpointMagic, 6))
    throw DataError(path + ": bad checkpoint magic");

  std::vector<bool> seen(params.size(), false);
  while (true) {
    f.peek();
    if (f.eof()) break;
    const std::uint32_t name_len = detail::read_u32(f, path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) throw DataError(path + ": truncated checkpoint");
    const std::uint32_t rank = detail::read_u32(f, path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(f, path));
    std::size_t numel = 1;
    for (int d : shape) numel *= static_cast<std::size_t>(d);
    std::vector<float> buf(numel);
    if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * 4)))
      throw DataError(path + ": truncated checkpoint data for '" + name + "'");

    bool matched = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name != name) continue;
      if (params[i]->value.shape != shape)
        throw DataError(path + ": shape mismatch for '" + name + "': file " + shape_str(shape) +
                        " vs model " + shape_str(params[i]->value.shape));
      for (std::size_t k = 0; k < numel; ++k) params[i]->value.at(k) = static_cast<T>(buf[k]);
      seen[i] = true;
      matched = true;
      break;
    }
    if (!matched) throw DataError(path + ": unknown parameter '" + name + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!seen[i]) throw DataError(path + ": missing parameter '" + params[i]->name + "'");
}

}  // namespace mustr
