#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "weakloc/tensor.hpp"

namespace weakloc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

// Flat binary parameter file: magic, version, count, then per parameter a
// length-prefixed name, the shape, and row-major little-endian f64 values.
inline constexpr char kCheckpointMagic[8] = {'W', 'L', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, std::uint32_t(params.size()));
  for (const auto& [name, tensor] : params) {
    detail::write_pod(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::write_pod(os, std::uint32_t(tensor->shape.size()));
    for (int d : tensor->shape) detail::write_pod(os, std::uint32_t(d));
    os.write(reinterpret_cast<const char*>(tensor->data.data()),
             std::streamsize(tensor->data.size() * sizeof(double)));
  }
  if (!os) throw data_error("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw data_error("checkpoint: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw data_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(is);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = int(detail::read_pod<std::uint32_t>(is));
    Tensor t{shape};
    is.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
    if (!is) throw data_error("checkpoint: truncated file " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace weakloc
