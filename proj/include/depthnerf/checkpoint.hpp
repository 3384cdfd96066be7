#pragma once

// Binary checkpoint: "DRNF", u32 version, u64 config length, config JSON,
// i32 epoch, i64 iteration, i64 adam step, u32 tensor count, then for each
// tensor (rows, cols, values) followed by the Adam m and v tensors in the
// same layout. All integers and doubles are little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "depthnerf/config.hpp"
#include "depthnerf/errors.hpp"
#include "depthnerf/training.hpp"

namespace depthnerf {

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'R', 'N', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw IoError("truncated checkpoint: " + path);
  return to_little(v);
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  put<std::uint64_t>(os, m.rows());
  put<std::uint64_t>(os, m.cols());
  for (double v : m.values()) put(os, v);
}

inline Matrix get_matrix(std::istream& is, const std::string& path) {
  const auto rows = get<std::uint64_t>(is, path);
  const auto cols = get<std::uint64_t>(is, path);
  if (rows > (1u << 24) || cols > (1u << 24)) throw IoError("corrupt tensor shape in " + path);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = get<double>(is, path);
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                            const TrainState& s) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put(os, kCheckpointVersion);
    const std::string js = to_json(cfg).dump();
    detail::put<std::uint64_t>(os, js.size());
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::put<std::int32_t>(os, s.epoch);
    detail::put<std::int64_t>(os, s.iteration);
    detail::put<std::int64_t>(os, s.adam.step);
    const auto tensors = s.params.tensors();
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      detail::put_matrix(os, *tensors[i]);
      detail::put_matrix(os, s.adam.m.at(i));
      detail::put_matrix(os, s.adam.v.at(i));
    }
    if (!os) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + p);
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4 || magic != kCheckpointMagic) throw IoError("not a checkpoint: " + p);
  const auto version = detail::get<std::uint32_t>(is, p);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + p);
  const auto len = detail::get<std::uint64_t>(is, p);
  if (len > (1u << 20)) throw IoError("corrupt config block in " + p);
  std::string js(len, '\0');
  is.read(js.data(), static_cast<std::streamsize>(len));
  if (is.gcount() != static_cast<std::streamsize>(len)) throw IoError("truncated checkpoint: " + p);
  Checkpoint ck;
  try {
    ck.config = config_from_json(nlohmann::json::parse(js));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt config block in " + p + ": " + e.what());
  }
  ck.state.params.config = ck.config.field;
  ck.state.epoch = detail::get<std::int32_t>(is, p);
  ck.state.iteration = detail::get<std::int64_t>(is, p);
  ck.state.adam.step = detail::get<std::int64_t>(is, p);
  const auto count = detail::get<std::uint32_t>(is, p);
  auto tensors = ck.state.params.tensors();
  if (count != tensors.size()) throw IoError("unexpected tensor count in " + p);
  for (std::size_t i = 0; i < count; ++i) {
    *tensors[i] = detail::get_matrix(is, p);
    ck.state.adam.m.push_back(detail::get_matrix(is, p));
    ck.state.adam.v.push_back(detail::get_matrix(is, p));
  }
  try {
    check_field_shapes(ck.state.params);
  } catch (const std::exception& e) {
    throw IoError("checkpoint tensors do not match its config: " + std::string(e.what()));
  }
  return ck;
}

}  // namespace depthnerf
