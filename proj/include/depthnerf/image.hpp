#pragma once

// Planar-interleaved double images plus the two on-disk codecs used by
// datasets: 8-bit PNG for color and little-endian PFM for metric depth.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "depthnerf/errors.hpp"

namespace depthnerf {

/// Row-major, channel-interleaved image. Row 0 is the top of the picture.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  double& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  /// Single channel extracted as its own image.
  Image channel(int ch) const {
    Image out(width, height, 1);
    for (std::size_t i = 0; i < pixel_count(); ++i) out.data[i] = data[i * channels + ch];
    return out;
  }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

/// Writes an 8-bit RGB (3 channels) or grey (1 channel) PNG.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("PNG writer supports 1 or 3 channels: " + path.string());
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: identical images give identical bytes.
  png_write_info(png, info);
  for (int r = 0; r < img.height; ++r) {
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = to_byte(img.data[static_cast<std::size_t>(r) * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads a PNG as RGB in [0, 1]. Grey and palette images are expanded and
/// alpha is dropped.
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = 3;
  img.data.assign(img.pixel_count() * 3, 0.0);
  row.resize(png_get_rowbytes(png, info));
  for (int r = 0; r < img.height; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int i = 0; i < img.width * 3; ++i)
      img.data[static_cast<std::size_t>(r) * img.width * 3 + i] = row[i] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Single-channel PFM ("Pf"), little-endian (scale -1.0), rows stored
/// bottom-to-top as the format requires.
inline void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1) throw IoError("PFM writer expects one channel: " + path.string());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width));
  for (int r = img.height - 1; r >= 0; --r) {
    for (int c = 0; c < img.width; ++c) row[c] = static_cast<float>(img.at(r, c));
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : row) {
        auto u = std::bit_cast<std::uint32_t>(f);
        u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        f = std::bit_cast<float>(u);
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw IoError("failed writing PFM: " + path.string());
}

inline Image read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open depth map: " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  is >> magic >> w >> h >> scale;
  if (!is || (magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale == 0.0)
    throw IoError("malformed PFM header: " + path.string());
  is.get();  // single whitespace byte after the scale
  const int ch = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  std::vector<float> buf(static_cast<std::size_t>(w) * h * ch);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw IoError("truncated PFM data: " + path.string());
  const bool swap = little != (std::endian::native == std::endian::little);
  Image img(w, h, ch);
  for (int r = 0; r < h; ++r)
    for (int i = 0; i < w * ch; ++i) {
      float f = buf[static_cast<std::size_t>(h - 1 - r) * w * ch + i];
      if (swap) {
        auto u = std::bit_cast<std::uint32_t>(f);
        u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        f = std::bit_cast<float>(u);
      }
      img.data[static_cast<std::size_t>(r) * w * ch + i] = f;
    }
  return img;
}

/// Maps values in [0, max_value] to a blue-to-red ramp; used for error maps.
inline Image heat_map(const Image& values, double max_value) {
  Image out(values.width, values.height, 3);
  const double inv = max_value > 0.0 ? 1.0 / max_value : 0.0;
  for (std::size_t i = 0; i < values.pixel_count(); ++i) {
    const double x = std::clamp(values.data[i] * inv, 0.0, 1.0);
    out.data[3 * i + 0] = std::clamp(1.5 - std::abs(4.0 * x - 3.0), 0.0, 1.0);
    out.data[3 * i + 1] = std::clamp(1.5 - std::abs(4.0 * x - 2.0), 0.0, 1.0);
    out.data[3 * i + 2] = std::clamp(1.5 - std::abs(4.0 * x - 1.0), 0.0, 1.0);
  }
  return out;
}

}  // namespace depthnerf
