#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/classes.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  Rgb get(std::size_t y, std::size_t x) const {
    const std::uint8_t* p = &pixels[(y * width + x) * 3];
    return {p[0], p[1], p[2]};
  }
  void set(std::size_t y, std::size_t x, const Rgb& c) {
    std::uint8_t* p = &pixels[(y * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void skip_pnm_space(const std::string& s, std::size_t& pos) {
  while (pos < s.size()) {
    if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
}

inline std::size_t read_pnm_int(const std::string& s, std::size_t& pos, const std::filesystem::path& path) {
  skip_pnm_space(s, pos);
  std::size_t start = pos;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw DataError("corrupt PPM header in " + path.string());
  return std::stoul(s.substr(start, pos - start));
}

}  // namespace detail

inline RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string s = detail::read_file(path);
  if (s.size() < 2 || s[0] != 'P' || s[1] != '6') throw DataError("not a binary PPM (P6): " + path.string());
  std::size_t pos = 2;
  const std::size_t w = detail::read_pnm_int(s, pos, path);
  const std::size_t h = detail::read_pnm_int(s, pos, path);
  const std::size_t maxval = detail::read_pnm_int(s, pos, path);
  if (maxval != 255 || w == 0 || h == 0) throw DataError("unsupported PPM (need 8-bit, non-empty): " + path.string());
  ++pos;  // single whitespace byte before the raster
  RgbImage img(w, h);
  if (s.size() < pos + img.pixels.size()) throw DataError("truncated PPM raster in " + path.string());
  std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

namespace detail {

struct PngFile {
  FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

/// PNG decoded to 8-bit RGB. Palette and grey images are expanded; when
/// `grey_values` is non-null and the file is single-channel grey, the raw grey
/// values are also returned there (used for index-valued label maps).
inline RgbImage read_png(const std::filesystem::path& path, std::vector<std::uint8_t>* grey_values = nullptr) {
  detail::PngFile f;
  f.fp = std::fopen(path.c_str(), "rb");
  if (!f.fp) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.fp) != 8 || png_sig_cmp(sig, 0, 8)) throw DataError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  RgbImage img;
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const bool grey = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (grey && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  raw.resize(w * h * channels);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = RgbImage(w, h);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = raw[i * channels + (channels >= 3 ? c : 0)];
  if (grey_values && grey) {
    grey_values->resize(w * h);
    for (std::size_t i = 0; i < w * h; ++i) (*grey_values)[i] = raw[i * channels];
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::PngFile f;
  f.fp = std::fopen(path.c_str(), "wb");
  if (!f.fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode failed: " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads P6 or PNG, chosen by file signature.
inline RgbImage read_image(const std::filesystem::path& path, std::vector<std::uint8_t>* grey_values = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  return read_png(path, grey_values);
}

inline void write_image(const std::filesystem::path& path, const RgbImage& img) {
  if (path.extension() == ".png")
    write_png(path, img);
  else
    write_ppm(path, img);
}

/// RGB raster -> 3 x H x W tensor in [0, 1].
inline Tensor<float> image_to_tensor(const RgbImage& img) {
  Tensor<float> t({3, img.height, img.width});
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = static_cast<float>(img.pixels[i * 3 + c]) / 255.0f;
  return t;
}

/// 3 x H x W tensor in [0, 1] -> RGB raster (clamped, rounded).
inline RgbImage tensor_to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image: need 3 x H x W, got " + shape_string(t.shape()));
  RgbImage img(t.dim(2), t.dim(1));
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(t[c * plane + i], 0.0f, 1.0f);
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return img;
}

inline RgbImage labels_to_image(const IntTensor& labels, const ClassTable& table) {
  if (labels.rank() != 2) throw ShapeError("labels_to_image: need H x W, got " + shape_string(labels.shape()));
  RgbImage img(labels.dim(1), labels.dim(0));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) img.set(y, x, table.color_of(labels[y * img.width + x]));
  return img;
}

/// Palette colours -> class indices. Colours not in the palette become void.
inline IntTensor image_to_labels(const RgbImage& img, const ClassTable& table, std::size_t* unknown = nullptr,
                                 Rgb* first_unknown = nullptr) {
  IntTensor labels({img.height, img.width});
  std::size_t misses = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const Rgb c = img.get(y, x);
      auto idx = table.index_of_color(c);
      if (!idx && c != kVoidColor && misses++ == 0 && first_unknown) *first_unknown = c;
      labels[y * img.width + x] = idx ? static_cast<std::int32_t>(*idx) : kVoidLabel;
    }
  if (unknown) *unknown = misses;
  return labels;
}

}  // namespace pfseg
