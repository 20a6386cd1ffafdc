#pragma once

// PNG encode/decode for the raster types. Label maps are 8-bit paletted
// (pixel value = class id, palette = display colors), images are 8-bit RGB,
// bit masks are 8-bit gray with 0/255, and id/fixed-point rasters are 16-bit
// gray.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "segfuse/error.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

using Bytes = std::vector<std::uint8_t>;
using Gray16 = Grid<std::uint16_t>;

namespace detail {

struct PngErrorSink {
  char message[256] = "libpng error";
};

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  if (sink != nullptr) {
    std::strncpy(sink->message, msg, sizeof(sink->message) - 1);
    sink->message[sizeof(sink->message) - 1] = '\0';
  }
  std::longjmp(png_jmpbuf(png), 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

struct PngReader {
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t offset = 0;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<PngReader*>(png_get_io_ptr(png));
  if (r->size - r->offset < n) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, r->data + r->offset, n);
  r->offset += n;
}

inline void png_write_cb(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

inline void png_flush_cb(png_structp) {}

struct RawPng {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::size_t row_bytes = 0;
  Bytes pixels;
  std::vector<Rgb> palette;
};

enum class ReadMode {
  kNative,  // keep indices / gray values, expand sub-byte depths to 8 bits
  kRgb8,    // everything converted to 8-bit RGB
};

inline RawPng read_png(std::span<const std::uint8_t> bytes, ReadMode mode) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorCode::kFormat, "not a PNG stream (bad signature)");
  }
  PngErrorSink sink;
  PngReader reader{bytes.data(), bytes.size(), 0};
  RawPng raw;
  std::vector<png_bytep> rows;

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_cb, png_warning_cb);
  if (png == nullptr) fail(ErrorCode::kIo, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::kIo, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kFormat, std::string("malformed PNG: ") + sink.message);
  }
  png_set_read_fn(png, &reader, png_read_cb);
  png_read_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.bit_depth = png_get_bit_depth(png, info);
  raw.color_type = png_get_color_type(png, info);

  if (raw.color_type == PNG_COLOR_TYPE_PALETTE) {
    png_colorp plte = nullptr;
    int n = 0;
    if (png_get_PLTE(png, info, &plte, &n) != 0) {
      for (int i = 0; i < n; ++i) raw.palette.push_back({plte[i].red, plte[i].green, plte[i].blue});
    }
  }

  if (mode == ReadMode::kNative) {
    if (raw.bit_depth < 8) png_set_packing(png);
    if (raw.bit_depth < 8 && raw.color_type == PNG_COLOR_TYPE_GRAY) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
  } else {
    if (raw.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (raw.color_type == PNG_COLOR_TYPE_GRAY && raw.bit_depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS) != 0) png_set_tRNS_to_alpha(png);
    if (raw.bit_depth == 16) png_set_strip_16(png);
    if (raw.color_type == PNG_COLOR_TYPE_GRAY || raw.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
  }
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  raw.bit_depth = png_get_bit_depth(png, info);
  raw.color_type = png_get_color_type(png, info);
  raw.row_bytes = png_get_rowbytes(png, info);
  raw.pixels.resize(raw.row_bytes * static_cast<std::size_t>(raw.height));
  rows.resize(static_cast<std::size_t>(raw.height));
  for (int r = 0; r < raw.height; ++r) rows[r] = raw.pixels.data() + raw.row_bytes * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

inline Bytes write_png(int width, int height, int bit_depth, int color_type,
                       std::span<const std::uint8_t> pixels, std::size_t row_bytes,
                       std::span<const Rgb> palette = {}) {
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument, "PNG rasters must have positive dimensions");
  }
  PngErrorSink sink;
  Bytes out;
  std::vector<png_color> plte;
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) rows[r] = pixels.data() + row_bytes * r;
  for (const auto& c : palette) plte.push_back(png_color{c[0], c[1], c[2]});

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_cb, png_warning_cb);
  if (png == nullptr) fail(ErrorCode::kIo, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::kIo, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, std::string("PNG encode failed: ") + sink.message);
  }
  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (!plte.empty()) png_set_PLTE(png, info, plte.data(), static_cast<int>(plte.size()));
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

// Paletted PNG whose pixel values are the class ids. Palette entries come
// from the catalog; the sentinel renders white.
inline Bytes encode_label_map(const LabelMap& m,
                              const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  std::vector<Rgb> palette(256, Rgb{0, 0, 0});
  for (const auto& c : catalog.classes()) palette[c.id] = c.color;
  palette[kUnlabeled] = {255, 255, 255};
  return detail::write_png(m.width(), m.height(), 8, PNG_COLOR_TYPE_PALETTE, m.values(),
                           static_cast<std::size_t>(m.width()), palette);
}

// Accepts 8-bit paletted or 8-bit gray rasters (prediction dumps are often
// gray). Values outside the catalog raise kValidation naming the pixel.
inline LabelMap decode_label_map(std::span<const std::uint8_t> bytes,
                                 const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  auto raw = detail::read_png(bytes, detail::ReadMode::kNative);
  const bool paletted = raw.color_type == PNG_COLOR_TYPE_PALETTE;
  const bool gray = raw.color_type == PNG_COLOR_TYPE_GRAY && raw.bit_depth == 8;
  if (!paletted && !gray) {
    fail(ErrorCode::kFormat, "label maps must be 8-bit paletted or 8-bit gray PNG");
  }
  LabelMap m(raw.width, raw.height, std::move(raw.pixels));
  validate(m, catalog);
  return m;
}

inline Bytes encode_image(const Image& img) {
  return detail::write_png(img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, img.bytes(),
                           static_cast<std::size_t>(img.width()) * 3);
}

inline Image decode_image(std::span<const std::uint8_t> bytes) {
  auto raw = detail::read_png(bytes, detail::ReadMode::kRgb8);
  if (raw.row_bytes != static_cast<std::size_t>(raw.width) * 3) {
    fail(ErrorCode::kFormat, "unsupported PNG layout for an RGB image");
  }
  return Image(raw.width, raw.height, std::move(raw.pixels));
}

inline Bytes encode_bitmask(const BitMask& m) {
  Bytes px(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) px[i] = m[i] != 0 ? 255 : 0;
  return detail::write_png(m.width(), m.height(), 8, PNG_COLOR_TYPE_GRAY, px,
                           static_cast<std::size_t>(m.width()));
}

inline BitMask decode_bitmask(std::span<const std::uint8_t> bytes) {
  auto raw = detail::read_png(bytes, detail::ReadMode::kNative);
  if (raw.color_type != PNG_COLOR_TYPE_GRAY || raw.bit_depth != 8) {
    fail(ErrorCode::kFormat, "bit masks must be 8-bit gray PNG");
  }
  BitMask m(raw.width, raw.height);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto v = raw.pixels[i];
    if (v != 0 && v != 255) {
      fail(ErrorCode::kValidation,
           "bit mask pixel " +
               to_string(PixelCoord{static_cast<int>(i / raw.width), static_cast<int>(i % raw.width)}) +
               " has value " + std::to_string(v) + " (expected 0 or 255)");
    }
    m[i] = v != 0;
  }
  return m;
}

inline Bytes encode_gray16(const Gray16& g) {
  Bytes px(g.size() * 2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    px[2 * i] = static_cast<std::uint8_t>(g[i] >> 8);
    px[2 * i + 1] = static_cast<std::uint8_t>(g[i] & 0xff);
  }
  return detail::write_png(g.width(), g.height(), 16, PNG_COLOR_TYPE_GRAY, px,
                           static_cast<std::size_t>(g.width()) * 2);
}

inline Gray16 decode_gray16(std::span<const std::uint8_t> bytes) {
  auto raw = detail::read_png(bytes, detail::ReadMode::kNative);
  if (raw.color_type != PNG_COLOR_TYPE_GRAY || raw.bit_depth != 16) {
    fail(ErrorCode::kFormat, "expected a 16-bit gray PNG");
  }
  Gray16 g(raw.width, raw.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<std::uint16_t>((raw.pixels[2 * i] << 8) | raw.pixels[2 * i + 1]);
  }
  return g;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

inline LabelMap load_label_map(const std::filesystem::path& path,
                               const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  try {
    return decode_label_map(read_file(path), catalog);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_label_map(const std::filesystem::path& path, const LabelMap& m,
                           const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  write_file(path, encode_label_map(m, catalog));
}

inline Image load_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
  write_file(path, encode_image(img));
}

}  // namespace segfuse
