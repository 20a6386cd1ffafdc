#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/error.hpp"

namespace segfuse {

using ClassId = std::uint8_t;

// "Unlabeled / uncertain". Never a catalog id; excluded from metrics.
inline constexpr ClassId kUnlabeled = 255;

// (row, col), origin at the top-left.
struct PixelCoord {
  int row = 0;
  int col = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

inline std::string to_string(const PixelCoord& p) {
  return "(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")";
}

// Dense row-major 2-D grid.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  Grid(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * height) {
      fail(ErrorCode::kFormat, "grid data length " + std::to_string(data_.size()) +
                                   " does not match " + std::to_string(width) + "x" +
                                   std::to_string(height));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  T& at(int row, int col) { return data_[index(row, col)]; }
  const T& at(int row, int col) const { return data_[index(row, col)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static void check_dims(int width, int height) {
    if (width < 0 || height < 0) {
      fail(ErrorCode::kInvalidArgument, "negative grid dimensions");
    }
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// Per-pixel class ids; values are catalog ids or kUnlabeled.
class LabelMap : public Grid<ClassId> {
 public:
  using Grid::Grid;
};

// Boolean raster stored one byte per pixel (0 or 1).
class BitMask : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;
  bool test(int row, int col) const { return at(row, col) != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values()) n += v != 0;
    return n;
  }
};

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB raster.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {0, 0, 0}) : width_(width), height_(height) {
    if (width < 0 || height < 0) fail(ErrorCode::kInvalidArgument, "negative image dimensions");
    data_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < data_.size(); i += 3) {
      data_[i] = fill[0];
      data_[i + 1] = fill[1];
      data_[i + 2] = fill[2];
    }
  }
  Image(int width, int height, std::vector<std::uint8_t> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width < 0 || height < 0 ||
        data_.size() != static_cast<std::size_t>(width) * height * 3) {
      fail(ErrorCode::kFormat, "image data length does not match 3 x width x height");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  std::uint8_t& channel(int row, int col, int ch) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * 3 + ch];
  }
  std::uint8_t channel(int row, int col, int ch) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * 3 + ch];
  }
  Rgb pixel(int row, int col) const {
    return {channel(row, col, 0), channel(row, col, 1), channel(row, col, 2)};
  }
  void set_pixel(int row, int col, Rgb rgb) {
    for (int ch = 0; ch < 3; ++ch) channel(row, col, ch) = rgb[ch];
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& g) const noexcept {
    return width_ == g.width() && height_ == g.height();
  }
  bool same_shape(const Image& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

struct ClassInfo {
  ClassId id = 0;
  std::string name;
  Rgb color{0, 0, 0};
  double lambda = 1.0;
  friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

// Ordered class list with contiguous ids 0..m-1.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
    if (classes_.size() >= kUnlabeled) {
      fail(ErrorCode::kValidation, "catalog may hold at most 255 classes");
    }
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i].id != i) {
        fail(ErrorCode::kValidation, "catalog ids must be contiguous from 0; entry " +
                                         std::to_string(i) + " has id " +
                                         std::to_string(classes_[i].id));
      }
      if (!(classes_[i].lambda >= 0.0)) {
        fail(ErrorCode::kValidation, "class '" + classes_[i].name + "' has negative lambda");
      }
    }
  }

  // The 19 street-scene training classes (road .. bicycle) with their
  // conventional display colors.
  static ClassCatalog street_scene() {
    static const std::pair<const char*, Rgb> kClasses[] = {
        {"road", {128, 64, 128}},      {"sidewalk", {244, 35, 232}},
        {"building", {70, 70, 70}},    {"wall", {102, 102, 156}},
        {"fence", {190, 153, 153}},    {"pole", {153, 153, 153}},
        {"traffic light", {250, 170, 30}}, {"traffic sign", {220, 220, 0}},
        {"vegetation", {107, 142, 35}}, {"terrain", {152, 251, 152}},
        {"sky", {70, 130, 180}},       {"person", {220, 20, 60}},
        {"rider", {255, 0, 0}},        {"car", {0, 0, 142}},
        {"truck", {0, 0, 70}},         {"bus", {0, 60, 100}},
        {"train", {0, 80, 100}},       {"motorcycle", {0, 0, 230}},
        {"bicycle", {119, 11, 32}},
    };
    std::vector<ClassInfo> v;
    for (const auto& [name, color] : kClasses) {
      v.push_back({static_cast<ClassId>(v.size()), name, color, 1.0});
    }
    return ClassCatalog(std::move(v));
  }

  std::size_t size() const noexcept { return classes_.size(); }
  bool contains(int id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < classes_.size();
  }
  const ClassInfo& operator[](ClassId id) const { return classes_.at(id); }
  const std::vector<ClassInfo>& classes() const noexcept { return classes_; }

  std::optional<ClassId> find(std::string_view name) const {
    for (const auto& c : classes_) {
      if (c.name == name) return c.id;
    }
    return std::nullopt;
  }

  friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;

 private:
  std::vector<ClassInfo> classes_;
};

// Throws kValidation naming the first pixel whose value is neither a catalog
// id nor kUnlabeled.
inline void validate(const LabelMap& m, const ClassCatalog& catalog) {
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const ClassId v = m.at(r, c);
      if (v != kUnlabeled && !catalog.contains(v)) {
        fail(ErrorCode::kValidation, "label value " + std::to_string(v) +
                                         " at pixel " + to_string(PixelCoord{r, c}) +
                                         " is not in the class catalog");
      }
    }
  }
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, std::string_view what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    fail(ErrorCode::kDimensionMismatch,
         std::string(what) + ": " + std::to_string(a.width()) + "x" +
             std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
             std::to_string(b.height()));
  }
}

}  // namespace segfuse
