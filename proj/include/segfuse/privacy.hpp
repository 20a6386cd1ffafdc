#pragma once

// Normalized box-filter blur over caller-supplied face / plate boxes.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "segfuse/error.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

struct BBox {
  int row = 0;
  int col = 0;
  int height = 1;
  int width = 1;
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Fixed odd size >= 3, or automatic (derived from each box).
class BlurKernel {
 public:
  static BlurKernel automatic() { return BlurKernel(0); }
  static BlurKernel fixed(int size) {
    if (size < 3 || size % 2 == 0) {
      fail(ErrorCode::kInvalidArgument,
           "blur kernel must be an odd integer >= 3 (got " + std::to_string(size) + ")");
    }
    return BlurKernel(size);
  }

  bool is_auto() const noexcept { return size_ == 0; }

  // Largest odd integer <= max(3, min(h, w) / 4) in auto mode.
  int size_for(const BBox& box) const {
    if (!is_auto()) return size_;
    const double quarter = std::min(box.height, box.width) / 4.0;
    int k = static_cast<int>(std::max(3.0, quarter));
    if (k % 2 == 0) --k;
    return k;
  }

 private:
  explicit BlurKernel(int size) : size_(size) {}
  int size_;
};

inline void validate_box(const BBox& b, int width, int height) {
  if (b.height < 1 || b.width < 1 || b.row < 0 || b.col < 0 || b.row + b.height > height ||
      b.col + b.width > width) {
    fail(ErrorCode::kValidation, "box (row " + std::to_string(b.row) + ", col " +
                                     std::to_string(b.col) + ", " + std::to_string(b.height) +
                                     "x" + std::to_string(b.width) + ") is outside the " +
                                     std::to_string(width) + "x" + std::to_string(height) +
                                     " image");
  }
}

// round-half-up of sum / count for nonnegative sums.
inline std::uint8_t rounded_mean(std::uint64_t sum, std::uint64_t count) {
  return static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
}

namespace detail {

// Blurs one box in place. Neighborhood indices are clamped into the box
// (edge replication), so nothing outside the box contributes. Uses a summed
// area table over the replicated-edge padded box.
inline void blur_box(Image& img, const BBox& box, int k) {
  const int half = k / 2;
  const int ph = box.height + 2 * half;
  const int pw = box.width + 2 * half;
  const std::uint64_t area = static_cast<std::uint64_t>(k) * k;
  std::vector<std::uint64_t> sat(static_cast<std::size_t>(ph + 1) * (pw + 1));
  std::vector<std::uint8_t> result(static_cast<std::size_t>(box.height) * box.width * 3);
  auto at = [&](int r, int c) -> std::uint64_t& { return sat[static_cast<std::size_t>(r) * (pw + 1) + c]; };

  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < ph; ++r) {
      const int sr = box.row + std::clamp(r - half, 0, box.height - 1);
      std::uint64_t row_sum = 0;
      for (int c = 0; c < pw; ++c) {
        const int sc = box.col + std::clamp(c - half, 0, box.width - 1);
        row_sum += img.channel(sr, sc, ch);
        at(r + 1, c + 1) = at(r, c + 1) + row_sum;
      }
    }
    for (int r = 0; r < box.height; ++r) {
      for (int c = 0; c < box.width; ++c) {
        // padded window rows [r, r+k), cols [c, c+k)
        const std::uint64_t sum = at(r + k, c + k) - at(r, c + k) - at(r + k, c) + at(r, c);
        result[(static_cast<std::size_t>(r) * box.width + c) * 3 + ch] = rounded_mean(sum, area);
      }
    }
  }
  for (int r = 0; r < box.height; ++r) {
    for (int c = 0; c < box.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        img.channel(box.row + r, box.col + c, ch) =
            result[(static_cast<std::size_t>(r) * box.width + c) * 3 + ch];
      }
    }
  }
}

}  // namespace detail

// Boxes are applied in list order; an overlapping later box sees the output
// of earlier ones. Pixels outside every box are untouched.
inline Image blur_regions(Image img, std::span<const BBox> boxes, BlurKernel kernel) {
  for (const auto& b : boxes) validate_box(b, img.width(), img.height());
  for (const auto& b : boxes) detail::blur_box(img, b, kernel.size_for(b));
  return img;
}

inline Image blur_regions(Image img, const std::vector<BBox>& boxes, BlurKernel kernel) {
  return blur_regions(std::move(img), std::span<const BBox>(boxes), kernel);
}

enum class BoxKind { kFace, kPlate };

// One line of a box file.
struct BoxRecord {
  std::string image_id;
  BBox box;
  BoxKind kind = BoxKind::kFace;
};

// Line-delimited records:
//   {"image_id": "...", "row": r, "col": c, "height": h, "width": w, "kind": "face"|"plate"}
inline std::vector<BoxRecord> parse_box_records(const std::string& text) {
  std::vector<BoxRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BoxRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      rec.box = {j.at("row").get<int>(), j.at("col").get<int>(), j.at("height").get<int>(),
                 j.at("width").get<int>()};
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "face") {
        rec.kind = BoxKind::kFace;
      } else if (kind == "plate") {
        rec.kind = BoxKind::kPlate;
      } else {
        fail(ErrorCode::kFormat, "unknown box kind '" + kind + "'");
      }
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, "box record line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), "box record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace segfuse
