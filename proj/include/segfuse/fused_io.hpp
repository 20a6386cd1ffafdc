#pragma once

// On-disk form of a FusedResult: one directory holding
//   labels.png      paletted label map
//   confidence.png  16-bit gray, round(confidence * 65535)
//   reliable.png    bit mask
//   stats.json      stats record plus the config that produced it

#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/png_codec.hpp"

namespace segfuse {

inline constexpr double kConfidenceScale = 65535.0;

inline Gray16 quantize_confidence(const ConfidenceGrid& c) {
  Gray16 g(c.width(), c.height());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = std::clamp(c[i], 0.0, 1.0);
    g[i] = static_cast<std::uint16_t>(std::lround(v * kConfidenceScale));
  }
  return g;
}

inline ConfidenceGrid dequantize_confidence(const Gray16& g) {
  ConfidenceGrid c(g.width(), g.height());
  for (std::size_t i = 0; i < g.size(); ++i) c[i] = g[i] / kConfidenceScale;
  return c;
}

inline void save_fused(const std::filesystem::path& dir, const FusedResult& r,
                       const FusionConfig& cfg,
                       const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  std::filesystem::create_directories(dir);
  save_label_map(dir / "labels.png", r.labels, catalog);
  write_file(dir / "confidence.png", encode_gray16(quantize_confidence(r.confidence)));
  write_file(dir / "reliable.png", encode_bitmask(r.reliable));
  nlohmann::json stats = r.stats;
  stats["alpha"] = r.alpha;
  stats["config"] = cfg;
  write_text(dir / "stats.json", stats.dump(2) + "\n");
}

// Confidence comes back quantized; the reliability mask is authoritative.
inline FusedResult load_fused(const std::filesystem::path& dir,
                              const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  FusedResult r;
  r.labels = load_label_map(dir / "labels.png", catalog);
  r.confidence = dequantize_confidence(decode_gray16(read_file(dir / "confidence.png")));
  r.reliable = decode_bitmask(read_file(dir / "reliable.png"));
  require_same_shape(r.labels, r.confidence, "fused confidence raster");
  require_same_shape(r.labels, r.reliable, "fused reliability raster");
  const auto stats = nlohmann::json::parse(read_text(dir / "stats.json"));
  r.stats = stats.get<FusionStats>();
  r.alpha = stats.value("alpha", 0.7);
  return r;
}

}  // namespace segfuse
