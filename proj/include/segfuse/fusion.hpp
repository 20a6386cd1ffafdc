#pragma once

// Weighted cross-validation fusion of K candidate label maps.
//
// For every pixel the confidence of label l is the summed weight of the
// methods that predicted l. The label with the largest confidence wins and a
// pixel is reliable when that confidence is strictly above alpha.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "segfuse/error.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

// Scores closer than this are treated as equal, both when looking for the
// winning label and when comparing against alpha. Sums such as 0.1+0.2+0.4
// land one ulp above 0.7 and must not count as "higher than" 0.7.
inline constexpr double kScoreTolerance = 1e-9;

enum class TiePolicy { kHighestWeightMethod };

struct FusionConfig {
  std::vector<std::string> method_names;
  std::vector<double> weights;
  double alpha = 0.7;
  TiePolicy tie_policy = TiePolicy::kHighestWeightMethod;

  std::size_t method_count() const noexcept { return weights.size(); }

  void validate() const {
    if (weights.size() < 2) {
      fail(ErrorCode::kInvalidArgument, "fusion needs at least two methods");
    }
    if (method_names.size() != weights.size()) {
      fail(ErrorCode::kInvalidArgument,
           "method_names and weights differ in length (" + std::to_string(method_names.size()) +
               " vs " + std::to_string(weights.size()) + ")");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        fail(ErrorCode::kInvalidArgument, "weights must be finite and nonnegative");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      fail(ErrorCode::kInvalidArgument,
           "weights must sum to 1 (got " + std::to_string(sum) + ")");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      fail(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1]");
    }
  }

  // Builds and validates; names default to m1..mK when empty.
  static FusionConfig make(std::vector<double> weights, double alpha = 0.7,
                           std::vector<std::string> names = {}) {
    if (names.empty()) {
      for (std::size_t k = 0; k < weights.size(); ++k) names.push_back("m" + std::to_string(k + 1));
    }
    FusionConfig cfg{std::move(names), std::move(weights), alpha, TiePolicy::kHighestWeightMethod};
    cfg.validate();
    return cfg;
  }
};

// Winning confidence per pixel, each in [0, 1].
class ConfidenceGrid : public Grid<double> {
 public:
  using Grid::Grid;
};

struct FusionStats {
  std::size_t total_pixels = 0;
  std::size_t reliable_pixels = 0;
  double reliable_fraction = 0.0;
  // For every class that wins at least one pixel: reliable share of its pixels.
  std::map<ClassId, double> per_class_reliable_fraction;
};

struct FusedResult {
  LabelMap labels;
  ConfidenceGrid confidence;
  BitMask reliable;
  FusionStats stats;
  double alpha = 0.7;
};

inline bool exceeds_alpha(double score, double alpha) { return score - alpha > kScoreTolerance; }

namespace detail {

inline void fuse_rows(std::span<const LabelMap> masks, const FusionConfig& cfg,
                      std::span<const std::size_t> priority, int row_begin, int row_end,
                      FusedResult& out) {
  const std::size_t k_count = masks.size();
  std::vector<ClassId> candidates;
  std::vector<double> scores;
  std::vector<std::size_t> slot(k_count);
  candidates.reserve(k_count);
  scores.reserve(k_count);
  const int width = masks[0].width();

  for (int r = row_begin; r < row_end; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::size_t idx = out.labels.index(r, c);
      candidates.clear();
      scores.clear();
      for (std::size_t k = 0; k < k_count; ++k) {
        const ClassId label = masks[k][idx];
        std::size_t j = 0;
        while (j < candidates.size() && candidates[j] != label) ++j;
        if (j == candidates.size()) {
          candidates.push_back(label);
          scores.push_back(0.0);
        }
        scores[j] += cfg.weights[k];
        slot[k] = j;
      }
      const double best = *std::max_element(scores.begin(), scores.end());
      std::size_t win = slot[priority[0]];
      for (std::size_t k : priority) {
        if (best - scores[slot[k]] <= kScoreTolerance) {
          win = slot[k];
          break;
        }
      }
      out.labels[idx] = candidates[win];
      // normalized weights sum to 1 only up to rounding; snap unanimous votes
      out.confidence[idx] = scores[win] > 1.0 - kScoreTolerance ? 1.0 : scores[win];
      out.reliable[idx] = exceeds_alpha(scores[win], cfg.alpha) ? 1 : 0;
    }
  }
}

inline FusionStats summarize(const FusedResult& r) {
  FusionStats s;
  s.total_pixels = r.labels.size();
  std::map<ClassId, std::pair<std::size_t, std::size_t>> per_class;
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    auto& [reliable, total] = per_class[r.labels[i]];
    ++total;
    if (r.reliable[i] != 0) {
      ++reliable;
      ++s.reliable_pixels;
    }
  }
  s.reliable_fraction =
      s.total_pixels == 0 ? 0.0
                          : static_cast<double>(s.reliable_pixels) / static_cast<double>(s.total_pixels);
  for (const auto& [cls, counts] : per_class) {
    s.per_class_reliable_fraction[cls] =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return s;
}

}  // namespace detail

// Method indices ordered by descending weight, then ascending index. The
// first tied label predicted along this order wins a tie.
inline std::vector<std::size_t> tie_priority(std::span<const double> weights) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  return order;
}

// Fuses K same-sized label maps. Rows are split across `jobs` threads; the
// result is identical for every job count.
inline FusedResult fuse(std::span<const LabelMap> masks, const FusionConfig& cfg,
                        unsigned jobs = 1) {
  cfg.validate();
  if (masks.empty()) fail(ErrorCode::kInvalidArgument, "fuse: empty mask list");
  if (masks.size() != cfg.method_count()) {
    fail(ErrorCode::kInvalidArgument, "fuse: got " + std::to_string(masks.size()) +
                                          " masks for " + std::to_string(cfg.method_count()) +
                                          " configured methods");
  }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    require_same_shape(masks[0], masks[k], "fuse: mask " + std::to_string(k));
    const auto vals = masks[k].values();
    if (auto it = std::find(vals.begin(), vals.end(), kUnlabeled); it != vals.end()) {
      const auto i = static_cast<int>(it - vals.begin());
      fail(ErrorCode::kValidation,
           "fuse: mask " + std::to_string(k) + " (" + cfg.method_names[k] +
               ") contains the unlabeled sentinel at pixel " +
               to_string(PixelCoord{i / masks[k].width(), i % masks[k].width()}));
    }
  }

  const int w = masks[0].width();
  const int h = masks[0].height();
  FusedResult out{LabelMap(w, h), ConfidenceGrid(w, h), BitMask(w, h), {}, cfg.alpha};
  const auto priority = tie_priority(cfg.weights);

  jobs = std::clamp<unsigned>(jobs, 1u, static_cast<unsigned>(std::max(h, 1)));
  if (jobs == 1) {
    detail::fuse_rows(masks, cfg, priority, 0, h, out);
  } else {
    std::vector<std::jthread> workers;
    const int chunk = (h + static_cast<int>(jobs) - 1) / static_cast<int>(jobs);
    for (int begin = 0; begin < h; begin += chunk) {
      const int end = std::min(h, begin + chunk);
      workers.emplace_back([&, begin, end] { detail::fuse_rows(masks, cfg, priority, begin, end, out); });
    }
  }
  out.stats = detail::summarize(out);
  return out;
}

inline FusedResult fuse(const std::vector<LabelMap>& masks, const FusionConfig& cfg,
                        unsigned jobs = 1) {
  return fuse(std::span<const LabelMap>(masks), cfg, jobs);
}

// Fused labels with every unreliable pixel replaced by the sentinel.
inline LabelMap uncertainty_map(const FusedResult& r) {
  LabelMap out = r.labels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (r.reliable[i] == 0) out[i] = kUnlabeled;
  }
  return out;
}

// Paint span: row `row`, columns [col_start, col_end).
struct EditOp {
  int row = 0;
  int col_start = 0;
  int col_end = 0;
  ClassId label = 0;
  friend bool operator==(const EditOp&, const EditOp&) = default;
};

inline void validate_edit(const EditOp& e, int width, int height, const ClassCatalog& catalog) {
  if (e.row < 0 || e.row >= height || e.col_start < 0 || e.col_end > width ||
      e.col_start >= e.col_end) {
    fail(ErrorCode::kValidation, "edit span row " + std::to_string(e.row) + " cols [" +
                                     std::to_string(e.col_start) + "," +
                                     std::to_string(e.col_end) + ") is outside the " +
                                     std::to_string(width) + "x" + std::to_string(height) +
                                     " raster or empty");
  }
  if (e.label == kUnlabeled || !catalog.contains(e.label)) {
    fail(ErrorCode::kValidation,
         "edit label " + std::to_string(e.label) + " is not a catalog class");
  }
}

// Applies spans in order; later spans overwrite earlier ones.
inline LabelMap apply_edits(LabelMap base, std::span<const EditOp> edits,
                            const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  for (const auto& e : edits) validate_edit(e, base.width(), base.height(), catalog);
  for (const auto& e : edits) {
    for (int c = e.col_start; c < e.col_end; ++c) base.at(e.row, c) = e.label;
  }
  return base;
}

inline std::vector<PixelCoord> unresolved_pixels(const LabelMap& m) {
  std::vector<PixelCoord> out;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (m.at(r, c) == kUnlabeled) out.push_back({r, c});
    }
  }
  return out;
}

// Raised when a merge leaves sentinel pixels behind.
class UnresolvedPixels : public Error {
 public:
  explicit UnresolvedPixels(std::vector<PixelCoord> pixels)
      : Error(ErrorCode::kPreconditionFailed, describe(pixels)), pixels_(std::move(pixels)) {}

  const std::vector<PixelCoord>& pixels() const noexcept { return pixels_; }
  std::size_t count() const noexcept { return pixels_.size(); }

 private:
  static std::string describe(const std::vector<PixelCoord>& p) {
    std::string msg = std::to_string(p.size()) + " unlabeled pixel(s) remain";
    if (!p.empty()) msg += "; first at " + to_string(p.front());
    return msg;
  }
  std::vector<PixelCoord> pixels_;
};

// Uncertainty map + edits. Throws UnresolvedPixels unless every pixel ends
// up with a class.
inline LabelMap merge_manual(const FusedResult& r, std::span<const EditOp> edits,
                             const ClassCatalog& catalog = ClassCatalog::street_scene()) {
  LabelMap merged = apply_edits(uncertainty_map(r), edits, catalog);
  auto left = unresolved_pixels(merged);
  if (!left.empty()) throw UnresolvedPixels(std::move(left));
  return merged;
}

struct WeightScore {
  std::vector<double> weights;
  double mean_reliable_fraction = 0.0;
};

// Every K-vector of nonnegative multiples of 1/units summing to 1, ordered
// lexicographically with larger leading components first.
inline std::vector<std::vector<double>> simplex_grid(std::size_t k, int units) {
  std::vector<std::vector<double>> out;
  std::vector<int> parts(k, 0);
  auto rec = [&](auto&& self, std::size_t i, int remaining) -> void {
    if (i + 1 == k) {
      parts[i] = remaining;
      std::vector<double> w(k);
      for (std::size_t j = 0; j < k; ++j) w[j] = static_cast<double>(parts[j]) / units;
      out.push_back(std::move(w));
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      parts[i] = v;
      self(self, i + 1, remaining - v);
    }
  };
  if (k > 0) rec(rec, 0, units);
  return out;
}

// Ranks all simplex-grid weight vectors by mean reliable fraction across the
// prediction sets (descending); equal scores keep simplex_grid order.
inline std::vector<WeightScore> weight_search(std::span<const std::vector<LabelMap>> prediction_sets,
                                              double grid_step, double alpha) {
  if (prediction_sets.empty()) fail(ErrorCode::kInvalidArgument, "weight_search: no prediction sets");
  if (!(grid_step > 0.0 && grid_step <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "weight_search: grid_step must lie in (0, 1]");
  }
  const double inv = 1.0 / grid_step;
  const int units = static_cast<int>(std::lround(inv));
  if (std::abs(inv - units) > 1e-6) {
    fail(ErrorCode::kInvalidArgument, "weight_search: grid_step must divide 1 evenly");
  }
  const std::size_t k = prediction_sets[0].size();
  for (const auto& set : prediction_sets) {
    if (set.size() != k) {
      fail(ErrorCode::kInvalidArgument, "weight_search: prediction sets differ in method count");
    }
  }

  std::vector<WeightScore> ranked;
  for (auto& w : simplex_grid(k, units)) {
    const auto cfg = FusionConfig::make(w, alpha);
    double sum = 0.0;
    for (const auto& set : prediction_sets) sum += fuse(set, cfg).stats.reliable_fraction;
    ranked.push_back({std::move(w), sum / static_cast<double>(prediction_sets.size())});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const WeightScore& a, const WeightScore& b) {
    return a.mean_reliable_fraction > b.mean_reliable_fraction;
  });
  return ranked;
}

inline std::vector<WeightScore> weight_search(const std::vector<std::vector<LabelMap>>& sets,
                                              double grid_step, double alpha) {
  return weight_search(std::span<const std::vector<LabelMap>>(sets), grid_step, alpha);
}

// ---- structured-text forms ----

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = {{"methods", c.method_names},
       {"weights", c.weights},
       {"alpha", c.alpha},
       {"tie_policy", "highest_weight_method"}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  c.method_names = j.at("methods").get<std::vector<std::string>>();
  c.weights = j.at("weights").get<std::vector<double>>();
  c.alpha = j.value("alpha", 0.7);
  const auto tie = j.value("tie_policy", std::string("highest_weight_method"));
  if (tie != "highest_weight_method") {
    fail(ErrorCode::kInvalidArgument, "unknown tie_policy '" + tie + "'");
  }
  c.tie_policy = TiePolicy::kHighestWeightMethod;
  c.validate();
}

inline void to_json(nlohmann::json& j, const EditOp& e) {
  j = {{"row", e.row}, {"col_start", e.col_start}, {"col_end", e.col_end}, {"label", e.label}};
}

inline void from_json(const nlohmann::json& j, EditOp& e) {
  e.row = j.at("row").get<int>();
  e.col_start = j.at("col_start").get<int>();
  e.col_end = j.at("col_end").get<int>();
  const int label = j.at("label").get<int>();
  if (label < 0 || label > 255) fail(ErrorCode::kValidation, "edit label out of byte range");
  e.label = static_cast<ClassId>(label);
}

inline void to_json(nlohmann::json& j, const FusionStats& s) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, f] : s.per_class_reliable_fraction) per_class[std::to_string(cls)] = f;
  j = {{"total_pixels", s.total_pixels},
       {"reliable_pixels", s.reliable_pixels},
       {"reliable_fraction", s.reliable_fraction},
       {"per_class_reliable_fraction", per_class}};
}

inline void from_json(const nlohmann::json& j, FusionStats& s) {
  s.total_pixels = j.at("total_pixels").get<std::size_t>();
  s.reliable_pixels = j.at("reliable_pixels").get<std::size_t>();
  s.reliable_fraction = j.at("reliable_fraction").get<double>();
  s.per_class_reliable_fraction.clear();
  for (const auto& [key, value] : j.at("per_class_reliable_fraction").items()) {
    s.per_class_reliable_fraction[static_cast<ClassId>(std::stoi(key))] = value.get<double>();
  }
}

}  // namespace segfuse
