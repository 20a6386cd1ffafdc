#pragma once

// Evaluation: class-averaged IoU, map disagreement, instance AP, masked
// weighted L1 between images, and dataset class/segment/instance counts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "segfuse/error.hpp"
#include "segfuse/instancer.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

// ---------------------------------------------------------------- mIoU

struct ClassIoU {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  std::optional<double> iou;  // absent when union_ == 0
};

struct IoUReport {
  std::map<ClassId, ClassIoU> per_class;
  double mean_iou = 0.0;
  std::size_t classes_counted = 0;
};

// Accumulates intersection/union counts over any number of image pairs.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(ClassId ignore = kUnlabeled) : ignore_(ignore) {}

  void add(const LabelMap& pred, const LabelMap& gt) {
    require_same_shape(pred, gt, "miou");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const ClassId g = gt[i];
      if (g == ignore_ || g == kUnlabeled) continue;
      const ClassId p = pred[i];
      ++gt_count_[g];
      ++pred_count_[p];
      if (p == g) ++hits_[g];
    }
  }

  IoUAccumulator& merge(const IoUAccumulator& o) {
    for (int c = 0; c < 256; ++c) {
      gt_count_[c] += o.gt_count_[c];
      pred_count_[c] += o.pred_count_[c];
      hits_[c] += o.hits_[c];
    }
    return *this;
  }

  // Classes listed in `catalog` with zero union are reported with no iou.
  IoUReport report(const ClassCatalog* catalog = nullptr) const {
    IoUReport r;
    std::set<ClassId> classes;
    for (int c = 0; c < 256; ++c) {
      if (gt_count_[c] + pred_count_[c] > 0) classes.insert(static_cast<ClassId>(c));
    }
    classes.erase(kUnlabeled);
    classes.erase(ignore_);
    if (catalog != nullptr) {
      for (const auto& info : catalog->classes()) classes.insert(info.id);
    }
    double sum = 0.0;
    for (ClassId c : classes) {
      ClassIoU entry;
      entry.intersection = hits_[c];
      entry.union_ = gt_count_[c] + pred_count_[c] - hits_[c];
      if (entry.union_ > 0) {
        entry.iou = static_cast<double>(entry.intersection) / static_cast<double>(entry.union_);
        sum += *entry.iou;
        ++r.classes_counted;
      }
      r.per_class[c] = entry;
    }
    r.mean_iou = r.classes_counted == 0 ? 0.0 : sum / static_cast<double>(r.classes_counted);
    return r;
  }

 private:
  ClassId ignore_;
  std::array<std::uint64_t, 256> gt_count_{};
  std::array<std::uint64_t, 256> pred_count_{};
  std::array<std::uint64_t, 256> hits_{};
};

// Pixels whose ground truth is `ignore` (or the sentinel) are skipped; the
// mean runs over classes with nonzero union.
inline IoUReport miou(const LabelMap& pred, const LabelMap& gt, ClassId ignore = kUnlabeled) {
  IoUAccumulator acc(ignore);
  acc.add(pred, gt);
  return acc.report();
}

// ---------------------------------------------------------- disagreement

struct DisagreementCounts {
  std::uint64_t compared = 0;
  std::uint64_t differ = 0;

  double fraction() const {
    return compared == 0 ? 0.0 : static_cast<double>(differ) / static_cast<double>(compared);
  }
  DisagreementCounts& operator+=(const DisagreementCounts& o) {
    compared += o.compared;
    differ += o.differ;
    return *this;
  }
};

// A pixel is compared only when neither map carries an excluded class there.
inline DisagreementCounts disagreement_counts(const LabelMap& a, const LabelMap& b,
                                              const std::set<ClassId>& exclude = {}) {
  require_same_shape(a, b, "disagreement_fraction");
  DisagreementCounts n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (exclude.contains(a[i]) || exclude.contains(b[i])) continue;
    ++n.compared;
    n.differ += a[i] != b[i];
  }
  return n;
}

// Fraction of compared pixels where a != b; 0 when nothing is compared.
inline double disagreement_fraction(const LabelMap& a, const LabelMap& b,
                                    const std::set<ClassId>& exclude = {}) {
  return disagreement_counts(a, b, exclude).fraction();
}

// ---------------------------------------------------------- instance AP

inline std::vector<double> default_ap_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct MatchedPair {
  double threshold = 0.0;
  ClassId cls = 0;
  InstanceId pred_id = 0;
  InstanceId gt_id = 0;
  double iou = 0.0;
};

struct APReport {
  std::map<double, double> per_threshold;  // mean over evaluated classes
  double ap = 0.0;
  std::vector<ClassId> classes_evaluated;
  std::vector<MatchedPair> matched_pairs;
};

// Per class present in gt and per threshold t: greedy one-to-one matching in
// descending mask IoU (ties by pred id, then gt id); a pair counts when
// IoU >= t. Score = TP / (TP + FP + FN). ap averages over thresholds and
// evaluated classes; it is 0 when gt holds no instance of a requested class.
inline APReport instance_ap(const InstanceMap& pred, const InstanceMap& gt,
                            const std::set<ClassId>& classes,
                            std::span<const double> thresholds) {
  require_same_shape(pred.ids, gt.ids, "instance_ap");
  if (thresholds.empty()) fail(ErrorCode::kInvalidArgument, "instance_ap: no thresholds");
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) fail(ErrorCode::kInvalidArgument, "instance_ap: thresholds must lie in (0, 1]");
  }

  std::map<InstanceId, std::uint64_t> pred_area;
  std::map<InstanceId, std::uint64_t> gt_area;
  std::map<std::pair<InstanceId, InstanceId>, std::uint64_t> overlap;
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    const InstanceId p = pred.ids[i];
    const InstanceId g = gt.ids[i];
    if (p != 0) ++pred_area[p];
    if (g != 0) ++gt_area[g];
    if (p != 0 && g != 0) ++overlap[{p, g}];
  }

  APReport report;
  for (double t : thresholds) report.per_threshold[t] = 0.0;

  for (ClassId cls : classes) {
    std::vector<InstanceId> gts;
    std::vector<InstanceId> preds;
    for (const auto& [id, c] : gt.table) {
      if (c == cls) gts.push_back(id);
    }
    for (const auto& [id, c] : pred.table) {
      if (c == cls) preds.push_back(id);
    }
    if (gts.empty()) continue;
    report.classes_evaluated.push_back(cls);

    struct Candidate {
      double iou;
      InstanceId p;
      InstanceId g;
    };
    std::vector<Candidate> cands;
    for (const auto& [key, inter] : overlap) {
      const auto [p, g] = key;
      if (pred.table.at(p) != cls || gt.table.at(g) != cls) continue;
      const auto uni = pred_area[p] + gt_area[g] - inter;
      cands.push_back({static_cast<double>(inter) / static_cast<double>(uni), p, g});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return std::tie(b.iou, a.p, a.g) < std::tie(a.iou, b.p, b.g);
    });

    for (double t : thresholds) {
      std::set<InstanceId> used_p;
      std::set<InstanceId> used_g;
      std::size_t tp = 0;
      for (const auto& c : cands) {
        if (c.iou < t) break;
        if (used_p.contains(c.p) || used_g.contains(c.g)) continue;
        used_p.insert(c.p);
        used_g.insert(c.g);
        ++tp;
        report.matched_pairs.push_back({t, cls, c.p, c.g, c.iou});
      }
      const std::size_t fp = preds.size() - tp;
      const std::size_t fn = gts.size() - tp;
      report.per_threshold[t] += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    }
  }

  if (!report.classes_evaluated.empty()) {
    double sum = 0.0;
    for (auto& [t, v] : report.per_threshold) {
      v /= static_cast<double>(report.classes_evaluated.size());
      sum += v;
    }
    report.ap = sum / static_cast<double>(report.per_threshold.size());
  }
  return report;
}

inline APReport instance_ap(const InstanceMap& pred, const InstanceMap& gt,
                            const std::set<ClassId>& classes = default_instance_classes()) {
  const auto t = default_ap_thresholds();
  return instance_ap(pred, gt, classes, t);
}

// ------------------------------------------------- masked weighted L1

// Coarse taxonomy with per-label importance and the projection from the
// fine label set onto it.
struct MaskedDistanceConfig {
  ClassCatalog taxonomy;
  std::map<ClassId, ClassId> projection;  // fine id -> taxonomy id

  void validate(const ClassCatalog& fine) const {
    for (const auto& c : fine.classes()) {
      auto it = projection.find(c.id);
      if (it == projection.end()) {
        fail(ErrorCode::kValidation, "projection has no entry for class " + std::to_string(c.id) +
                                         " (" + c.name + ")");
      }
      if (!taxonomy.contains(it->second)) {
        fail(ErrorCode::kValidation, "projection maps class " + std::to_string(c.id) +
                                         " to unknown taxonomy id " + std::to_string(it->second));
      }
    }
  }
};

// road, traffic lights, vegetation, sky, people, vehicles, other with
// weights 2, 3, 1, 0.2, 1, 2, 1. The fine->coarse mapping is a shipped
// default, not a normative one.
inline MaskedDistanceConfig default_masked_distance_config() {
  ClassCatalog taxonomy({
      {0, "road", {128, 64, 128}, 2.0},
      {1, "traffic lights", {250, 170, 30}, 3.0},
      {2, "vegetation", {107, 142, 35}, 1.0},
      {3, "sky", {70, 130, 180}, 0.2},
      {4, "people", {220, 20, 60}, 1.0},
      {5, "vehicles", {0, 0, 142}, 2.0},
      {6, "other", {128, 128, 128}, 1.0},
  });
  std::map<ClassId, ClassId> proj = {
      {0, 0},                                                        // road
      {1, 6}, {2, 6}, {3, 6}, {4, 6}, {5, 6},                        // sidewalk .. pole
      {6, 1},                                                        // traffic light
      {7, 6},                                                        // traffic sign
      {8, 2}, {9, 2},                                                // vegetation, terrain
      {10, 3},                                                       // sky
      {11, 4}, {12, 4},                                              // person, rider
      {13, 5}, {14, 5}, {15, 5}, {16, 5}, {17, 5}, {18, 5},          // vehicles
  };
  return {std::move(taxonomy), std::move(proj)};
}

// sum_i (lambda_i / p_i) * sum over label-i pixels and channels of |x - y|.
// Sentinel pixels belong to no label; labels with p_i = 0 contribute 0.
inline double masked_weighted_l1(const Image& x, const Image& y, const LabelMap& labels,
                                 const MaskedDistanceConfig& cfg) {
  require_same_shape(x, y, "masked_weighted_l1 images");
  if (!x.same_shape(labels)) require_same_shape(x, labels, "masked_weighted_l1 labels");
  const std::size_t m = cfg.taxonomy.size();
  std::vector<std::uint64_t> pixels(m, 0);
  std::vector<std::uint64_t> abs_sum(m, 0);
  for (int r = 0; r < labels.height(); ++r) {
    for (int c = 0; c < labels.width(); ++c) {
      const ClassId fine = labels.at(r, c);
      if (fine == kUnlabeled) continue;
      auto it = cfg.projection.find(fine);
      if (it == cfg.projection.end()) {
        fail(ErrorCode::kValidation, "class " + std::to_string(fine) + " at pixel " +
                                         to_string(PixelCoord{r, c}) + " has no projection");
      }
      const ClassId coarse = it->second;
      ++pixels[coarse];
      for (int ch = 0; ch < 3; ++ch) {
        abs_sum[coarse] += static_cast<std::uint64_t>(
            std::abs(static_cast<int>(x.channel(r, c, ch)) - static_cast<int>(y.channel(r, c, ch))));
      }
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (pixels[i] == 0) continue;
    total += cfg.taxonomy[static_cast<ClassId>(i)].lambda / static_cast<double>(pixels[i]) *
             static_cast<double>(abs_sum[i]);
  }
  return total;
}

// ------------------------------------------------------- dataset stats

struct ClassCounts {
  std::uint64_t pixels = 0;
  std::uint64_t segments = 0;   // 8-connected same-class components
  std::uint64_t instances = 0;  // instance-table entries of this class
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct StatsReport {
  std::size_t images = 0;
  std::map<ClassId, ClassCounts> per_class;
};

struct StatsEntry {
  LabelMap labels;
  std::optional<InstanceMap> instances;
};

inline void accumulate_stats(StatsReport& report, const LabelMap& labels,
                             const InstanceMap* instances) {
  ++report.images;
  for (auto v : labels.values()) {
    if (v != kUnlabeled) ++report.per_class[v].pixels;
  }
  const auto comps = label_components(labels, [](ClassId v) { return v != kUnlabeled; });
  std::vector<bool> seen(comps.count + 1, false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto id = comps.ids[i];
    if (id != 0 && !seen[id]) {
      seen[id] = true;
      ++report.per_class[labels[i]].segments;
    }
  }
  if (instances != nullptr) {
    for (const auto& [id, cls] : instances->table) ++report.per_class[cls].instances;
  }
}

inline StatsReport dataset_stats(std::span<const StatsEntry> entries) {
  StatsReport report;
  for (const auto& e : entries) {
    accumulate_stats(report, e.labels, e.instances ? &*e.instances : nullptr);
  }
  return report;
}

inline StatsReport dataset_stats(const std::vector<StatsEntry>& entries) {
  return dataset_stats(std::span<const StatsEntry>(entries));
}

// ------------------------------------------------------------- records

inline nlohmann::json to_record(const IoUReport& r, const ClassCatalog& catalog) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [cls, e] : r.per_class) {
    nlohmann::json row = {{"class", cls},
                          {"name", catalog.contains(cls) ? catalog[cls].name : std::string("?")},
                          {"intersection", e.intersection},
                          {"union", e.union_}};
    row["iou"] = e.iou ? nlohmann::json(*e.iou) : nlohmann::json(nullptr);
    per.push_back(row);
  }
  return {{"mean_iou", r.mean_iou}, {"classes_counted", r.classes_counted}, {"per_class", per}};
}

inline nlohmann::json to_record(const APReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [t, v] : r.per_threshold) per.push_back({{"threshold", t}, {"score", v}});
  return {{"ap", r.ap}, {"classes_evaluated", r.classes_evaluated}, {"per_threshold", per},
          {"matched_pairs", r.matched_pairs.size()}};
}

inline nlohmann::json to_record(const StatsReport& r, const ClassCatalog& catalog) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [cls, c] : r.per_class) {
    per.push_back({{"class", cls},
                   {"name", catalog.contains(cls) ? catalog[cls].name : std::string("?")},
                   {"pixels", c.pixels},
                   {"segments", c.segments},
                   {"instances", c.instances}});
  }
  return {{"images", r.images}, {"per_class", per}};
}

inline MaskedDistanceConfig masked_distance_config_from_json(const nlohmann::json& j) {
  std::vector<ClassInfo> classes;
  for (const auto& c : j.at("taxonomy")) {
    classes.push_back({static_cast<ClassId>(classes.size()), c.at("name").get<std::string>(),
                       {128, 128, 128}, c.at("lambda").get<double>()});
  }
  MaskedDistanceConfig cfg{ClassCatalog(std::move(classes)), {}};
  for (const auto& [fine, coarse] : j.at("projection").items()) {
    cfg.projection[static_cast<ClassId>(std::stoi(fine))] = coarse.get<ClassId>();
  }
  return cfg;
}

}  // namespace segfuse
