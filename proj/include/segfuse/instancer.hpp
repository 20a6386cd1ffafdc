#pragma once

// Semantic -> instance conversion by 8-connected component splitting, plus
// manual merge/split corrections.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "segfuse/error.hpp"
#include "segfuse/png_codec.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

using InstanceId = std::uint32_t;

struct InstanceMap {
  Grid<InstanceId> ids;                // 0 = no instance
  std::map<InstanceId, ClassId> table; // instance id -> class id

  int width() const noexcept { return ids.width(); }
  int height() const noexcept { return ids.height(); }

  friend bool operator==(const InstanceMap&, const InstanceMap&) = default;
};

// person, rider, car, truck, bus, train, motorcycle, bicycle.
inline std::set<ClassId> default_instance_classes() { return {11, 12, 13, 14, 15, 16, 17, 18}; }

struct Components {
  Grid<InstanceId> ids;  // 1..count in scanline order of each component's first pixel
  InstanceId count = 0;
};

namespace detail {

class DisjointSet {
 public:
  InstanceId add() {
    parent_.push_back(static_cast<InstanceId>(parent_.size()));
    return parent_.back();
  }
  InstanceId find(InstanceId x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(InstanceId a, InstanceId b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // keep the smaller (earlier-created) label as root
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<InstanceId> parent_;
};

}  // namespace detail

// Two-pass union-find labeling. Pixels with include(value) true are joined
// to 8-neighbors holding the same value.
template <typename T, typename Include>
Components label_components(const Grid<T>& g, Include include) {
  const int w = g.width();
  const int h = g.height();
  Grid<InstanceId> provisional(w, h, 0);
  detail::DisjointSet sets;
  sets.add();  // slot 0 = background

  static constexpr int kPrev[4][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const T v = g.at(r, c);
      if (!include(v)) continue;
      InstanceId label = 0;
      for (const auto& d : kPrev) {
        const int rr = r + d[0];
        const int cc = c + d[1];
        if (!g.contains(rr, cc) || provisional.at(rr, cc) == 0 || g.at(rr, cc) != v) continue;
        if (label == 0) {
          label = provisional.at(rr, cc);
        } else {
          sets.unite(label, provisional.at(rr, cc));
        }
      }
      provisional.at(r, c) = label == 0 ? sets.add() : label;
    }
  }

  Components out{Grid<InstanceId>(w, h, 0), 0};
  std::map<InstanceId, InstanceId> final_id;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (provisional[i] == 0) continue;
    const InstanceId root = sets.find(provisional[i]);
    auto [it, inserted] = final_id.try_emplace(root, out.count + 1);
    if (inserted) ++out.count;
    out.ids[i] = it->second;
  }
  return out;
}

// One instance per 8-connected same-class component of an instance class.
inline InstanceMap split_instances(const LabelMap& labels,
                                   const std::set<ClassId>& instance_classes = default_instance_classes()) {
  auto comps = label_components(labels, [&](ClassId v) { return instance_classes.contains(v); });
  InstanceMap m{std::move(comps.ids), {}};
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    if (m.ids[i] != 0) m.table.try_emplace(m.ids[i], labels[i]);
  }
  return m;
}

struct MergeInstances {
  std::set<InstanceId> ids;
};

struct SplitInstance {
  InstanceId id = 0;
  std::vector<PixelCoord> separator;
};

using InstanceEdit = std::variant<MergeInstances, SplitInstance>;

struct InstanceEditResult {
  InstanceMap map;
  std::vector<std::string> warnings;
};

namespace detail {

inline void require_instance(const InstanceMap& m, InstanceId id) {
  if (id == 0 || !m.table.contains(id)) {
    fail(ErrorCode::kNotFound, "unknown instance id " + std::to_string(id));
  }
}

inline void apply_merge(InstanceMap& m, const MergeInstances& e) {
  if (e.ids.empty()) fail(ErrorCode::kValidation, "merge needs at least one instance id");
  for (auto id : e.ids) require_instance(m, id);
  const InstanceId keep = *e.ids.begin();
  const ClassId cls = m.table.at(keep);
  for (auto id : e.ids) {
    if (m.table.at(id) != cls) {
      fail(ErrorCode::kValidation, "cannot merge instances " + std::to_string(keep) + " and " +
                                       std::to_string(id) + " of different classes");
    }
  }
  for (auto& v : m.ids.values()) {
    if (v != keep && e.ids.contains(v)) v = keep;
  }
  for (auto id : e.ids) {
    if (id != keep) m.table.erase(id);
  }
}

inline void apply_split(InstanceMap& m, const SplitInstance& e, std::vector<std::string>& warnings) {
  require_instance(m, e.id);
  for (const auto& p : e.separator) {
    if (!m.ids.contains(p.row, p.col) || m.ids.at(p.row, p.col) != e.id) {
      fail(ErrorCode::kValidation, "separator pixel " + to_string(p) + " is not inside instance " +
                                       std::to_string(e.id));
    }
  }
  if (e.separator.empty()) {
    warnings.push_back("split of instance " + std::to_string(e.id) + ": empty separator, no change");
    return;
  }

  Grid<std::uint8_t> keep(m.width(), m.height(), 0);
  for (std::size_t i = 0; i < m.ids.size(); ++i) keep[i] = m.ids[i] == e.id;
  for (const auto& p : e.separator) keep.at(p.row, p.col) = 0;
  const auto comps = label_components(keep, [](std::uint8_t v) { return v != 0; });
  if (comps.count < 2) {
    warnings.push_back("split of instance " + std::to_string(e.id) +
                       ": separator does not disconnect it, no change");
    return;
  }

  const InstanceId base = m.table.rbegin()->first;
  if (base > std::numeric_limits<InstanceId>::max() - comps.count) {
    fail(ErrorCode::kValidation, "instance id space exhausted");
  }
  std::vector<PixelCoord> first(comps.count + 1, PixelCoord{-1, -1});
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const InstanceId k = comps.ids.at(r, c);
      if (k != 0 && first[k].row < 0) first[k] = {r, c};
    }
  }
  const ClassId cls = m.table.at(e.id);
  m.table.erase(e.id);
  for (InstanceId k = 1; k <= comps.count; ++k) m.table.emplace(base + k, cls);
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    if (comps.ids[i] != 0) m.ids[i] = base + comps.ids[i];
  }
  for (const auto& p : e.separator) {
    InstanceId best = 1;
    long long best_d = std::numeric_limits<long long>::max();
    for (InstanceId k = 1; k <= comps.count; ++k) {
      const long long dr = p.row - first[k].row;
      const long long dc = p.col - first[k].col;
      const long long d = dr * dr + dc * dc;
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    m.ids.at(p.row, p.col) = base + best;
  }
}

}  // namespace detail

// MERGE keeps the smallest id. SPLIT relabels the pieces left after removing
// the separator with fresh ids (max id + 1, ...) in scanline order and hands
// each separator pixel to the piece whose first pixel is nearest.
inline InstanceEditResult apply_instance_edits(InstanceMap m, std::span<const InstanceEdit> edits) {
  InstanceEditResult out;
  for (const auto& edit : edits) {
    if (const auto* merge = std::get_if<MergeInstances>(&edit)) {
      detail::apply_merge(m, *merge);
    } else {
      detail::apply_split(m, std::get<SplitInstance>(edit), out.warnings);
    }
  }
  out.map = std::move(m);
  return out;
}

inline InstanceEditResult apply_instance_edits(InstanceMap m, const std::vector<InstanceEdit>& edits) {
  return apply_instance_edits(std::move(m), std::span<const InstanceEdit>(edits));
}

// ---- persistence: 16-bit id raster + table document ----

struct InstanceSummary {
  InstanceId id = 0;
  ClassId cls = 0;
  std::size_t pixels = 0;
  int row = 0, col = 0, height = 0, width = 0;  // bounding box
};

inline std::vector<InstanceSummary> summarize_instances(const InstanceMap& m) {
  std::map<InstanceId, InstanceSummary> acc;
  std::map<InstanceId, std::array<int, 4>> box;  // rmin, cmin, rmax, cmax
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const InstanceId id = m.ids.at(r, c);
      if (id == 0) continue;
      auto& s = acc[id];
      s.id = id;
      ++s.pixels;
      auto [it, fresh] = box.try_emplace(id, std::array<int, 4>{r, c, r, c});
      if (!fresh) {
        auto& b = it->second;
        b[0] = std::min(b[0], r);
        b[1] = std::min(b[1], c);
        b[2] = std::max(b[2], r);
        b[3] = std::max(b[3], c);
      }
    }
  }
  std::vector<InstanceSummary> out;
  for (const auto& [id, cls] : m.table) {
    InstanceSummary s = acc.contains(id) ? acc[id] : InstanceSummary{id};
    s.cls = cls;
    if (box.contains(id)) {
      const auto& b = box[id];
      s.row = b[0];
      s.col = b[1];
      s.height = b[2] - b[0] + 1;
      s.width = b[3] - b[1] + 1;
    }
    out.push_back(s);
  }
  return out;
}

inline nlohmann::json instance_table_json(const InstanceMap& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : summarize_instances(m)) {
    rows.push_back({{"id", s.id},
                    {"class", s.cls},
                    {"pixels", s.pixels},
                    {"bbox", {s.row, s.col, s.height, s.width}}});
  }
  return {{"width", m.width()}, {"height", m.height()}, {"instances", rows}};
}

inline Gray16 instance_raster(const InstanceMap& m) {
  Gray16 g(m.width(), m.height());
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    if (m.ids[i] > 0xffff) {
      fail(ErrorCode::kValidation, "instance id " + std::to_string(m.ids[i]) +
                                       " does not fit the 16-bit raster");
    }
    g[i] = static_cast<std::uint16_t>(m.ids[i]);
  }
  return g;
}

inline InstanceMap instance_map_from(const Gray16& raster, const nlohmann::json& table) {
  InstanceMap m{Grid<InstanceId>(raster.width(), raster.height()), {}};
  for (const auto& row : table.at("instances")) {
    const int cls = row.at("class").get<int>();
    if (cls < 0 || cls >= kUnlabeled) fail(ErrorCode::kValidation, "instance table class out of range");
    m.table[row.at("id").get<InstanceId>()] = static_cast<ClassId>(cls);
  }
  for (std::size_t i = 0; i < raster.size(); ++i) {
    m.ids[i] = raster[i];
    if (raster[i] != 0 && !m.table.contains(raster[i])) {
      fail(ErrorCode::kValidation, "instance id " + std::to_string(raster[i]) +
                                       " is missing from the instance table");
    }
  }
  return m;
}

// Writes `<stem>.png` and `<stem>.json`.
inline void save_instances(const std::filesystem::path& stem, const InstanceMap& m) {
  auto png = stem;
  png += ".png";
  auto table = stem;
  table += ".json";
  write_file(png, encode_gray16(instance_raster(m)));
  write_text(table, instance_table_json(m).dump(2) + "\n");
}

inline InstanceMap load_instances(const std::filesystem::path& stem) {
  auto png = stem;
  png += ".png";
  auto table = stem;
  table += ".json";
  return instance_map_from(decode_gray16(read_file(png)), nlohmann::json::parse(read_text(table)));
}

inline void to_json(nlohmann::json& j, const InstanceEdit& e) {
  if (const auto* merge = std::get_if<MergeInstances>(&e)) {
    j = {{"kind", "merge"}, {"ids", merge->ids}};
  } else {
    const auto& split = std::get<SplitInstance>(e);
    nlohmann::json sep = nlohmann::json::array();
    for (const auto& p : split.separator) sep.push_back({p.row, p.col});
    j = {{"kind", "split"}, {"id", split.id}, {"separator", sep}};
  }
}

inline void from_json(const nlohmann::json& j, InstanceEdit& e) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "merge") {
    e = MergeInstances{j.at("ids").get<std::set<InstanceId>>()};
  } else if (kind == "split") {
    SplitInstance s{j.at("id").get<InstanceId>(), {}};
    for (const auto& p : j.value("separator", nlohmann::json::array())) {
      s.separator.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    e = std::move(s);
  } else {
    fail(ErrorCode::kValidation, "unknown instance edit kind '" + kind + "'");
  }
}

}  // namespace segfuse
