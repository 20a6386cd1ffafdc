#pragma once

// Dataset manifest: one JSON object per line.
//
//   image_id  text, unique within the manifest            (required)
//   image     path to the RGB frame                       (required)
//   weather   array of tags from the weather vocabulary   (default [])
//   split     "train" | "val" | "test" | "unassigned"     (default "unassigned")
//   semantic  path to the semantic label map              (optional)
//   instance  path stem of the instance map (.png/.json)  (optional)
//   status    "raw" | "fused" | "annotating" | "finalized" (default "raw")
//
// Any other key is carried through untouched. Records that were not modified
// since loading are written back byte-for-byte.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segfuse/error.hpp"
#include "segfuse/png_codec.hpp"

namespace segfuse {

enum class Split { kTrain, kVal, kTest, kUnassigned };
enum class EntryStatus { kRaw, kFused, kAnnotating, kFinalized };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

inline std::string_view to_string(EntryStatus s) {
  switch (s) {
    case EntryStatus::kRaw: return "raw";
    case EntryStatus::kFused: return "fused";
    case EntryStatus::kAnnotating: return "annotating";
    case EntryStatus::kFinalized: return "finalized";
  }
  return "raw";
}

inline Split parse_split(std::string_view s) {
  for (auto v : {Split::kTrain, Split::kVal, Split::kTest, Split::kUnassigned}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCode::kValidation, "unknown split '" + std::string(s) + "'");
}

inline EntryStatus parse_status(std::string_view s) {
  for (auto v : {EntryStatus::kRaw, EntryStatus::kFused, EntryStatus::kAnnotating,
                 EntryStatus::kFinalized}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCode::kValidation, "unknown status '" + std::string(s) + "'");
}

inline const std::set<std::string>& default_weather_vocabulary() {
  static const std::set<std::string> kTags = {"rainy", "droplet", "fog", "night", "sunny"};
  return kTags;
}

struct ManifestEntry {
  std::string image_id;
  std::string image_ref;
  std::set<std::string> weather;
  Split split = Split::kUnassigned;
  std::optional<std::string> semantic_ref;
  std::optional<std::string> instance_ref;
  EntryStatus status = EntryStatus::kRaw;
  nlohmann::json extra = nlohmann::json::object();

  // Canonical record as loaded and its original text, used for byte-exact
  // write-back of untouched records.
  nlohmann::json loaded;
  std::string source_line;

  nlohmann::json to_record() const {
    nlohmann::json j = extra;
    j["image_id"] = image_id;
    j["image"] = image_ref;
    j["weather"] = weather;
    j["split"] = to_string(split);
    if (semantic_ref) j["semantic"] = *semantic_ref;
    if (instance_ref) j["instance"] = *instance_ref;
    j["status"] = to_string(status);
    return j;
  }

};

inline ManifestEntry parse_manifest_record(const std::string& line,
                                           const std::set<std::string>& vocabulary =
                                               default_weather_vocabulary()) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kFormat, "record is not an object");

  ManifestEntry e;
  auto take_string = [&](const char* key, bool required) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) fail(ErrorCode::kFormat, std::string("missing field '") + key + "'");
      return std::nullopt;
    }
    if (!it->is_string()) fail(ErrorCode::kFormat, std::string("field '") + key + "' must be a string");
    std::string v = it->get<std::string>();
    j.erase(it);
    return v;
  };
  e.image_id = *take_string("image_id", true);
  if (e.image_id.empty()) fail(ErrorCode::kValidation, "empty image_id");
  e.image_ref = *take_string("image", true);
  if (auto it = j.find("weather"); it != j.end()) {
    if (!it->is_array()) fail(ErrorCode::kFormat, "field 'weather' must be an array");
    for (const auto& tag : *it) {
      if (!tag.is_string()) fail(ErrorCode::kFormat, "weather tags must be strings");
      const auto t = tag.get<std::string>();
      if (!vocabulary.contains(t)) fail(ErrorCode::kValidation, "unknown weather tag '" + t + "'");
      e.weather.insert(t);
    }
    j.erase(it);
  }
  if (auto s = take_string("split", false)) e.split = parse_split(*s);
  e.semantic_ref = take_string("semantic", false);
  e.instance_ref = take_string("instance", false);
  if (auto s = take_string("status", false)) e.status = parse_status(*s);
  if (e.status == EntryStatus::kFinalized && !e.semantic_ref) {
    fail(ErrorCode::kValidation, "finalized entry '" + e.image_id + "' has no semantic reference");
  }
  e.extra = std::move(j);
  e.loaded = e.to_record();
  e.source_line = line;
  return e;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                                 const std::set<std::string>& vocabulary =
                                                     default_weather_vocabulary()) {
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      auto e = parse_manifest_record(line, vocabulary);
      if (!ids.insert(e.image_id).second) {
        fail(ErrorCode::kValidation, "duplicate image_id '" + e.image_id + "'");
      }
      out.push_back(std::move(e));
    } catch (const Error& err) {
      throw Error(err.code(), "manifest line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return out;
}

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (!e.source_line.empty() && e.to_record() == e.loaded) {
      out += e.source_line;
    } else {
      out += e.to_record().dump();
    }
    out += '\n';
  }
  return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path,
                                                const std::set<std::string>& vocabulary =
                                                    default_weather_vocabulary()) {
  try {
    return parse_manifest(read_text(path), vocabulary);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::filesystem::path& path) {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.image_id).second) {
      fail(ErrorCode::kValidation, "duplicate image_id '" + e.image_id + "'");
    }
    if (e.status == EntryStatus::kFinalized && !e.semantic_ref) {
      fail(ErrorCode::kValidation, "finalized entry '" + e.image_id + "' has no semantic reference");
    }
  }
  // write-then-rename keeps readers from seeing a half-written manifest
  auto tmp = path;
  tmp += ".tmp";
  write_text(tmp, format_manifest(entries));
  std::filesystem::rename(tmp, path);
}

// Uniform integer in [0, n) from a 64-bit engine by rejection; unlike
// std::uniform_int_distribution the sequence is the same on every platform.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = 0;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

struct SplitRatios {
  int train = 7;
  int val = 1;
  int test = 2;
};

// Split sizes floor(n*r/sum); leftover entries go to TRAIN, then VAL.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  const std::uint64_t total = static_cast<std::uint64_t>(ratios.train) + ratios.val + ratios.test;
  std::array<std::size_t, 3> sizes = {
      static_cast<std::size_t>(n * static_cast<std::uint64_t>(ratios.train) / total),
      static_cast<std::size_t>(n * static_cast<std::uint64_t>(ratios.val) / total),
      static_cast<std::size_t>(n * static_cast<std::uint64_t>(ratios.test) / total)};
  std::size_t left = n - sizes[0] - sizes[1] - sizes[2];
  for (std::size_t i = 0; left > 0; i = (i + 1) % 2, --left) ++sizes[i];
  return sizes;
}

// Seeded Fisher-Yates over entry positions; the first block of the shuffled
// order becomes TRAIN, the next VAL, the rest TEST. Entry order is kept.
inline std::vector<ManifestEntry> split_dataset(std::vector<ManifestEntry> entries,
                                                const SplitRatios& ratios, std::uint64_t seed) {
  if (entries.empty()) fail(ErrorCode::kInvalidArgument, "split_dataset: no entries");
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
    fail(ErrorCode::kInvalidArgument, "split ratios must be positive integers");
  }
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_below(rng, i + 1)]);
  }
  const auto sizes = split_sizes(entries.size(), ratios);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    auto& e = entries[order[pos]];
    if (pos < sizes[0]) {
      e.split = Split::kTrain;
    } else if (pos < sizes[0] + sizes[1]) {
      e.split = Split::kVal;
    } else {
      e.split = Split::kTest;
    }
  }
  return entries;
}

inline SplitRatios parse_ratios(const std::string& text) {
  std::vector<int> parts;
  std::size_t pos = 0;
  while (true) {
    const auto end = text.find(':', pos);
    const auto piece = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (piece.empty() || used != piece.size()) {
      fail(ErrorCode::kInvalidArgument, "ratios must look like 7:1:2 (got '" + text + "')");
    }
    parts.push_back(v);
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  if (parts.size() != 3) {
    fail(ErrorCode::kInvalidArgument, "ratios must have three parts (got '" + text + "')");
  }
  const SplitRatios r{parts[0], parts[1], parts[2]};
  if (r.train <= 0 || r.val <= 0 || r.test <= 0) {
    fail(ErrorCode::kInvalidArgument, "split ratios must be positive integers");
  }
  return r;
}

// Conjunctive entry filter; unset parts match everything.
struct EntryFilter {
  std::set<std::string> require_weather;
  std::set<std::string> exclude_weather;
  std::optional<std::set<Split>> splits;
  std::optional<std::set<EntryStatus>> statuses;

  bool matches(const ManifestEntry& e) const {
    for (const auto& t : require_weather) {
      if (!e.weather.contains(t)) return false;
    }
    for (const auto& t : exclude_weather) {
      if (e.weather.contains(t)) return false;
    }
    if (splits && !splits->contains(e.split)) return false;
    if (statuses && !statuses->contains(e.status)) return false;
    return true;
  }
};

inline std::vector<ManifestEntry> filter_entries(const std::vector<ManifestEntry>& entries,
                                                 const std::function<bool(const ManifestEntry&)>& pred) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (!pred || pred(e)) out.push_back(e);
  }
  return out;
}

inline std::vector<ManifestEntry> filter_entries(const std::vector<ManifestEntry>& entries,
                                                 const EntryFilter& filter) {
  return filter_entries(entries, [&](const ManifestEntry& e) { return filter.matches(e); });
}

struct ManifestSummary {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_weather;
  std::map<Split, std::size_t> per_split;
  std::map<EntryStatus, std::size_t> per_status;
};

inline ManifestSummary summarize_manifest(const std::vector<ManifestEntry>& entries) {
  ManifestSummary s;
  s.total = entries.size();
  for (const auto& e : entries) {
    for (const auto& t : e.weather) ++s.per_weather[t];
    ++s.per_split[e.split];
    ++s.per_status[e.status];
  }
  return s;
}

// Relative references resolve against the manifest's directory.
inline std::filesystem::path resolve_ref(const std::filesystem::path& manifest_path,
                                         const std::string& ref) {
  std::filesystem::path p(ref);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace segfuse
