#pragma once

// Annotation task store: task lifecycle (OPEN -> IN_PROGRESS -> FINALIZED),
// optimistic versioning, session timing and finalization. Transport-free;
// http_service.hpp puts it behind HTTP.
//
// Layout under the data directory:
//   tasks/<task_id>.json   one document per task (the event log lives here)
//   rasters/<hash>.png     content-addressed raster store
//   final/<image_id>.png   finalized label map (+ .instances.png/.json)

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "segfuse/catalog.hpp"
#include "segfuse/error.hpp"
#include "segfuse/fused_io.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/instancer.hpp"
#include "segfuse/png_codec.hpp"
#include "segfuse/raster.hpp"

namespace segfuse {

enum class TaskState { kOpen, kInProgress, kFinalized };

inline std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::kOpen: return "open";
    case TaskState::kInProgress: return "in_progress";
    case TaskState::kFinalized: return "finalized";
  }
  return "open";
}

inline TaskState parse_task_state(std::string_view s) {
  for (auto v : {TaskState::kOpen, TaskState::kInProgress, TaskState::kFinalized}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCode::kValidation, "unknown task state '" + std::string(s) + "'");
}

struct Session {
  std::string annotator_id;
  std::int64_t started_at_ms = 0;
  std::int64_t ended_at_ms = 0;
  friend bool operator==(const Session&, const Session&) = default;
};

struct TaskRecord {
  std::string task_id;
  std::string image_id;
  std::uint64_t version = 0;
  TaskState state = TaskState::kOpen;
  std::vector<EditOp> edits;
  std::vector<InstanceEdit> instance_edits;
  std::vector<Session> sessions;

  int width = 0;
  int height = 0;
  double alpha = 0.7;
  FusionStats stats;
  std::string labels_ref;
  std::string uncertainty_ref;
  std::string confidence_ref;
  std::string reliable_ref;
  std::optional<std::string> final_labels_ref;
  std::optional<std::string> final_instances_ref;
  nlohmann::json instance_table;
};

// Version check failed; carries the version the caller should rebase on.
class VersionConflict : public Error {
 public:
  explicit VersionConflict(std::uint64_t current)
      : Error(ErrorCode::kConflict,
              "stale base_version; current version is " + std::to_string(current)),
        current_(current) {}
  std::uint64_t current_version() const noexcept { return current_; }

 private:
  std::uint64_t current_;
};

inline std::string content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = kHex[h & 0xf];
  return out;
}

// Content-addressed PNG store.
class RasterStore {
 public:
  explicit RasterStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string put(std::span<const std::uint8_t> png) {
    const auto ref = content_hash(png);
    const auto p = path_of(ref);
    if (!std::filesystem::exists(p)) {
      auto tmp = p;
      tmp += ".tmp";
      write_file(tmp, png);
      std::filesystem::rename(tmp, p);
    }
    return ref;
  }

  Bytes get(const std::string& ref) const {
    if (ref.size() != 16 || ref.find_first_not_of("0123456789abcdef") != std::string::npos) {
      fail(ErrorCode::kNotFound, "no raster '" + ref + "'");
    }
    const auto p = path_of(ref);
    if (!std::filesystem::exists(p)) fail(ErrorCode::kNotFound, "no raster '" + ref + "'");
    return read_file(p);
  }

  std::filesystem::path path_of(const std::string& ref) const { return dir_ / (ref + ".png"); }

 private:
  std::filesystem::path dir_;
};

inline void to_json(nlohmann::json& j, const Session& s) {
  j = {{"annotator_id", s.annotator_id},
       {"started_at_ms", s.started_at_ms},
       {"ended_at_ms", s.ended_at_ms}};
}

inline void from_json(const nlohmann::json& j, Session& s) {
  s.annotator_id = j.at("annotator_id").get<std::string>();
  s.started_at_ms = j.at("started_at_ms").get<std::int64_t>();
  s.ended_at_ms = j.at("ended_at_ms").get<std::int64_t>();
}

inline void to_json(nlohmann::json& j, const TaskRecord& t) {
  j = {{"task_id", t.task_id},
       {"image_id", t.image_id},
       {"version", t.version},
       {"state", to_string(t.state)},
       {"edits", t.edits},
       {"instance_edits", t.instance_edits},
       {"sessions", t.sessions},
       {"width", t.width},
       {"height", t.height},
       {"alpha", t.alpha},
       {"stats", t.stats},
       {"labels_ref", t.labels_ref},
       {"uncertainty_ref", t.uncertainty_ref},
       {"confidence_ref", t.confidence_ref},
       {"reliable_ref", t.reliable_ref},
       {"instance_table", t.instance_table}};
  if (t.final_labels_ref) j["final_labels_ref"] = *t.final_labels_ref;
  if (t.final_instances_ref) j["final_instances_ref"] = *t.final_instances_ref;
}

inline void from_json(const nlohmann::json& j, TaskRecord& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.image_id = j.at("image_id").get<std::string>();
  t.version = j.at("version").get<std::uint64_t>();
  t.state = parse_task_state(j.at("state").get<std::string>());
  t.edits = j.at("edits").get<std::vector<EditOp>>();
  t.instance_edits = j.at("instance_edits").get<std::vector<InstanceEdit>>();
  t.sessions = j.at("sessions").get<std::vector<Session>>();
  t.width = j.at("width").get<int>();
  t.height = j.at("height").get<int>();
  t.alpha = j.at("alpha").get<double>();
  t.stats = j.at("stats").get<FusionStats>();
  t.labels_ref = j.at("labels_ref").get<std::string>();
  t.uncertainty_ref = j.at("uncertainty_ref").get<std::string>();
  t.confidence_ref = j.at("confidence_ref").get<std::string>();
  t.reliable_ref = j.at("reliable_ref").get<std::string>();
  t.instance_table = j.value("instance_table", nlohmann::json());
  if (j.contains("final_labels_ref")) t.final_labels_ref = j["final_labels_ref"].get<std::string>();
  if (j.contains("final_instances_ref")) {
    t.final_instances_ref = j["final_instances_ref"].get<std::string>();
  }
}

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::filesystem::path manifest_path;
  // Holds one fused-result directory per image id (see fused_io.hpp).
  std::filesystem::path fused_root;
  ClassCatalog catalog = ClassCatalog::street_scene();
  std::set<ClassId> instance_classes = default_instance_classes();
  // Consecutive mutations by one annotator closer than this extend a session.
  std::chrono::milliseconds session_gap = std::chrono::minutes(15);
  std::function<std::int64_t()> clock = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
};

class TaskService {
 public:
  explicit TaskService(ServiceConfig cfg)
      : cfg_(std::move(cfg)), store_(cfg_.data_dir / "rasters") {
    std::filesystem::create_directories(cfg_.data_dir / "tasks");
    reload();
  }

  TaskService(const TaskService&) = delete;
  TaskService& operator=(const TaskService&) = delete;

  const ServiceConfig& config() const noexcept { return cfg_; }
  const RasterStore& rasters() const noexcept { return store_; }

  // Reads the fused result for `image_id` from the fused root.
  TaskRecord create_task(const std::string& image_id) {
    std::lock_guard manifest_lock(manifest_mutex_);
    check_creatable(image_id);
    const auto dir = cfg_.fused_root / image_id;
    if (!std::filesystem::exists(dir / "labels.png")) {
      fail(ErrorCode::kNotFound, "no fused result for image '" + image_id + "'");
    }
    return create_locked(image_id, load_fused(dir, cfg_.catalog));
  }

  TaskRecord create_task(const std::string& image_id, const FusedResult& fused) {
    std::lock_guard manifest_lock(manifest_mutex_);
    check_creatable(image_id);
    return create_locked(image_id, fused);
  }

  TaskRecord submit_edits(const std::string& task_id, std::uint64_t base_version,
                          const std::vector<EditOp>& edits, const std::string& annotator_id = "",
                          std::optional<std::int64_t> started_at_ms = std::nullopt) {
    return mutate(task_id, base_version, annotator_id, started_at_ms, [&](TaskRecord& t, const Slot&) {
      for (const auto& e : edits) validate_edit(e, t.width, t.height, cfg_.catalog);
      t.edits.insert(t.edits.end(), edits.begin(), edits.end());
      t.state = TaskState::kInProgress;
    });
  }

  TaskRecord submit_instance_edits(const std::string& task_id, std::uint64_t base_version,
                                   const std::vector<InstanceEdit>& edits,
                                   const std::string& annotator_id = "",
                                   std::optional<std::int64_t> started_at_ms = std::nullopt) {
    return mutate(task_id, base_version, annotator_id, started_at_ms, [&](TaskRecord& t, const Slot&) {
      for (const auto& e : edits) {
        if (const auto* m = std::get_if<MergeInstances>(&e)) {
          if (m->ids.empty() || m->ids.contains(0)) {
            fail(ErrorCode::kValidation, "merge needs nonzero instance ids");
          }
        } else {
          const auto& s = std::get<SplitInstance>(e);
          if (s.id == 0) fail(ErrorCode::kValidation, "split needs a nonzero instance id");
          for (const auto& p : s.separator) {
            if (p.row < 0 || p.col < 0 || p.row >= t.height || p.col >= t.width) {
              fail(ErrorCode::kValidation, "separator pixel " + to_string(p) + " is out of bounds");
            }
          }
        }
      }
      t.instance_edits.insert(t.instance_edits.end(), edits.begin(), edits.end());
      t.state = TaskState::kInProgress;
    });
  }

  // Merges the edit log over the uncertainty map, regenerates instances,
  // persists both and marks the manifest entry finalized.
  std::pair<TaskRecord, LabelMap> finalize_task(const std::string& task_id, std::uint64_t base_version,
                                                const std::string& annotator_id = "") {
    std::optional<LabelMap> final_labels;
    std::lock_guard manifest_lock(manifest_mutex_);
    auto record = mutate(task_id, base_version, annotator_id, std::nullopt,
                         [&](TaskRecord& t, const Slot& slot) {
      LabelMap merged = apply_edits(slot.uncertainty, t.edits, cfg_.catalog);
      if (auto left = unresolved_pixels(merged); !left.empty()) {
        throw UnresolvedPixels(std::move(left));
      }
      InstanceEditResult instances;
      try {
        instances = apply_instance_edits(split_instances(merged, cfg_.instance_classes),
                                         t.instance_edits);
      } catch (const Error& e) {
        fail(ErrorCode::kValidation, std::string("instance edits do not apply: ") + e.what());
      }
      const auto labels_png = encode_label_map(merged, cfg_.catalog);
      const auto ids_png = encode_gray16(instance_raster(instances.map));
      t.final_labels_ref = store_.put(labels_png);
      t.final_instances_ref = store_.put(ids_png);
      t.instance_table = instance_table_json(instances.map);

      const auto final_dir = cfg_.data_dir / "final";
      const auto labels_path = final_dir / (t.image_id + ".png");
      const auto instance_stem = final_dir / (t.image_id + ".instances");
      write_file(labels_path, labels_png);
      save_instances(instance_stem, instances.map);

      auto entries = load_manifest(cfg_.manifest_path);
      auto* entry = find_entry(entries, t.image_id);
      entry->semantic_ref = manifest_relative(labels_path);
      entry->instance_ref = manifest_relative(instance_stem);
      entry->status = EntryStatus::kFinalized;
      save_manifest(entries, cfg_.manifest_path);

      t.state = TaskState::kFinalized;
      final_labels = std::move(merged);
    });
    return {std::move(record), std::move(*final_labels)};
  }

  TaskRecord get_task(const std::string& task_id) const { return *snapshot(slot(task_id)); }

  std::vector<TaskRecord> list_tasks(std::optional<TaskState> state = std::nullopt) const {
    std::vector<TaskRecord> out;
    std::shared_lock lock(tasks_mutex_);
    for (const auto& [id, s] : tasks_) {
      auto t = snapshot(*s);
      if (!state || t->state == *state) out.push_back(*t);
    }
    return out;
  }

  // Rebuilds the label map from the stored uncertainty map and edit log.
  LabelMap replay(const std::string& task_id) const {
    const auto& s = slot(task_id);
    return apply_edits(s.uncertainty, snapshot(s)->edits, cfg_.catalog);
  }

  std::size_t unresolved_count(const std::string& task_id) const {
    return unresolved_pixels(replay(task_id)).size();
  }

 private:
  struct Slot {
    std::mutex write;
    mutable std::mutex read;
    std::shared_ptr<const TaskRecord> current;
    LabelMap uncertainty;
  };

  static std::shared_ptr<const TaskRecord> snapshot(const Slot& s) {
    std::lock_guard lock(s.read);
    return s.current;
  }

  const Slot& slot(const std::string& task_id) const {
    std::shared_lock lock(tasks_mutex_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) fail(ErrorCode::kNotFound, "no task '" + task_id + "'");
    return *it->second;
  }

  Slot& slot(const std::string& task_id) {
    return const_cast<Slot&>(static_cast<const TaskService*>(this)->slot(task_id));
  }

  template <typename Fn>
  TaskRecord mutate(const std::string& task_id, std::uint64_t base_version,
                    const std::string& annotator_id, std::optional<std::int64_t> started_at_ms,
                    Fn&& change) {
    Slot& s = slot(task_id);
    std::lock_guard write_lock(s.write);
    const auto current = snapshot(s);
    if (current->state == TaskState::kFinalized) {
      fail(ErrorCode::kGone, "task '" + task_id + "' is finalized");
    }
    if (current->version != base_version) throw VersionConflict(current->version);

    TaskRecord next = *current;
    change(next, s);
    ++next.version;
    record_session(next, annotator_id, started_at_ms);
    persist(next);
    auto published = std::make_shared<const TaskRecord>(std::move(next));
    {
      std::lock_guard lock(s.read);
      s.current = published;
    }
    return *published;
  }

  void record_session(TaskRecord& t, const std::string& annotator_id,
                      std::optional<std::int64_t> started_at_ms) const {
    const auto now = cfg_.clock();
    const auto who = annotator_id.empty() ? std::string("anonymous") : annotator_id;
    if (!t.sessions.empty()) {
      auto& last = t.sessions.back();
      if (last.annotator_id == who && now - last.ended_at_ms <= cfg_.session_gap.count() &&
          now >= last.ended_at_ms) {
        last.ended_at_ms = now;
        return;
      }
    }
    const auto start = started_at_ms && *started_at_ms <= now ? *started_at_ms : now;
    t.sessions.push_back({who, start, now});
  }

  void check_creatable(const std::string& image_id) {
    auto entries = load_manifest(cfg_.manifest_path);
    const auto* entry = find_entry(entries, image_id);
    {
      std::shared_lock lock(tasks_mutex_);
      for (const auto& [id, s] : tasks_) {
        const auto t = snapshot(*s);
        if (t->image_id == image_id && t->state != TaskState::kFinalized) {
          fail(ErrorCode::kConflict, "image '" + image_id + "' already has open task " + id);
        }
      }
    }
    if (entry->status != EntryStatus::kFused) {
      fail(ErrorCode::kPreconditionFailed, "image '" + image_id + "' has status " +
                                               std::string(to_string(entry->status)) +
                                               "; tasks need status fused");
    }
  }

  TaskRecord create_locked(const std::string& image_id, const FusedResult& fused) {
    require_same_shape(fused.labels, fused.reliable, "fused result");
    auto slot_ptr = std::make_unique<Slot>();
    slot_ptr->uncertainty = uncertainty_map(fused);

    TaskRecord t;
    t.image_id = image_id;
    t.width = fused.labels.width();
    t.height = fused.labels.height();
    t.alpha = fused.alpha;
    t.stats = fused.stats;
    t.labels_ref = store_.put(encode_label_map(fused.labels, cfg_.catalog));
    t.uncertainty_ref = store_.put(encode_label_map(slot_ptr->uncertainty, cfg_.catalog));
    t.confidence_ref = store_.put(encode_gray16(quantize_confidence(fused.confidence)));
    t.reliable_ref = store_.put(encode_bitmask(fused.reliable));

    std::unique_lock lock(tasks_mutex_);
    t.task_id = next_task_id();
    persist(t);
    slot_ptr->current = std::make_shared<const TaskRecord>(t);
    tasks_.emplace(t.task_id, std::move(slot_ptr));
    lock.unlock();

    auto entries = load_manifest(cfg_.manifest_path);
    find_entry(entries, image_id)->status = EntryStatus::kAnnotating;
    save_manifest(entries, cfg_.manifest_path);
    return t;
  }

  static ManifestEntry* find_entry(std::vector<ManifestEntry>& entries, const std::string& image_id) {
    for (auto& e : entries) {
      if (e.image_id == image_id) return &e;
    }
    fail(ErrorCode::kNotFound, "image '" + image_id + "' is not in the manifest");
  }

  std::string manifest_relative(const std::filesystem::path& p) const {
    return std::filesystem::proximate(p, cfg_.manifest_path.parent_path()).generic_string();
  }

  std::string next_task_id() {
    ++task_counter_;
    std::string digits = std::to_string(task_counter_);
    if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
    return "task-" + digits;
  }

  void persist(const TaskRecord& t) const {
    const auto path = cfg_.data_dir / "tasks" / (t.task_id + ".json");
    auto tmp = path;
    tmp += ".tmp";
    write_text(tmp, nlohmann::json(t).dump(2) + "\n");
    std::filesystem::rename(tmp, path);
  }

  void reload() {
    for (const auto& f : std::filesystem::directory_iterator(cfg_.data_dir / "tasks")) {
      if (f.path().extension() != ".json") continue;
      auto t = nlohmann::json::parse(read_text(f.path())).get<TaskRecord>();
      auto s = std::make_unique<Slot>();
      s->uncertainty = decode_label_map(store_.get(t.uncertainty_ref), cfg_.catalog);
      const auto stem = t.task_id.substr(t.task_id.find('-') + 1);
      task_counter_ = std::max<std::uint64_t>(task_counter_, std::stoull(stem));
      s->current = std::make_shared<const TaskRecord>(std::move(t));
      tasks_.emplace(s->current->task_id, std::move(s));
    }
  }

  ServiceConfig cfg_;
  RasterStore store_;
  mutable std::shared_mutex tasks_mutex_;
  std::map<std::string, std::unique_ptr<Slot>> tasks_;
  std::mutex manifest_mutex_;
  std::uint64_t task_counter_ = 0;
};

}  // namespace segfuse
