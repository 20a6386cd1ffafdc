#pragma once

// HTTP front end for TaskService. Bodies are JSON.
//
//   GET  /tasks?state=open|in_progress|finalized
//   POST /tasks                       {"image_id"}
//   GET  /tasks/{id}
//   POST /tasks/{id}/edits            {"base_version", "edits": [EditOp...], "started_at_ms"?}
//   POST /tasks/{id}/instance-edits   {"base_version", "edits": [InstanceEdit...]}
//   POST /tasks/{id}/finalize         {"base_version"}
//   GET  /tasks/{id}/export
//   GET  /images/{image_id}           image/png
//   GET  /rasters/{ref}               image/png
//
// Errors: {"error": {"code": ..., "message": ...}} with code one of
// not_found, conflict, precondition_failed, gone, validation (plus internal).
// The annotator is identified by the X-Annotator-Id header.

#include <functional>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "segfuse/catalog.hpp"
#include "segfuse/error.hpp"
#include "segfuse/service.hpp"

namespace segfuse {

inline constexpr const char* kAnnotatorHeader = "X-Annotator-Id";

inline std::pair<int, std::string_view> http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return {404, "not_found"};
    case ErrorCode::kConflict: return {409, "conflict"};
    case ErrorCode::kPreconditionFailed: return {412, "precondition_failed"};
    case ErrorCode::kGone: return {410, "gone"};
    case ErrorCode::kValidation:
    case ErrorCode::kFormat:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimensionMismatch: return {422, "validation"};
    case ErrorCode::kIo: return {500, "internal"};
  }
  return {500, "internal"};
}

inline nlohmann::json catalog_json(const ClassCatalog& catalog) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : catalog.classes()) {
    out.push_back({{"id", c.id}, {"name", c.name}, {"color", c.color}});
  }
  return out;
}

// Client-facing view of a task; raster references are URL paths.
inline nlohmann::json task_payload(const TaskRecord& t, const ClassCatalog& catalog) {
  auto raster = [](const std::string& ref) { return "/rasters/" + ref; };
  nlohmann::json j = {
      {"task_id", t.task_id},
      {"image_id", t.image_id},
      {"state", to_string(t.state)},
      {"version", t.version},
      {"width", t.width},
      {"height", t.height},
      {"alpha", t.alpha},
      {"image", "/images/" + t.image_id},
      {"labels", raster(t.labels_ref)},
      {"uncertainty", raster(t.uncertainty_ref)},
      {"confidence", raster(t.confidence_ref)},
      {"reliable", raster(t.reliable_ref)},
      {"catalog", catalog_json(catalog)},
      {"stats", t.stats},
      {"edits", t.edits},
      {"instance_edits", t.instance_edits},
      {"sessions", t.sessions},
  };
  return j;
}

class AnnotationServer {
 public:
  explicit AnnotationServer(TaskService& service) : service_(service) { install_routes(); }

  // Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  // Binds an ephemeral port and returns it; follow with serve().
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool serve() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, ErrorCode code, const std::string& message,
                         nlohmann::json extra = nlohmann::json::object()) {
    const auto [status, name] = http_status_for(code);
    extra["code"] = name;
    extra["message"] = message;
    send_json(res, status, {{"error", extra}});
  }

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const VersionConflict& e) {
        send_error(res, e.code(), e.what(), {{"current_version", e.current_version()}});
      } catch (const UnresolvedPixels& e) {
        nlohmann::json extra = {{"unresolved_count", e.count()}};
        if (!e.pixels().empty()) extra["first_pixel"] = {e.pixels()[0].row, e.pixels()[0].col};
        send_error(res, e.code(), e.what(), extra);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, ErrorCode::kValidation, std::string("bad request body: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, ErrorCode::kIo, e.what());
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) fail(ErrorCode::kValidation, "request body must be a JSON object");
    return j;
  }

  static std::string annotator(const httplib::Request& req) {
    return req.get_header_value(kAnnotatorHeader);
  }

  void install_routes() {
    const auto& catalog = service_.config().catalog;

    server_.Get("/tasks", guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      std::optional<TaskState> state;
      if (req.has_param("state")) state = parse_task_state(req.get_param_value("state"));
      nlohmann::json list = nlohmann::json::array();
      for (const auto& t : service_.list_tasks(state)) list.push_back(task_payload(t, catalog));
      send_json(res, 200, {{"tasks", list}});
    }));

    server_.Post("/tasks", guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      const auto t = service_.create_task(body.at("image_id").get<std::string>());
      send_json(res, 201, task_payload(t, catalog));
    }));

    server_.Get(R"(/tasks/([^/]+))", guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, task_payload(service_.get_task(req.matches[1]), catalog));
    }));

    server_.Post(R"(/tasks/([^/]+)/edits)",
                 guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      std::optional<std::int64_t> started;
      if (body.contains("started_at_ms")) started = body["started_at_ms"].get<std::int64_t>();
      const auto t = service_.submit_edits(req.matches[1], body.at("base_version").get<std::uint64_t>(),
                                           body.at("edits").get<std::vector<EditOp>>(), annotator(req),
                                           started);
      send_json(res, 200, task_payload(t, catalog));
    }));

    server_.Post(R"(/tasks/([^/]+)/instance-edits)",
                 guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      std::optional<std::int64_t> started;
      if (body.contains("started_at_ms")) started = body["started_at_ms"].get<std::int64_t>();
      const auto t = service_.submit_instance_edits(
          req.matches[1], body.at("base_version").get<std::uint64_t>(),
          body.at("edits").get<std::vector<InstanceEdit>>(), annotator(req), started);
      send_json(res, 200, task_payload(t, catalog));
    }));

    server_.Post(R"(/tasks/([^/]+)/finalize)",
                 guarded([this, &catalog](const httplib::Request& req, httplib::Response& res) {
      const auto body = body_of(req);
      auto [t, labels] = service_.finalize_task(req.matches[1],
                                                body.at("base_version").get<std::uint64_t>(),
                                                annotator(req));
      auto payload = task_payload(t, catalog);
      payload["final_labels"] = "/rasters/" + *t.final_labels_ref;
      payload["final_instances"] = "/rasters/" + *t.final_instances_ref;
      send_json(res, 200, payload);
    }));

    server_.Get(R"(/tasks/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto t = service_.get_task(req.matches[1]);
      if (t.state != TaskState::kFinalized) {
        fail(ErrorCode::kPreconditionFailed, "task '" + t.task_id + "' is not finalized");
      }
      send_json(res, 200, {{"task_id", t.task_id},
                           {"image_id", t.image_id},
                           {"version", t.version},
                           {"labels", "/rasters/" + *t.final_labels_ref},
                           {"instances", "/rasters/" + *t.final_instances_ref},
                           {"instance_table", t.instance_table}});
    }));

    server_.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& cfg = service_.config();
      const auto entries = load_manifest(cfg.manifest_path);
      for (const auto& e : entries) {
        if (e.image_id == req.matches[1]) {
          const auto bytes = read_file(resolve_ref(cfg.manifest_path, e.image_ref));
          res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
          return;
        }
      }
      fail(ErrorCode::kNotFound, "image '" + std::string(req.matches[1]) + "' is not in the manifest");
    }));

    server_.Get(R"(/rasters/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto bytes = service_.rasters().get(req.matches[1]);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }));
  }

  TaskService& service_;
  httplib::Server server_;
};

}  // namespace segfuse
