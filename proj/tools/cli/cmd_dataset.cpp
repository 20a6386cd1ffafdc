// instances, split, blur, serve

#include <csignal>
#include <iostream>
#include <map>
#include <memory>

#include "cli/common.hpp"
#include "segfuse/http_service.hpp"

namespace segfuse::cli {
namespace {

struct InstancesOptions {
  std::string labels, out, classes, edits;
  unsigned jobs = 1;
};

void run_instances(const InstancesOptions& o) {
  const auto classes = o.classes.empty() ? default_instance_classes() : parse_class_ids(o.classes);
  const auto stems = list_stems(o.labels);
  std::vector<std::size_t> counts(stems.size());
  std::vector<std::vector<std::string>> warnings(stems.size());
  parallel_for(stems.size(), o.jobs, [&](std::size_t i) {
    auto map = split_instances(load_label_map(fs::path(o.labels) / (stems[i] + ".png")), classes);
    if (!o.edits.empty()) {
      const auto p = fs::path(o.edits) / (stems[i] + ".json");
      if (fs::exists(p)) {
        const auto j = nlohmann::json::parse(read_text(p));
        auto result = apply_instance_edits(std::move(map), (j.is_object() ? j.at("edits") : j)
                                                               .get<std::vector<InstanceEdit>>());
        map = std::move(result.map);
        warnings[i] = std::move(result.warnings);
      }
    }
    save_instances(fs::path(o.out) / stems[i], map);
    counts[i] = map.table.size();
  });
  std::vector<std::vector<std::string>> rows = {{"image", "instances"}};
  for (std::size_t i = 0; i < stems.size(); ++i) {
    for (const auto& w : warnings[i]) std::cerr << stems[i] << ": warning: " << w << "\n";
    rows.push_back({stems[i], std::to_string(counts[i])});
  }
  print_table(std::cout, rows);
}

struct SplitOptions {
  std::string manifest, out, ratios = "7:1:2";
  std::uint64_t seed = 0;
};

void run_split(const SplitOptions& o) {
  const auto entries = split_dataset(load_manifest(o.manifest), parse_ratios(o.ratios), o.seed);
  save_manifest(entries, o.out.empty() ? o.manifest : o.out);
  const auto summary = summarize_manifest(entries);
  std::vector<std::vector<std::string>> rows = {{"split", "images"}};
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto it = summary.per_split.find(s);
    rows.push_back({std::string(to_string(s)), std::to_string(it == summary.per_split.end() ? 0 : it->second)});
  }
  print_table(std::cout, rows);
}

struct BlurOptions {
  std::string images, boxes, out, kernel = "auto";
  unsigned jobs = 1;
};

BlurKernel parse_kernel(const std::string& s) {
  if (s == "auto") return BlurKernel::automatic();
  std::size_t used = 0;
  int k = 0;
  try {
    k = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) fail(ErrorCode::kInvalidArgument, "kernel must be 'auto' or an odd integer");
  return BlurKernel::fixed(k);
}

void run_blur(const BlurOptions& o) {
  const auto kernel = parse_kernel(o.kernel);
  const auto records = parse_box_records(read_text(o.boxes));
  std::map<std::string, std::vector<BBox>> by_image;
  for (const auto& r : records) by_image[r.image_id].push_back(r.box);

  if (fs::is_regular_file(o.images)) {
    const auto id = fs::path(o.images).stem().string();
    std::vector<BBox> boxes;
    if (by_image.size() == 1) {
      boxes = by_image.begin()->second;
    } else if (by_image.contains(id)) {
      boxes = by_image[id];
    } else if (!by_image.empty()) {
      fail(ErrorCode::kValidation, "box file names several images and none is '" + id + "'");
    }
    save_image(o.out, blur_regions(load_image(o.images), boxes, kernel));
    std::cout << id << ": " << boxes.size() << " box(es) blurred\n";
    return;
  }
  const auto stems = list_stems(o.images);
  for (const auto& [id, boxes] : by_image) {
    if (!std::binary_search(stems.begin(), stems.end(), id)) {
      fail(ErrorCode::kNotFound, "boxes reference unknown image '" + id + "'");
    }
  }
  parallel_for(stems.size(), o.jobs, [&](std::size_t i) {
    const auto it = by_image.find(stems[i]);
    const auto img = load_image(fs::path(o.images) / (stems[i] + ".png"));
    save_image(fs::path(o.out) / (stems[i] + ".png"),
               it == by_image.end() ? img : blur_regions(img, it->second, kernel));
  });
  std::vector<std::vector<std::string>> rows = {{"image", "boxes"}};
  for (const auto& s : stems) {
    const auto it = by_image.find(s);
    rows.push_back({s, std::to_string(it == by_image.end() ? 0 : it->second.size())});
  }
  print_table(std::cout, rows);
}

struct ServeOptions {
  std::string data, manifest, fused, host = "127.0.0.1";
  int port = 8080;
};

AnnotationServer* g_server = nullptr;

void run_serve(const ServeOptions& o) {
  ServiceConfig cfg;
  cfg.data_dir = o.data;
  cfg.manifest_path = o.manifest;
  cfg.fused_root = o.fused;
  TaskService service(std::move(cfg));
  AnnotationServer server(service);
  int port = o.port;
  if (port == 0) {
    port = server.bind_any(o.host);
    if (port < 0) fail(ErrorCode::kIo, "cannot bind " + o.host);
  }
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cout << "listening on http://" << o.host << ":" << port << std::endl;
  const bool ok = o.port == 0 ? server.serve() : server.listen(o.host, port);
  g_server = nullptr;
  if (!ok) fail(ErrorCode::kIo, "server stopped with an error (port " + std::to_string(port) + " in use?)");
}

}  // namespace

void register_dataset_commands(CLI::App& app, Command& selected) {
  {
    auto o = std::make_shared<InstancesOptions>();
    auto* sub = app.add_subcommand("instances", "Split semantic label maps into 8-connected instances");
    sub->add_option("--labels", o->labels, "Label-map directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", o->out, "Output directory (<id>.png 16-bit ids + <id>.json table)")->required();
    sub->add_option("--classes", o->classes, "Comma-separated instance class ids (default: person and vehicle classes)");
    sub->add_option("--edits", o->edits, "Directory of <id>.json merge/split edit lists")->check(CLI::ExistingDirectory);
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_instances(*o); }; });
  }
  {
    auto o = std::make_shared<SplitOptions>();
    auto* sub = app.add_subcommand("split", "Seeded train/val/test assignment of manifest entries");
    sub->add_option("--manifest", o->manifest, "Manifest file")->required()->check(CLI::ExistingFile);
    sub->add_option("--ratios", o->ratios, "train:val:test ratio")->capture_default_str();
    sub->add_option("--seed", o->seed, "Shuffle seed")->capture_default_str();
    sub->add_option("--out", o->out, "Output manifest (default: rewrite in place)");
    sub->callback([o, &selected] { selected = [o] { run_split(*o); }; });
  }
  {
    auto o = std::make_shared<BlurOptions>();
    auto* sub = app.add_subcommand("blur", "Box-filter blur of face/plate boxes");
    sub->add_option("--images", o->images, "Image file or directory of <id>.png")->required()->check(CLI::ExistingPath);
    sub->add_option("--boxes", o->boxes, "Box records, one JSON object per line")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o->out, "Output file or directory")->required();
    sub->add_option("--kernel", o->kernel, "'auto' or an odd size >= 3")->capture_default_str();
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_blur(*o); }; });
  }
  {
    auto o = std::make_shared<ServeOptions>();
    auto* sub = app.add_subcommand("serve", "Run the annotation task HTTP service");
    sub->add_option("--data", o->data, "Task and raster storage directory")->required();
    sub->add_option("--manifest", o->manifest, "Manifest file")->required()->check(CLI::ExistingFile);
    sub->add_option("--fused", o->fused, "Fused output root")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--host", o->host, "Bind address")->capture_default_str();
    sub->add_option("--port", o->port, "Port (0 = any free port)")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_serve(*o); }; });
  }
}

}  // namespace segfuse::cli
