// eval-miou, eval-ap, eval-disagree, masked-l1, stats

#include <iostream>
#include <memory>

#include "cli/common.hpp"

namespace segfuse::cli {
namespace {

const ClassCatalog& catalog() {
  static const ClassCatalog kCatalog = ClassCatalog::street_scene();
  return kCatalog;
}

std::vector<std::string> paired_stems(const fs::path& a, const fs::path& b, const std::string& suffix = ".png") {
  const auto stems = list_stems(a, suffix);
  for (const auto& s : stems) {
    if (!fs::exists(b / (s + suffix))) fail(ErrorCode::kNotFound, "missing " + (b / (s + suffix)).string());
  }
  if (stems.empty()) fail(ErrorCode::kNotFound, "no *" + suffix + " files in " + a.string());
  return stems;
}

// Train x test table from a directory grid: <root>/<train>/<test>/ holds
// predictions and <gt_root>/<test>/ the ground truth.
template <typename CellFn>
void print_grid(const fs::path& root, const fs::path& gt_root, CellFn cell, RecordSink& sink) {
  const auto trains = list_subdirs(root);
  std::set<std::string> tests;
  for (const auto& t : trains) {
    for (const auto& s : list_subdirs(root / t)) tests.insert(s);
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"train\\test"};
  header.insert(header.end(), tests.begin(), tests.end());
  rows.push_back(header);
  for (const auto& train : trains) {
    std::vector<std::string> row = {train};
    for (const auto& test : tests) {
      const auto dir = root / train / test;
      if (!fs::exists(dir)) {
        row.push_back("-");
        continue;
      }
      const double v = cell(dir, gt_root / test);
      row.push_back(fixed(v, 3));
      sink.add({{"train", train}, {"test", test}, {"value", v}});
    }
    rows.push_back(row);
  }
  print_table(std::cout, rows);
}

struct MiouOptions {
  std::string pred, gt, grid, gt_root, json;
  int ignore = kUnlabeled;
  unsigned jobs = 1;
};

IoUReport eval_miou_dirs(const fs::path& pred, const fs::path& gt, ClassId ignore, unsigned jobs,
                         RecordSink* sink, std::vector<std::vector<std::string>>* rows) {
  const auto stems = paired_stems(pred, gt);
  std::vector<IoUAccumulator> per(stems.size(), IoUAccumulator(ignore));
  parallel_for(stems.size(), jobs, [&](std::size_t i) {
    per[i].add(load_label_map(pred / (stems[i] + ".png")), load_label_map(gt / (stems[i] + ".png")));
  });
  IoUAccumulator all(ignore);
  for (std::size_t i = 0; i < stems.size(); ++i) {
    all.merge(per[i]);
    const auto r = per[i].report();
    if (sink != nullptr) {
      auto rec = to_record(r, catalog());
      rec["image_id"] = stems[i];
      sink->add(rec);
    }
    if (rows != nullptr) rows->push_back({stems[i], fixed(r.mean_iou)});
  }
  return all.report();
}

void run_miou(const MiouOptions& o) {
  RecordSink sink;
  const auto ignore = static_cast<ClassId>(o.ignore);
  if (!o.grid.empty()) {
    if (o.gt_root.empty()) fail(ErrorCode::kInvalidArgument, "--grid needs --gt-root");
    print_grid(o.grid, o.gt_root, [&](const fs::path& p, const fs::path& g) {
      return eval_miou_dirs(p, g, ignore, o.jobs, nullptr, nullptr).mean_iou;
    }, sink);
    sink.write(o.json);
    return;
  }
  if (o.pred.empty() || o.gt.empty()) fail(ErrorCode::kInvalidArgument, "eval-miou needs --pred and --gt (or --grid)");
  std::vector<std::vector<std::string>> images = {{"image", "mIoU"}};
  const auto agg = eval_miou_dirs(o.pred, o.gt, ignore, o.jobs, &sink, &images);
  print_table(std::cout, images);
  std::cout << "\n";
  std::vector<std::vector<std::string>> rows = {{"class", "intersection", "union", "IoU"}};
  for (const auto& [cls, e] : agg.per_class) {
    rows.push_back({catalog().contains(cls) ? catalog()[cls].name : std::to_string(cls),
                    std::to_string(e.intersection), std::to_string(e.union_),
                    e.iou ? fixed(*e.iou) : "-"});
  }
  rows.push_back({"mean", "", "", fixed(agg.mean_iou)});
  print_table(std::cout, rows);
  sink.add({{"aggregate", to_record(agg, catalog())}});
  sink.write(o.json);
}

struct ApOptions {
  std::string pred, gt, grid, gt_root, json, classes, thresholds;
  unsigned jobs = 1;
};

// Mean AP over images whose ground truth holds a requested class.
double eval_ap_dirs(const fs::path& pred, const fs::path& gt, const std::set<ClassId>& classes,
                    const std::vector<double>& thresholds, unsigned jobs, RecordSink* sink,
                    std::vector<std::vector<std::string>>* rows) {
  const auto stems = paired_stems(pred, gt, ".json");
  std::vector<APReport> reports(stems.size());
  parallel_for(stems.size(), jobs, [&](std::size_t i) {
    reports[i] = instance_ap(load_instances(pred / stems[i]), load_instances(gt / stems[i]), classes, thresholds);
  });
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < stems.size(); ++i) {
    const bool evaluated = !reports[i].classes_evaluated.empty();
    if (evaluated) {
      sum += reports[i].ap;
      ++counted;
    }
    if (sink != nullptr) {
      auto rec = to_record(reports[i]);
      rec["image_id"] = stems[i];
      sink->add(rec);
    }
    if (rows != nullptr) rows->push_back({stems[i], evaluated ? fixed(reports[i].ap) : "-"});
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

void run_ap(const ApOptions& o) {
  const auto classes = o.classes.empty() ? default_instance_classes() : parse_class_ids(o.classes);
  const auto thresholds = o.thresholds.empty() ? default_ap_thresholds() : parse_doubles(o.thresholds);
  RecordSink sink;
  if (!o.grid.empty()) {
    if (o.gt_root.empty()) fail(ErrorCode::kInvalidArgument, "--grid needs --gt-root");
    print_grid(o.grid, o.gt_root, [&](const fs::path& p, const fs::path& g) {
      return eval_ap_dirs(p, g, classes, thresholds, o.jobs, nullptr, nullptr);
    }, sink);
    sink.write(o.json);
    return;
  }
  if (o.pred.empty() || o.gt.empty()) fail(ErrorCode::kInvalidArgument, "eval-ap needs --pred and --gt (or --grid)");
  std::vector<std::vector<std::string>> rows = {{"image", "AP"}};
  const double mean = eval_ap_dirs(o.pred, o.gt, classes, thresholds, o.jobs, &sink, &rows);
  rows.push_back({"mean", fixed(mean)});
  print_table(std::cout, rows);
  sink.add({{"aggregate", {{"ap", mean}}}});
  sink.write(o.json);
}

struct DisagreeOptions {
  std::string a, b, exclude = "255", json;
  unsigned jobs = 1;
};

void run_disagree(const DisagreeOptions& o) {
  const auto exclude = parse_class_ids(o.exclude);
  const auto stems = paired_stems(o.a, o.b);
  std::vector<DisagreementCounts> counts(stems.size());
  parallel_for(stems.size(), o.jobs, [&](std::size_t i) {
    counts[i] = disagreement_counts(load_label_map(fs::path(o.a) / (stems[i] + ".png")),
                                    load_label_map(fs::path(o.b) / (stems[i] + ".png")), exclude);
  });
  RecordSink sink;
  DisagreementCounts total;
  std::vector<std::vector<std::string>> rows = {{"image", "compared", "differ", "fraction"}};
  for (std::size_t i = 0; i < stems.size(); ++i) {
    total += counts[i];
    rows.push_back({stems[i], std::to_string(counts[i].compared), std::to_string(counts[i].differ),
                    fixed(counts[i].fraction(), 6)});
    sink.add({{"image_id", stems[i]}, {"compared", counts[i].compared}, {"differ", counts[i].differ},
              {"fraction", counts[i].fraction()}});
  }
  rows.push_back({"total", std::to_string(total.compared), std::to_string(total.differ),
                  fixed(total.fraction(), 6)});
  print_table(std::cout, rows);
  sink.add({{"aggregate", {{"compared", total.compared}, {"differ", total.differ}, {"fraction", total.fraction()}}}});
  sink.write(o.json);
}

struct MaskedL1Options {
  std::string x, y, labels, taxonomy, json;
  unsigned jobs = 1;
};

void run_masked_l1(const MaskedL1Options& o) {
  const auto cfg = o.taxonomy.empty() ? default_masked_distance_config()
                                      : masked_distance_config_from_json(nlohmann::json::parse(read_text(o.taxonomy)));
  cfg.validate(catalog());
  RecordSink sink;
  if (fs::is_regular_file(o.x)) {
    const double v = masked_weighted_l1(load_image(o.x), load_image(o.y), load_label_map(o.labels), cfg);
    std::cout << fixed(v, 6) << "\n";
    sink.add({{"x", o.x}, {"y", o.y}, {"masked_l1", v}});
    sink.write(o.json);
    return;
  }
  const auto stems = paired_stems(o.x, o.y);
  std::vector<double> values(stems.size());
  parallel_for(stems.size(), o.jobs, [&](std::size_t i) {
    const auto name = stems[i] + ".png";
    values[i] = masked_weighted_l1(load_image(fs::path(o.x) / name), load_image(fs::path(o.y) / name),
                                   load_label_map(fs::path(o.labels) / name), cfg);
  });
  std::vector<std::vector<std::string>> rows = {{"image", "masked_l1"}};
  for (std::size_t i = 0; i < stems.size(); ++i) {
    rows.push_back({stems[i], fixed(values[i], 6)});
    sink.add({{"image_id", stems[i]}, {"masked_l1", values[i]}});
  }
  print_table(std::cout, rows);
  sink.write(o.json);
}

struct StatsOptions {
  std::string manifest, json;
  unsigned jobs = 1;
};

void run_stats(const StatsOptions& o) {
  const auto entries = load_manifest(o.manifest);
  const auto summary = summarize_manifest(entries);

  std::vector<const ManifestEntry*> labeled;
  for (const auto& e : entries) {
    if (e.semantic_ref) labeled.push_back(&e);
  }
  std::vector<StatsReport> partial(labeled.size());
  parallel_for(labeled.size(), o.jobs, [&](std::size_t i) {
    const auto& e = *labeled[i];
    const auto labels = load_label_map(resolve_ref(o.manifest, *e.semantic_ref));
    std::optional<InstanceMap> inst;
    if (e.instance_ref) inst = load_instances(resolve_ref(o.manifest, *e.instance_ref));
    accumulate_stats(partial[i], labels, inst ? &*inst : nullptr);
  });
  StatsReport report;
  for (const auto& p : partial) {
    report.images += p.images;
    for (const auto& [cls, c] : p.per_class) {
      auto& t = report.per_class[cls];
      t.pixels += c.pixels;
      t.segments += c.segments;
      t.instances += c.instances;
    }
  }

  std::cout << "images: " << summary.total << " (" << report.images << " with semantic labels)\n\n";
  std::vector<std::vector<std::string>> w = {{"weather", "images"}};
  for (const auto& tag : default_weather_vocabulary()) {
    const auto it = summary.per_weather.find(tag);
    w.push_back({tag, std::to_string(it == summary.per_weather.end() ? 0 : it->second)});
  }
  print_table(std::cout, w);
  std::cout << "\n";
  std::vector<std::vector<std::string>> s = {{"split", "images"}};
  for (const auto& [split, n] : summary.per_split) s.push_back({std::string(to_string(split)), std::to_string(n)});
  print_table(std::cout, s);
  std::cout << "\n";
  std::vector<std::vector<std::string>> st = {{"status", "images"}};
  for (const auto& [status, n] : summary.per_status) st.push_back({std::string(to_string(status)), std::to_string(n)});
  print_table(std::cout, st);
  std::cout << "\n";
  std::vector<std::vector<std::string>> c = {{"class", "pixels", "segments", "instances"}};
  for (const auto& [cls, n] : report.per_class) {
    c.push_back({catalog().contains(cls) ? catalog()[cls].name : std::to_string(cls), std::to_string(n.pixels),
                 std::to_string(n.segments), std::to_string(n.instances)});
  }
  print_table(std::cout, c);

  RecordSink sink;
  nlohmann::json weather = summary.per_weather;
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [k, n] : summary.per_split) splits[std::string(to_string(k))] = n;
  nlohmann::json statuses = nlohmann::json::object();
  for (const auto& [k, n] : summary.per_status) statuses[std::string(to_string(k))] = n;
  sink.add({{"images", summary.total}, {"weather", weather}, {"splits", splits}, {"statuses", statuses},
            {"classes", to_record(report, catalog())}});
  sink.write(o.json);
}

}  // namespace

void register_eval_commands(CLI::App& app, Command& selected) {
  {
    auto o = std::make_shared<MiouOptions>();
    auto* sub = app.add_subcommand("eval-miou", "Class-averaged IoU between predicted and ground-truth label maps");
    sub->add_option("--pred", o->pred, "Predicted label maps")->check(CLI::ExistingDirectory);
    sub->add_option("--gt", o->gt, "Ground-truth label maps")->check(CLI::ExistingDirectory);
    sub->add_option("--grid", o->grid, "Prediction grid root <train>/<test>/")->check(CLI::ExistingDirectory);
    sub->add_option("--gt-root", o->gt_root, "Ground-truth root <test>/ for --grid")->check(CLI::ExistingDirectory);
    sub->add_option("--ignore", o->ignore, "Ground-truth class excluded from all counts")
        ->capture_default_str()
        ->check(CLI::Range(0, 255));
    sub->add_option("--json", o->json, "Write per-image records and the aggregate here");
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_miou(*o); }; });
  }
  {
    auto o = std::make_shared<ApOptions>();
    auto* sub = app.add_subcommand("eval-ap", "Instance AP between instance-map directories (<id>.png + <id>.json)");
    sub->add_option("--pred", o->pred, "Predicted instance maps")->check(CLI::ExistingDirectory);
    sub->add_option("--gt", o->gt, "Ground-truth instance maps")->check(CLI::ExistingDirectory);
    sub->add_option("--grid", o->grid, "Prediction grid root <train>/<test>/")->check(CLI::ExistingDirectory);
    sub->add_option("--gt-root", o->gt_root, "Ground-truth root <test>/ for --grid")->check(CLI::ExistingDirectory);
    sub->add_option("--classes", o->classes, "Comma-separated class ids (default: person and vehicle classes)");
    sub->add_option("--thresholds", o->thresholds, "Comma-separated IoU thresholds (default 0.50:0.05:0.95)");
    sub->add_option("--json", o->json, "Write per-image records and the aggregate here");
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_ap(*o); }; });
  }
  {
    auto o = std::make_shared<DisagreeOptions>();
    auto* sub = app.add_subcommand("eval-disagree", "Fraction of differing pixels between two label-map directories");
    sub->add_option("--a", o->a, "First label-map directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--b", o->b, "Second label-map directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--exclude", o->exclude, "Comma-separated class ids left out of the comparison")
        ->capture_default_str();
    sub->add_option("--json", o->json, "Write per-image records and the aggregate here");
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_disagree(*o); }; });
  }
  {
    auto o = std::make_shared<MaskedL1Options>();
    auto* sub = app.add_subcommand("masked-l1", "Label-weighted masked L1 distance between images");
    sub->add_option("--x", o->x, "Image file or directory")->required()->check(CLI::ExistingPath);
    sub->add_option("--y", o->y, "Image file or directory")->required()->check(CLI::ExistingPath);
    sub->add_option("--labels", o->labels, "Label map file or directory")->required()->check(CLI::ExistingPath);
    sub->add_option("--taxonomy", o->taxonomy, "Taxonomy document {taxonomy:[{name,lambda}], projection:{fine:coarse}}")
        ->check(CLI::ExistingFile);
    sub->add_option("--json", o->json, "Write records here");
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_masked_l1(*o); }; });
  }
  {
    auto o = std::make_shared<StatsOptions>();
    auto* sub = app.add_subcommand("stats", "Weather/split/status counts and per-class segment statistics");
    sub->add_option("--manifest", o->manifest, "Manifest file")->required()->check(CLI::ExistingFile);
    sub->add_option("--json", o->json, "Write the report record here");
    sub->add_option("--jobs", o->jobs, "Label maps processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_stats(*o); }; });
  }
}

}  // namespace segfuse::cli
