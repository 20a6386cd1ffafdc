// fuse, uncertainty, merge, weights-search

#include <iostream>
#include <memory>

#include "cli/common.hpp"

namespace segfuse::cli {
namespace {

struct FuseOptions {
  std::vector<std::string> pred_dirs;
  std::string methods;
  std::string weights;
  double alpha = 0.7;
  std::string config;
  std::string out;
  std::string manifest;
  std::string json;
  unsigned jobs = 1;
};

FusionConfig fusion_config_from(const FuseOptions& o) {
  FusionConfig cfg;
  if (!o.config.empty()) {
    cfg = nlohmann::json::parse(read_text(o.config)).get<FusionConfig>();
  } else {
    if (o.weights.empty()) fail(ErrorCode::kInvalidArgument, "fuse needs --weights or --config");
    std::vector<std::string> names;
    if (!o.methods.empty()) {
      std::stringstream ss(o.methods);
      for (std::string n; std::getline(ss, n, ',');) names.push_back(n);
    }
    cfg = FusionConfig::make(parse_doubles(o.weights), o.alpha, names);
  }
  if (cfg.method_count() != o.pred_dirs.size()) {
    fail(ErrorCode::kInvalidArgument, std::to_string(o.pred_dirs.size()) +
                                          " prediction directories for " +
                                          std::to_string(cfg.method_count()) + " weights");
  }
  return cfg;
}

// Loads the K predictions of one image.
std::vector<LabelMap> load_prediction_set(const std::vector<std::string>& dirs, const std::string& stem) {
  std::vector<LabelMap> set;
  for (const auto& d : dirs) {
    const auto p = fs::path(d) / (stem + ".png");
    if (!fs::exists(p)) fail(ErrorCode::kNotFound, "missing prediction " + p.string());
    set.push_back(load_label_map(p));
  }
  return set;
}

void run_fuse(const FuseOptions& o) {
  const auto cfg = fusion_config_from(o);
  const auto stems = list_stems(o.pred_dirs.front());
  if (stems.empty()) fail(ErrorCode::kNotFound, "no .png predictions in " + o.pred_dirs.front());

  std::vector<FusionStats> stats(stems.size());
  parallel_for(stems.size(), o.jobs, [&](std::size_t i) {
    const auto set = load_prediction_set(o.pred_dirs, stems[i]);
    const auto fused = fuse(set, cfg);
    save_fused(fs::path(o.out) / stems[i], fused, cfg);
    stats[i] = fused.stats;
  });

  RecordSink sink;
  std::vector<std::vector<std::string>> rows = {{"image", "reliable", "pixels", "reliable_fraction"}};
  double sum = 0.0;
  for (std::size_t i = 0; i < stems.size(); ++i) {
    rows.push_back({stems[i], std::to_string(stats[i].reliable_pixels),
                    std::to_string(stats[i].total_pixels), fixed(stats[i].reliable_fraction)});
    nlohmann::json rec = stats[i];
    rec["image_id"] = stems[i];
    sink.add(rec);
    sum += stats[i].reliable_fraction;
  }
  const double mean = sum / static_cast<double>(stems.size());
  rows.push_back({"mean", "", "", fixed(mean)});
  print_table(std::cout, rows);
  sink.add({{"aggregate", {{"images", stems.size()}, {"mean_reliable_fraction", mean}}}});
  sink.write((fs::path(o.out) / "summary.jsonl").string());
  sink.write(o.json);

  if (!o.manifest.empty()) {
    auto entries = load_manifest(o.manifest);
    const std::set<std::string> fused_ids(stems.begin(), stems.end());
    for (auto& e : entries) {
      if (fused_ids.contains(e.image_id) && e.status == EntryStatus::kRaw) e.status = EntryStatus::kFused;
    }
    save_manifest(entries, o.manifest);
  }
}

struct UncertaintyOptions {
  std::string fused;
  std::string out;
  unsigned jobs = 1;
};

void run_uncertainty(const UncertaintyOptions& o) {
  const auto ids = list_subdirs(o.fused);
  std::vector<std::size_t> counts(ids.size());
  parallel_for(ids.size(), o.jobs, [&](std::size_t i) {
    const auto r = load_fused(fs::path(o.fused) / ids[i]);
    const auto m = uncertainty_map(r);
    save_label_map(fs::path(o.out) / (ids[i] + ".png"), m);
    counts[i] = unresolved_pixels(m).size();
  });
  std::vector<std::vector<std::string>> rows = {{"image", "uncertain_pixels"}};
  for (std::size_t i = 0; i < ids.size(); ++i) rows.push_back({ids[i], std::to_string(counts[i])});
  print_table(std::cout, rows);
}

struct MergeOptions {
  std::string fused;
  std::string edits;
  std::string out;
  unsigned jobs = 1;
};

std::vector<EditOp> load_edit_file(const fs::path& p) {
  if (!fs::exists(p)) return {};
  const auto j = nlohmann::json::parse(read_text(p));
  const auto& list = j.is_object() ? j.at("edits") : j;
  return list.get<std::vector<EditOp>>();
}

void run_merge(const MergeOptions& o) {
  const auto ids = list_subdirs(o.fused);
  std::vector<std::string> problems(ids.size());
  parallel_for(ids.size(), o.jobs, [&](std::size_t i) {
    const auto r = load_fused(fs::path(o.fused) / ids[i]);
    const auto edits = o.edits.empty() ? std::vector<EditOp>{}
                                       : load_edit_file(fs::path(o.edits) / (ids[i] + ".json"));
    try {
      save_label_map(fs::path(o.out) / (ids[i] + ".png"), merge_manual(r, edits));
    } catch (const UnresolvedPixels& e) {
      problems[i] = e.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (problems[i].empty()) {
      std::cout << ids[i] << ": finalized\n";
    } else {
      ++failed;
      std::cerr << ids[i] << ": " << problems[i] << "\n";
    }
  }
  if (failed > 0) {
    fail(ErrorCode::kPreconditionFailed,
         std::to_string(failed) + " image(s) still have unlabeled pixels");
  }
}

struct WeightSearchOptions {
  std::vector<std::string> pred_dirs;
  double step = 0.1;
  double alpha = 0.7;
  std::size_t top = 10;
  std::string json;
};

void run_weight_search(const WeightSearchOptions& o) {
  const auto stems = list_stems(o.pred_dirs.front());
  if (stems.empty()) fail(ErrorCode::kNotFound, "no .png predictions in " + o.pred_dirs.front());
  std::vector<std::vector<LabelMap>> sets;
  for (const auto& s : stems) sets.push_back(load_prediction_set(o.pred_dirs, s));
  const auto ranked = weight_search(sets, o.step, o.alpha);

  RecordSink sink;
  std::vector<std::vector<std::string>> rows = {{"rank", "weights", "mean_reliable_fraction"}};
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::string w;
    for (double v : ranked[i].weights) w += (w.empty() ? "" : ",") + fixed(v, 2);
    if (i < o.top) rows.push_back({std::to_string(i + 1), w, fixed(ranked[i].mean_reliable_fraction)});
    sink.add({{"rank", i + 1}, {"weights", ranked[i].weights},
              {"mean_reliable_fraction", ranked[i].mean_reliable_fraction}});
  }
  print_table(std::cout, rows);
  sink.write(o.json);
}

}  // namespace

void register_fusion_commands(CLI::App& app, Command& selected) {
  {
    auto o = std::make_shared<FuseOptions>();
    auto* sub = app.add_subcommand("fuse", "Fuse K prediction directories into confidence-scored label maps");
    sub->add_option("--pred", o->pred_dirs, "Prediction directory of one method (repeat per method, in weight order)")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--weights", o->weights, "Comma-separated method weights summing to 1");
    sub->add_option("--methods", o->methods, "Comma-separated method names");
    sub->add_option("--alpha", o->alpha, "Reliability threshold (strict >)")->capture_default_str();
    sub->add_option("--config", o->config, "Fusion config document (methods, weights, alpha, tie_policy)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", o->out, "Output root; one directory per image")->required();
    sub->add_option("--manifest", o->manifest, "Manifest whose raw entries become fused")
        ->check(CLI::ExistingFile);
    sub->add_option("--json", o->json, "Also write per-image records to this file");
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_fuse(*o); }; });
  }
  {
    auto o = std::make_shared<UncertaintyOptions>();
    auto* sub = app.add_subcommand("uncertainty", "Write fused labels with unreliable pixels set to 255");
    sub->add_option("--fused", o->fused, "Fused output root")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", o->out, "Output directory")->required();
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_uncertainty(*o); }; });
  }
  {
    auto o = std::make_shared<MergeOptions>();
    auto* sub = app.add_subcommand("merge", "Apply manual edit spans to uncertainty maps and finalize");
    sub->add_option("--fused", o->fused, "Fused output root")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--edits", o->edits, "Directory of <image>.json edit lists")->check(CLI::ExistingDirectory);
    sub->add_option("--out", o->out, "Output directory for finalized label maps")->required();
    sub->add_option("--jobs", o->jobs, "Images processed concurrently")->capture_default_str();
    sub->callback([o, &selected] { selected = [o] { run_merge(*o); }; });
  }
  {
    auto o = std::make_shared<WeightSearchOptions>();
    auto* sub = app.add_subcommand("weights-search", "Rank simplex-grid weight vectors by reliable fraction");
    sub->add_option("--pred", o->pred_dirs, "Prediction directory of one method (repeat per method)")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--step", o->step, "Grid step; must divide 1")->capture_default_str();
    sub->add_option("--alpha", o->alpha, "Reliability threshold")->capture_default_str();
    sub->add_option("--top", o->top, "Rows to print")->capture_default_str();
    sub->add_option("--json", o->json, "Write the full ranking to this file");
    sub->callback([o, &selected] { selected = [o] { run_weight_search(*o); }; });
  }
}

}  // namespace segfuse::cli
