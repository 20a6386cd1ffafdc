#include <gtest/gtest.h>

#include <filesystem>

#include "segfuse/instancer.hpp"
#include "support/oracles.hpp"

using namespace segfuse;

namespace {

constexpr ClassId kCar = 13;
constexpr ClassId kPerson = 11;
constexpr ClassId kRoad = 0;
constexpr ClassId kSign = 7;

LabelMap from_rows(std::initializer_list<const char*> rows) {
  // '.' road, 'c' car, 'p' person, 's' sign
  std::vector<ClassId> v;
  int w = 0;
  for (const char* r : rows) {
    w = static_cast<int>(std::strlen(r));
    for (const char* c = r; *c; ++c) {
      v.push_back(*c == 'c' ? kCar : *c == 'p' ? kPerson : *c == 's' ? kSign : kRoad);
    }
  }
  return LabelMap(w, static_cast<int>(rows.size()), std::move(v));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected segfuse::Error";
  return ErrorCode::kIo;
}

std::map<ClassId, std::size_t> class_pixels(const InstanceMap& m) {
  std::map<ClassId, std::size_t> out;
  for (auto id : m.ids.values()) {
    if (id != 0) ++out[m.table.at(id)];
  }
  return out;
}

}  // namespace

TEST(SplitInstances, TwoDisjointBlocks) {
  const auto m = split_instances(from_rows({"cc...", "cc...", ".....", "...cc", "...cc"}));
  ASSERT_EQ(m.table.size(), 2u);
  EXPECT_EQ(m.table.at(1), kCar);
  EXPECT_EQ(m.table.at(2), kCar);
  EXPECT_EQ(m.ids.at(0, 0), 1u);
  EXPECT_EQ(m.ids.at(4, 4), 2u);
  EXPECT_EQ(m.ids.at(2, 2), 0u);
}

TEST(SplitInstances, BackgroundOnly) {
  const auto m = split_instances(LabelMap(6, 4, kRoad));
  EXPECT_TRUE(m.table.empty());
  for (auto v : m.ids.values()) EXPECT_EQ(v, 0u);
}

TEST(SplitInstances, DiagonalTouchIsOneInstance) {
  const auto m = split_instances(from_rows({"c.", ".c"}));
  EXPECT_EQ(m.table.size(), 1u);
  EXPECT_EQ(m.ids.at(1, 1), 1u);
  const auto anti = split_instances(from_rows({".c", "c."}));
  EXPECT_EQ(anti.table.size(), 1u);
}

TEST(SplitInstances, ClassBoundarySeparates) {
  const auto m = split_instances(from_rows({"ccpp", "ccpp"}));
  ASSERT_EQ(m.table.size(), 2u);
  EXPECT_EQ(m.table.at(1), kCar);
  EXPECT_EQ(m.table.at(2), kPerson);
}

TEST(SplitInstances, NonInstanceClassesGetZero) {
  const auto m = split_instances(from_rows({"ss", "ss"}));
  EXPECT_TRUE(m.table.empty());
  const auto custom = split_instances(from_rows({"ss", "ss"}), {kSign});
  EXPECT_EQ(custom.table.size(), 1u);
}

TEST(SplitInstances, IdsFollowFirstPixelScanlineOrder) {
  // the U-shape's first pixel (0,0) precedes the block at (0,2); its second
  // arm at (0,4) joins late through the bottom row.
  const auto m = split_instances(from_rows({"c.c.c", "c...c", "ccccc"}));
  EXPECT_EQ(m.table.size(), 2u);
  EXPECT_EQ(m.ids.at(0, 0), 1u);
  EXPECT_EQ(m.ids.at(0, 4), 1u);
  EXPECT_EQ(m.ids.at(0, 2), 2u);
}

TEST(SplitInstances, MatchesFloodFillOracle) {
  oracle::Rng rng(31);
  const auto classes = default_instance_classes();
  for (int trial = 0; trial < 50; ++trial) {
    auto labels = oracle::blobby_map(rng, oracle::uniform(rng, 1, 64), oracle::uniform(rng, 1, 64), 19, 12);
    const auto m = split_instances(labels, classes);
    std::uint32_t count = 0;
    const auto want = oracle::flood_fill(labels, [&](ClassId v) { return classes.contains(v); }, &count);
    ASSERT_EQ(m.table.size(), count);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_EQ(m.ids[i], want[i]) << "trial " << trial;
  }
}

TEST(SplitInstances, PartitionProperty) {
  oracle::Rng rng(32);
  const auto labels = oracle::blobby_map(rng, 40, 30, 19);
  const auto classes = default_instance_classes();
  const auto m = split_instances(labels, classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_EQ(m.ids[i] != 0, classes.contains(labels[i]));
    if (m.ids[i] != 0) {
      EXPECT_EQ(m.table.at(m.ids[i]), labels[i]);
    }
  }
}

TEST(SplitInstances, Deterministic) {
  oracle::Rng rng(33);
  const auto labels = oracle::blobby_map(rng, 64, 64, 19);
  const auto first = split_instances(labels);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(split_instances(labels), first);
}

// ---- edits

TEST(InstanceEdits, MergeKeepsSmallestId) {
  const auto m = split_instances(from_rows({"cc.cc"}));
  const std::vector<InstanceEdit> edits = {MergeInstances{{1, 2}}};
  const auto r = apply_instance_edits(m, edits);
  EXPECT_TRUE(r.warnings.empty());
  ASSERT_EQ(r.map.table.size(), 1u);
  EXPECT_EQ(r.map.table.at(1), kCar);
  for (int c : {0, 1, 3, 4}) EXPECT_EQ(r.map.ids.at(0, c), 1u);
}

TEST(InstanceEdits, MergeErrors) {
  const auto m = split_instances(from_rows({"cc.pp"}));
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {MergeInstances{{1, 7}}}); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {MergeInstances{{1, 2}}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {MergeInstances{{}}}); }), ErrorCode::kValidation);
}

TEST(InstanceEdits, SplitFigureEightAtWaist) {
  const auto m = split_instances(from_rows({
      "ccc",
      "ccc",
      ".c.",
      "ccc",
      "ccc",
  }));
  ASSERT_EQ(m.table.size(), 1u);
  const std::vector<InstanceEdit> edits = {SplitInstance{1, {{2, 1}}}};
  const auto r = apply_instance_edits(m, edits);
  EXPECT_TRUE(r.warnings.empty());
  ASSERT_EQ(r.map.table.size(), 2u);
  EXPECT_EQ(r.map.table.at(2), kCar);
  EXPECT_EQ(r.map.table.at(3), kCar);
  EXPECT_EQ(r.map.ids.at(0, 0), 2u);
  EXPECT_EQ(r.map.ids.at(4, 2), 3u);
  // waist pixel: first pixels are (0,0) at d^2=5 and (3,0) at d^2=2
  EXPECT_EQ(r.map.ids.at(2, 1), 3u);
  EXPECT_EQ(class_pixels(r.map), class_pixels(m));
}

TEST(InstanceEdits, SplitWithEmptySeparatorWarns) {
  const auto m = split_instances(from_rows({"ccc"}));
  const auto r = apply_instance_edits(m, {SplitInstance{1, {}}});
  EXPECT_EQ(r.map, m);
  ASSERT_EQ(r.warnings.size(), 1u);
}

TEST(InstanceEdits, SplitThatDoesNotDisconnectWarns) {
  const auto m = split_instances(from_rows({"ccc", "ccc"}));
  const auto r = apply_instance_edits(m, {SplitInstance{1, {{0, 1}}}});
  EXPECT_EQ(r.map, m);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(InstanceEdits, SplitErrors) {
  const auto m = split_instances(from_rows({"cc.c"}));
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {SplitInstance{9, {{0, 0}}}}); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {SplitInstance{1, {{0, 3}}}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { apply_instance_edits(m, {SplitInstance{1, {{5, 5}}}}); }), ErrorCode::kValidation);
}

TEST(InstanceEdits, EditsPreserveClassPixelCounts) {
  oracle::Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const auto labels = oracle::blobby_map(rng, 24, 24, 19, 10);
    const auto m = split_instances(labels);
    if (m.table.size() < 2) continue;
    std::vector<InstanceEdit> edits;
    // merge every instance of the first instance's class; split a random id on a random pixel row
    std::set<InstanceId> same;
    const auto cls = m.table.begin()->second;
    for (const auto& [id, c] : m.table) {
      if (c == cls) same.insert(id);
    }
    edits.push_back(MergeInstances{same});
    const auto r = apply_instance_edits(m, edits);
    EXPECT_EQ(class_pixels(r.map), class_pixels(m));
    EXPECT_EQ(r.map.table.at(*same.begin()), cls);
  }
}

// ---- persistence

TEST(InstancePersistence, SaveLoadRoundTrip) {
  oracle::Rng rng(55);
  const auto m = split_instances(oracle::blobby_map(rng, 30, 20, 19));
  const auto stem = std::filesystem::temp_directory_path() / "segfuse_inst" / "img";
  std::filesystem::remove_all(stem.parent_path());
  save_instances(stem, m);
  EXPECT_EQ(load_instances(stem), m);
  const auto table = instance_table_json(m);
  EXPECT_EQ(table.at("instances").size(), m.table.size());
  std::filesystem::remove_all(stem.parent_path());
}

TEST(InstancePersistence, TableCarriesPixelsAndBoxes) {
  const auto m = split_instances(from_rows({"....", ".cc.", ".c..", "...."}));
  const auto t = instance_table_json(m);
  ASSERT_EQ(t.at("instances").size(), 1u);
  const auto& row = t.at("instances")[0];
  EXPECT_EQ(row.at("pixels"), 3);
  EXPECT_EQ(row.at("class"), kCar);
  EXPECT_EQ(row.at("bbox"), nlohmann::json({1, 1, 2, 2}));
}

TEST(InstancePersistence, RasterRejectsWideIds) {
  InstanceMap m{Grid<InstanceId>(1, 1, 70000), {{70000, kCar}}};
  EXPECT_EQ(code_of([&] { instance_raster(m); }), ErrorCode::kValidation);
}

TEST(InstancePersistence, UnknownIdInRasterIsRejected) {
  Gray16 raster(2, 1, std::vector<std::uint16_t>{0, 4});
  const nlohmann::json table = {{"instances", nlohmann::json::array()}};
  EXPECT_EQ(code_of([&] { instance_map_from(raster, table); }), ErrorCode::kValidation);
}

TEST(InstanceEditJson, RoundTrip) {
  const std::vector<InstanceEdit> edits = {MergeInstances{{3, 1}}, SplitInstance{2, {{0, 1}, {4, 5}}}};
  const nlohmann::json j = edits;
  EXPECT_EQ(j[0].at("kind"), "merge");
  EXPECT_EQ(j[1].at("separator"), nlohmann::json({{0, 1}, {4, 5}}));
  const auto back = j.get<std::vector<InstanceEdit>>();
  EXPECT_EQ(std::get<MergeInstances>(back[0]).ids, (std::set<InstanceId>{1, 3}));
  EXPECT_EQ(std::get<SplitInstance>(back[1]).separator[1], (PixelCoord{4, 5}));
  EXPECT_THROW((nlohmann::json{{"kind", "explode"}}.get<InstanceEdit>()), Error);
}
