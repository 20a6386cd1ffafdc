#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "segfuse/fused_io.hpp"
#include "segfuse/fusion.hpp"
#include "support/oracles.hpp"

using namespace segfuse;

namespace {

constexpr ClassId A = 2;
constexpr ClassId B = 9;

std::vector<LabelMap> pixels(std::initializer_list<ClassId> preds) {
  std::vector<LabelMap> out;
  for (auto p : preds) out.emplace_back(1, 1, p);
  return out;
}

FusedResult fused_row(std::vector<ClassId> labels, std::vector<std::uint8_t> reliable) {
  const int w = static_cast<int>(labels.size());
  FusedResult r{LabelMap(w, 1, std::move(labels)), ConfidenceGrid(w, 1, 0.5),
                BitMask(w, 1, std::move(reliable)), {}, 0.7};
  r.stats = detail::summarize(r);
  return r;
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

const auto kDefaultWeights = std::vector<double>{0.4, 0.3, 0.2, 0.1};

}  // namespace

// ---- fuse: the listed single-pixel cases

TEST(Fuse, UnanimousAgreement) {
  const auto r = fuse(pixels({3, 3, 3, 3}), FusionConfig::make(kDefaultWeights));
  EXPECT_EQ(r.labels.at(0, 0), 3);
  EXPECT_DOUBLE_EQ(r.confidence.at(0, 0), 1.0);
  EXPECT_TRUE(r.reliable.test(0, 0));
  EXPECT_DOUBLE_EQ(r.stats.reliable_fraction, 1.0);
}

TEST(Fuse, ExactlyAlphaIsNotReliable) {
  const auto r = fuse(pixels({A, A, B, B}), FusionConfig::make(kDefaultWeights));
  EXPECT_EQ(r.labels.at(0, 0), A);
  EXPECT_NEAR(r.confidence.at(0, 0), 0.7, 1e-12);
  EXPECT_FALSE(r.reliable.test(0, 0));
}

TEST(Fuse, EqualWeightsThreeOfFour) {
  const auto r = fuse(pixels({A, A, A, B}), FusionConfig::make({0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(r.labels.at(0, 0), A);
  EXPECT_DOUBLE_EQ(r.confidence.at(0, 0), 0.75);
  EXPECT_TRUE(r.reliable.test(0, 0));
}

TEST(Fuse, MajorityOfWeightBeatsTopMethod) {
  const auto r = fuse(pixels({A, B, B, B}), FusionConfig::make(kDefaultWeights));
  EXPECT_EQ(r.labels.at(0, 0), B);
  EXPECT_NEAR(r.confidence.at(0, 0), 0.6, 1e-12);
  EXPECT_FALSE(r.reliable.test(0, 0));
}

// ---- alpha boundary under floating point

TEST(Fuse, SumsThatRoundAboveAlphaStayUnreliable) {
  // 0.1 + 0.2 + 0.4 evaluates to 0.7000000000000001 in doubles.
  const auto r = fuse(pixels({B, A, A, A}), FusionConfig::make({0.3, 0.1, 0.2, 0.4}));
  EXPECT_EQ(r.labels.at(0, 0), A);
  EXPECT_FALSE(r.reliable.test(0, 0));
}

TEST(Fuse, JustAboveAlphaIsReliable) {
  const auto r = fuse(pixels({A, A, A, B}), FusionConfig::make({0.4, 0.3, 0.01, 0.29}));
  EXPECT_TRUE(r.reliable.test(0, 0));
}

// ---- ties

TEST(Fuse, TieGoesToHeaviestMethodsLabel) {
  // S_A = 0.4 + 0.1, S_B = 0.3 + 0.2
  const auto r = fuse(pixels({A, B, B, A}), FusionConfig::make(kDefaultWeights));
  EXPECT_EQ(r.labels.at(0, 0), A);
  const auto r2 = fuse(pixels({B, A, A, B}), FusionConfig::make(kDefaultWeights));
  EXPECT_EQ(r2.labels.at(0, 0), B);
}

TEST(Fuse, EqualWeightTieGoesToLowestIndex) {
  const auto r = fuse(pixels({5, 6, 7, 8}), FusionConfig::make({0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(r.labels.at(0, 0), 5);
  const auto r2 = fuse(pixels({6, 5, 5, 6}), FusionConfig::make({0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(r2.labels.at(0, 0), 6);
}

TEST(Fuse, TieResolvedThroughLaterHeavyMethod) {
  // weights reordered: method 3 is the heaviest
  const auto r = fuse(pixels({A, A, B, B}), FusionConfig::make({0.2, 0.3, 0.4, 0.1}));
  EXPECT_EQ(r.labels.at(0, 0), B);
}

// ---- errors

TEST(Fuse, Errors) {
  const auto cfg = FusionConfig::make(kDefaultWeights);
  EXPECT_EQ(code_of([&] { fuse(std::vector<LabelMap>{}, cfg); }), ErrorCode::kInvalidArgument);
  auto mixed = pixels({1, 1, 1, 1});
  mixed[2] = LabelMap(2, 1, ClassId{1});
  EXPECT_EQ(code_of([&] { fuse(mixed, cfg); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(code_of([&] { fuse(pixels({1, 1, kUnlabeled, 1}), cfg); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { fuse(pixels({1, 1, 1}), cfg); }), ErrorCode::kInvalidArgument);
}

TEST(FusionConfig, Validation) {
  EXPECT_EQ(code_of([] { FusionConfig::make({1.0}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { FusionConfig::make({0.5, 0.6}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { FusionConfig::make({1.5, -0.5}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { FusionConfig::make({0.5, 0.5}, 0.0); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { FusionConfig::make({0.5, 0.5}, 1.5); }), ErrorCode::kInvalidArgument);
  EXPECT_NO_THROW(FusionConfig::make({0.5, 0.5}, 1.0));
  EXPECT_DOUBLE_EQ(FusionConfig::make({0.5, 0.5}).alpha, 0.7);
  FusionConfig named{{"a", "b", "c"}, {0.5, 0.5}, 0.7, TiePolicy::kHighestWeightMethod};
  EXPECT_EQ(code_of([&] { named.validate(); }), ErrorCode::kInvalidArgument);
}

TEST(FusionConfig, JsonRoundTrip) {
  const auto cfg = FusionConfig::make(kDefaultWeights, 0.7, {"vpred", "accel", "psp", "psa"});
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.at("tie_policy"), "highest_weight_method");
  const auto back = j.get<FusionConfig>();
  EXPECT_EQ(back.method_names, cfg.method_names);
  EXPECT_EQ(back.weights, cfg.weights);
  EXPECT_EQ(back.alpha, cfg.alpha);
  auto bad = j;
  bad["tie_policy"] = "coin_flip";
  EXPECT_THROW(bad.get<FusionConfig>(), Error);
}

// ---- properties

TEST(FuseProperty, MatchesOracleOnRandomInputs) {
  oracle::Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t K = static_cast<std::size_t>(oracle::uniform(rng, 2, 4));
    const int w = oracle::uniform(rng, 1, 48);
    const int h = oracle::uniform(rng, 1, 48);
    const auto truth = oracle::blobby_map(rng, w, h, 19);
    std::vector<LabelMap> masks;
    for (std::size_t k = 0; k < K; ++k) masks.push_back(oracle::corrupt(rng, truth, 0.4, 19));
    const auto parts = oracle::random_composition(rng, K, 20);
    std::vector<double> weights;
    for (int p : parts) weights.push_back(p / 20.0);
    const int alpha_units = oracle::uniform(rng, 1, 19);
    const auto cfg = FusionConfig::make(weights, alpha_units / 20.0);
    const auto got = fuse(masks, cfg);
    const auto want = oracle::fuse(masks, weights, cfg.alpha, 20, alpha_units);
    for (std::size_t i = 0; i < want.size(); ++i) {
      ASSERT_EQ(got.labels[i], want[i].label) << "trial " << trial << " pixel " << i;
      ASSERT_EQ(got.confidence[i], want[i].confidence) << "trial " << trial << " pixel " << i;
      ASSERT_EQ(got.reliable[i] != 0, want[i].reliable) << "trial " << trial << " pixel " << i;
    }
  }
}

TEST(FuseProperty, ThreadCountDoesNotChangeResult) {
  oracle::Rng rng(5);
  const auto truth = oracle::blobby_map(rng, 37, 53, 19);
  std::vector<LabelMap> masks;
  for (int k = 0; k < 4; ++k) masks.push_back(oracle::corrupt(rng, truth, 0.3, 19));
  const auto cfg = FusionConfig::make(kDefaultWeights);
  const auto one = fuse(masks, cfg, 1);
  for (unsigned jobs : {2u, 3u, 8u, 100u}) {
    const auto many = fuse(masks, cfg, jobs);
    EXPECT_EQ(many.labels, one.labels);
    EXPECT_EQ(many.confidence, one.confidence);
    EXPECT_EQ(many.reliable, one.reliable);
  }
}

TEST(FuseProperty, PermutingMethodsWithWeightsKeepsResult) {
  oracle::Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = oracle::blobby_map(rng, 20, 20, 19);
    std::vector<LabelMap> masks;
    for (int k = 0; k < 4; ++k) masks.push_back(oracle::corrupt(rng, truth, 0.5, 19));
    // distinct weights so the tie order is carried along by the permutation
    std::vector<double> weights = {0.05, 0.15, 0.35, 0.45};
    const auto base = fuse(masks, FusionConfig::make(weights));
    std::vector<std::size_t> perm = {0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<LabelMap> pm;
    std::vector<double> pw;
    for (auto p : perm) {
      pm.push_back(masks[p]);
      pw.push_back(weights[p]);
    }
    const auto permuted = fuse(pm, FusionConfig::make(pw));
    EXPECT_EQ(permuted.labels, base.labels);
    for (std::size_t i = 0; i < base.confidence.size(); ++i) {
      EXPECT_NEAR(permuted.confidence[i], base.confidence[i], 1e-12);
    }
  }
}

TEST(FuseProperty, AlphaMonotonicity) {
  oracle::Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = oracle::blobby_map(rng, 24, 24, 19);
    std::vector<LabelMap> masks;
    for (int k = 0; k < 4; ++k) masks.push_back(oracle::corrupt(rng, truth, 0.45, 19));
    double prev = 2.0;
    for (int a = 1; a <= 9; ++a) {
      const double f = fuse(masks, FusionConfig::make(kDefaultWeights, a / 10.0)).stats.reliable_fraction;
      EXPECT_LE(f, prev);
      prev = f;
    }
  }
}

TEST(FuseProperty, UnanimousPixelsAreReliableBelowOne) {
  oracle::Rng rng(3);
  const auto truth = oracle::blobby_map(rng, 16, 16, 19);
  const std::vector<LabelMap> masks(4, truth);
  const auto r = fuse(masks, FusionConfig::make({0.1, 0.2, 0.3, 0.4}, 0.99));
  EXPECT_EQ(r.labels, truth);
  EXPECT_EQ(r.reliable.count(), r.reliable.size());
  for (auto c : r.confidence.values()) EXPECT_NEAR(c, 1.0, 1e-12);
}

TEST(FuseStats, PerClassReliableFraction) {
  std::vector<LabelMap> masks = {LabelMap(3, 1, std::vector<ClassId>{1, 1, 2}),
                                 LabelMap(3, 1, std::vector<ClassId>{1, 3, 2}),
                                 LabelMap(3, 1, std::vector<ClassId>{1, 3, 2})};
  const auto r = fuse(masks, FusionConfig::make({0.5, 0.25, 0.25}, 0.6));
  // pixel 1: S_1 = 0.5, S_3 = 0.5 -> tie to method 0 -> label 1, unreliable
  EXPECT_EQ(r.labels, LabelMap(3, 1, std::vector<ClassId>{1, 1, 2}));
  EXPECT_EQ(r.stats.reliable_pixels, 2u);
  EXPECT_DOUBLE_EQ(r.stats.per_class_reliable_fraction.at(1), 0.5);
  EXPECT_DOUBLE_EQ(r.stats.per_class_reliable_fraction.at(2), 1.0);
}

// ---- uncertainty_map

TEST(UncertaintyMap, FullyReliableIsIdentity) {
  const auto r = fused_row({4, 7, 1}, {1, 1, 1});
  EXPECT_EQ(uncertainty_map(r), r.labels);
}

TEST(UncertaintyMap, FullyUnreliableIsAllSentinel) {
  const auto r = fused_row({4, 7, 1}, {0, 0, 0});
  EXPECT_EQ(uncertainty_map(r), LabelMap(3, 1, kUnlabeled));
}

TEST(UncertaintyMap, MixedPixels) {
  const auto r = fused_row({4, 7}, {1, 0});
  EXPECT_EQ(uncertainty_map(r), LabelMap(2, 1, std::vector<ClassId>{4, 255}));
}

// ---- merge_manual

TEST(MergeManual, NothingToDo) {
  const auto r = fused_row({4, 7, 1}, {1, 1, 1});
  EXPECT_EQ(merge_manual(r, {}), r.labels);
}

TEST(MergeManual, EditFillsSentinel) {
  const auto r = fused_row({4, 7}, {1, 0});
  const std::vector<EditOp> edits = {{0, 1, 2, 9}};
  EXPECT_EQ(merge_manual(r, edits), LabelMap(2, 1, std::vector<ClassId>{4, 9}));
}

TEST(MergeManual, RemainingSentinelIsReported) {
  const auto r = fused_row({4, 7}, {1, 0});
  try {
    merge_manual(r, {});
    FAIL() << "expected UnresolvedPixels";
  } catch (const UnresolvedPixels& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPreconditionFailed);
    ASSERT_EQ(e.count(), 1u);
    EXPECT_EQ(e.pixels()[0], (PixelCoord{0, 1}));
    EXPECT_NE(std::string(e.what()).find("(0,1)"), std::string::npos);
  }
}

TEST(MergeManual, LaterSpansOverwrite) {
  const auto r = fused_row({4, 7, 7, 7}, {0, 0, 0, 0});
  const std::vector<EditOp> edits = {{0, 0, 4, 1}, {0, 1, 3, 2}};
  EXPECT_EQ(merge_manual(r, edits), LabelMap(4, 1, std::vector<ClassId>{1, 2, 2, 1}));
}

TEST(MergeManual, EditsMayCorrectReliablePixels) {
  const auto r = fused_row({4, 7}, {1, 1});
  const std::vector<EditOp> edits = {{0, 0, 1, 5}};
  EXPECT_EQ(merge_manual(r, edits), LabelMap(2, 1, std::vector<ClassId>{5, 7}));
}

TEST(MergeManual, OutOfBoundsAndBadLabels) {
  const auto r = fused_row({4, 7}, {1, 0});
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{0, 1, 3, 9}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{1, 0, 1, 9}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{0, 1, 1, 9}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{0, -1, 1, 9}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{0, 1, 2, 19}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { merge_manual(r, std::vector<EditOp>{{0, 1, 2, 255}}); }), ErrorCode::kValidation);
}

TEST(MergeManual, IdempotentOverFinalizedMap) {
  const auto r = fused_row({4, 7, 3}, {1, 0, 0});
  const std::vector<EditOp> edits = {{0, 1, 3, 9}};
  const auto once = merge_manual(r, edits);
  const auto again = fused_row(std::vector<ClassId>(once.values().begin(), once.values().end()), {1, 1, 1});
  EXPECT_EQ(merge_manual(again, edits), once);
}

// ---- weight search

TEST(WeightSearch, SimplexGridForTwoMethods) {
  const auto g = simplex_grid(2, 2);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0], (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(g[1], (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(g[2], (std::vector<double>{0.0, 1.0}));
}

TEST(WeightSearch, GridSizeIsStarsAndBars) {
  EXPECT_EQ(simplex_grid(4, 10).size(), 286u);  // C(13, 3)
  EXPECT_EQ(simplex_grid(3, 10).size(), 66u);   // C(12, 2)
  for (const auto& w : simplex_grid(4, 10)) {
    double s = 0;
    for (double v : w) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(WeightSearch, IdenticalPredictorsKeepGridOrder) {
  oracle::Rng rng(8);
  const auto m = oracle::blobby_map(rng, 8, 8, 19);
  const std::vector<std::vector<LabelMap>> sets = {{m, m, m}};
  const auto ranked = weight_search(sets, 0.25, 0.7);
  const auto grid = simplex_grid(3, 4);
  ASSERT_EQ(ranked.size(), grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(ranked[i].weights, grid[i]);
    EXPECT_DOUBLE_EQ(ranked[i].mean_reliable_fraction, 1.0);
  }
}

TEST(WeightSearch, FavoursTheAccuratePredictor) {
  oracle::Rng rng(123);
  std::vector<std::vector<LabelMap>> sets;
  for (int i = 0; i < 3; ++i) {
    const auto truth = oracle::blobby_map(rng, 32, 32, 19);
    sets.push_back({oracle::corrupt(rng, truth, 0.05, 19), oracle::corrupt(rng, truth, 0.40, 19)});
  }
  const auto ranked = weight_search(sets, 0.1, 0.7);
  EXPECT_GE(ranked.front().weights[0], 0.5);
}

TEST(WeightSearch, RankingIsSortedDescending) {
  oracle::Rng rng(4);
  const auto truth = oracle::blobby_map(rng, 16, 16, 19);
  std::vector<std::vector<LabelMap>> sets = {{oracle::corrupt(rng, truth, 0.1, 19),
                                              oracle::corrupt(rng, truth, 0.3, 19),
                                              oracle::corrupt(rng, truth, 0.5, 19)}};
  const auto ranked = weight_search(sets, 0.1, 0.7);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    EXPECT_GE(ranked[i - 1].mean_reliable_fraction, ranked[i].mean_reliable_fraction);
  }
}

TEST(WeightSearch, Errors) {
  const std::vector<std::vector<LabelMap>> none;
  EXPECT_EQ(code_of([&] { weight_search(none, 0.1, 0.7); }), ErrorCode::kInvalidArgument);
  const std::vector<std::vector<LabelMap>> one = {pixels({1, 2})};
  EXPECT_EQ(code_of([&] { weight_search(one, 0.0, 0.7); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { weight_search(one, 1.5, 0.7); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { weight_search(one, 0.3, 0.7); }), ErrorCode::kInvalidArgument);
  const std::vector<std::vector<LabelMap>> ragged = {pixels({1, 2}), pixels({1, 2, 3})};
  EXPECT_EQ(code_of([&] { weight_search(ragged, 0.5, 0.7); }), ErrorCode::kInvalidArgument);
}

// ---- persistence

TEST(FusedIo, SaveLoadKeepsLabelsAndReliability) {
  oracle::Rng rng(12);
  const auto truth = oracle::blobby_map(rng, 19, 13, 19);
  std::vector<LabelMap> masks;
  for (int k = 0; k < 4; ++k) masks.push_back(oracle::corrupt(rng, truth, 0.4, 19));
  const auto cfg = FusionConfig::make(kDefaultWeights);
  const auto r = fuse(masks, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "segfuse_fused_io";
  std::filesystem::remove_all(dir);
  save_fused(dir, r, cfg);
  const auto back = load_fused(dir);
  EXPECT_EQ(back.labels, r.labels);
  EXPECT_EQ(back.reliable, r.reliable);
  EXPECT_EQ(back.stats.reliable_pixels, r.stats.reliable_pixels);
  EXPECT_EQ(back.alpha, r.alpha);
  for (std::size_t i = 0; i < r.confidence.size(); ++i) {
    EXPECT_NEAR(back.confidence[i], r.confidence[i], 0.5 / 65535.0 + 1e-12);
  }
  EXPECT_EQ(uncertainty_map(back), uncertainty_map(r));
  std::filesystem::remove_all(dir);
}
