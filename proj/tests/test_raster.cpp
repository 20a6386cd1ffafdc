#include <gtest/gtest.h>

#include <random>

#include "segfuse/png_codec.hpp"
#include "segfuse/raster.hpp"
#include "support/oracles.hpp"

using namespace segfuse;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected segfuse::Error";
  return ErrorCode::kIo;
}

}  // namespace

TEST(LabelMapCodec, SinglePixelRoundTrip) {
  LabelMap m(1, 1, std::vector<ClassId>{0});
  EXPECT_EQ(decode_label_map(encode_label_map(m)), m);
}

TEST(LabelMapCodec, SmallMapWithSentinel) {
  LabelMap m(2, 2, std::vector<ClassId>{0, 5, 255, 18});
  EXPECT_EQ(decode_label_map(encode_label_map(m)), m);
}

TEST(LabelMapCodec, RandomMapsRoundTrip) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    LabelMap m(64, 64);
    for (auto& v : m.values()) {
      const int x = oracle::uniform(rng, 0, 19);
      v = x == 19 ? kUnlabeled : static_cast<ClassId>(x);
    }
    EXPECT_EQ(decode_label_map(encode_label_map(m)), m);
  }
}

TEST(LabelMapCodec, DecodeInvertsEncode) {
  const auto decoded = decode_label_map(encode_label_map(LabelMap(1, 1, std::vector<ClassId>{7})));
  ASSERT_EQ(decoded.width(), 1);
  EXPECT_EQ(decoded.at(0, 0), 7);
}

TEST(LabelMapCodec, TruncatedStreamIsFormatError) {
  auto bytes = encode_label_map(LabelMap(8, 8, ClassId{3}));
  bytes.resize(bytes.size() / 2);
  EXPECT_EQ(code_of([&] { decode_label_map(bytes); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { decode_label_map(Bytes{1, 2, 3}); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { decode_label_map(Bytes{}); }), ErrorCode::kFormat);
}

TEST(LabelMapCodec, OutOfCatalogValueNamesPixel) {
  LabelMap m(3, 2, ClassId{1});
  m.at(1, 2) = 19;
  const auto bytes = encode_label_map(m);
  try {
    decode_label_map(bytes, ClassCatalog::street_scene());
    FAIL() << "expected validation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
    EXPECT_NE(std::string(e.what()).find("(1,2)"), std::string::npos) << e.what();
  }
}

TEST(LabelMapCodec, GrayPredictionDumpsAreAccepted) {
  Bytes px = {0, 1, 2, 18};
  const auto png = detail::write_png(2, 2, 8, PNG_COLOR_TYPE_GRAY, px, 2);
  const auto m = decode_label_map(png);
  EXPECT_EQ(m, LabelMap(2, 2, std::vector<ClassId>{0, 1, 2, 18}));
}

TEST(ImageCodec, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto img = oracle::random_image(rng, oracle::uniform(rng, 1, 40), oracle::uniform(rng, 1, 40));
    EXPECT_EQ(decode_image(encode_image(img)), img);
  }
}

TEST(BitMaskCodec, RoundTripAndOnDiskValues) {
  BitMask m(3, 1, std::vector<std::uint8_t>{1, 0, 1});
  const auto bytes = encode_bitmask(m);
  EXPECT_EQ(decode_bitmask(bytes), m);
  const auto raw = detail::read_png(bytes, detail::ReadMode::kNative);
  EXPECT_EQ(raw.pixels, (Bytes{255, 0, 255}));
}

TEST(BitMaskCodec, RejectsNonBinaryValues) {
  Bytes px = {0, 128};
  const auto png = detail::write_png(2, 1, 8, PNG_COLOR_TYPE_GRAY, px, 2);
  EXPECT_EQ(code_of([&] { decode_bitmask(png); }), ErrorCode::kValidation);
}

TEST(Gray16Codec, RoundTrip) {
  Gray16 g(3, 2, std::vector<std::uint16_t>{0, 1, 256, 65535, 40000, 7});
  EXPECT_EQ(decode_gray16(encode_gray16(g)), g);
}

TEST(EmptyRasters, EncodeIsRejected) {
  // PNG has no zero-sized images; that must surface as an Error, not a crash.
  EXPECT_EQ(code_of([] { encode_label_map(LabelMap(0, 0)); }), ErrorCode::kInvalidArgument);
}

TEST(ClassCatalog, StreetSceneHasNineteenClasses) {
  const auto cat = ClassCatalog::street_scene();
  EXPECT_EQ(cat.size(), 19u);
  EXPECT_EQ(cat[0].name, "road");
  EXPECT_EQ(cat[18].name, "bicycle");
  EXPECT_FALSE(cat.contains(kUnlabeled));
  EXPECT_EQ(cat.find("car"), ClassId{13});
}

TEST(ClassCatalog, RejectsBadCatalogs) {
  EXPECT_EQ(code_of([] { ClassCatalog({{1, "a", {}, 1.0}}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([] { ClassCatalog({{0, "a", {}, -0.5}}); }), ErrorCode::kValidation);
  std::vector<ClassInfo> many;
  for (int i = 0; i < 255; ++i) many.push_back({static_cast<ClassId>(i), "c", {}, 1.0});
  EXPECT_EQ(code_of([&] { ClassCatalog{many}; }), ErrorCode::kValidation);
}

TEST(Grid, DataLengthMustMatch) {
  EXPECT_EQ(code_of([] { LabelMap(2, 2, std::vector<ClassId>{1, 2, 3}); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([] { Image(2, 1, std::vector<std::uint8_t>(5)); }), ErrorCode::kFormat);
}

TEST(Files, LabelMapSaveLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "segfuse_raster_test";
  std::filesystem::remove_all(dir);
  LabelMap m(4, 3, ClassId{10});
  m.at(2, 3) = kUnlabeled;
  save_label_map(dir / "nested" / "m.png", m);
  EXPECT_EQ(load_label_map(dir / "nested" / "m.png"), m);
  EXPECT_EQ(code_of([&] { load_label_map(dir / "missing.png"); }), ErrorCode::kNotFound);
  std::filesystem::remove_all(dir);
}
