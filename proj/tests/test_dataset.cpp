#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsepi/dataset.hpp"

using namespace tsepi;

namespace {

SynthOptions small(std::size_t num, const std::string& split = "train") {
  SynthOptions o;
  o.split = split;
  o.num = num;
  o.recipe.seconds = 0.3;
  return o;
}

}  // namespace

TEST(Manifest, RoundTripTenRecords) {
  const auto dir = tsepi::testing::temp_dir("manifest_rt");
  const auto written = synth_dataset(dir, small(10));
  ASSERT_EQ(written.size(), 10u);
  const auto read = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(read.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_TRUE(read[i] == written[i]) << i;
  EXPECT_EQ(read[3].id, sample_id(3));
  EXPECT_EQ(read[0].classes.front(), read[0].target_class);

  const auto ex = load_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(ex.size(), 10u);
  EXPECT_EQ(ex[0].mixture.size(), written[0].length);
  EXPECT_EQ(ex[0].label, written[0].target_class);
  EXPECT_EQ(ex[0].pitch.size(), static_cast<std::size_t>(frame_count(ex[0].target.size(), 1024, 160)));
}

TEST(Manifest, InfiniteNoiseSnrSurvivesJson) {
  ManifestRecord r;
  r.id = "x";
  r.classes = {1};
  const auto dir = tsepi::testing::temp_dir("manifest_inf");
  write_manifest(dir / "m.jsonl", {r});
  const auto back = read_manifest(dir / "m.jsonl", false);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(std::isinf(back[0].noise_snr_db));
}

TEST(Manifest, MissingFileIsNamed) {
  const auto dir = tsepi::testing::temp_dir("manifest_missing");
  synth_dataset(dir, small(3));
  std::filesystem::remove(dir / "target" / (sample_id(1) + ".wav"));
  try {
    read_manifest(dir / "manifest.jsonl");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
    EXPECT_NE(std::string(e.what()).find(sample_id(1) + ".wav"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MalformedLineReportsLocation) {
  const auto dir = tsepi::testing::temp_dir("manifest_bad");
  synth_dataset(dir, small(2));
  { std::ofstream(dir / "manifest.jsonl", std::ios::app) << "{not json\n"; }
  try {
    read_manifest(dir / "manifest.jsonl");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
    EXPECT_NE(std::string(e.what()).find("manifest.jsonl:3"), std::string::npos) << e.what();
  }
  tsepi::testing::expect_error([&] { read_manifest(dir / "absent.jsonl"); }, ErrorCode::Io);
}

TEST(Synth, SplitsDifferAndRerunsMatch) {
  const auto a = tsepi::testing::temp_dir("synth_a");
  const auto b = tsepi::testing::temp_dir("synth_b");
  const auto c = tsepi::testing::temp_dir("synth_c");
  const auto ra = synth_dataset(a, small(2));
  const auto rb = synth_dataset(b, small(2));
  const auto rc = synth_dataset(c, small(2, "val"));
  EXPECT_TRUE(ra[1] == rb[1]);
  EXPECT_EQ(wav::read(a / ra[1].mixture).samples, wav::read(b / rb[1].mixture).samples);
  EXPECT_NE(ra[0].seed, rc[0].seed);
  EXPECT_NE(split_seed("train", 17), split_seed("test", 17));
}

TEST(Synth, RirCacheWritten) {
  const auto dir = tsepi::testing::temp_dir("synth_rir");
  auto o = small(1);
  o.save_rirs = true;
  synth_dataset(dir, o);
  EXPECT_TRUE(std::filesystem::exists(dir / "rir" / (sample_id(0) + "_s0.wav")));
  EXPECT_TRUE(std::filesystem::exists(dir / "rir" / (sample_id(0) + "_s1.json")));
}
