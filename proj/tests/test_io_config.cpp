#include <gtest/gtest.h>

#include <filesystem>

#include "iterseg/checkpoint.hpp"
#include "iterseg/config.hpp"
#include "iterseg/image_io.hpp"
#include "support.hpp"

using namespace iterseg;
using namespace testing_support;
namespace fs = std::filesystem;

TEST(Checkpoint, RoundTripIsByteIdentical) {
  for (const ArchDescriptor& a : {small_arch(), ArchDescriptor{}}) {
    const SegNet net = init_params(a, 31);
    const auto bytes = serialize_checkpoint(net);
    const SegNet back = deserialize_checkpoint(bytes);
    EXPECT_TRUE(back == net);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path p = fs::temp_directory_path() / "iterseg_test_ckpt.bin";
  const SegNet net = golden_net();
  save_checkpoint(p, net);
  EXPECT_TRUE(load_checkpoint(p) == net);
  save_checkpoint(p, load_checkpoint(p));
  EXPECT_EQ(detail::read_file(p), serialize_checkpoint(net));
  fs::remove(p);
  EXPECT_THROW(load_checkpoint(p), IoError);
}

TEST(Checkpoint, EverySingleByteFlipIsDetected) {
  const auto bytes = serialize_checkpoint(golden_net());
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    EXPECT_THROW(deserialize_checkpoint(bad), CorruptCheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, TruncatedOrForeignIsCorrupt) {
  const auto bytes = serialize_checkpoint(golden_net());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(deserialize_checkpoint(cut), CorruptCheckpointError) << n;
  }
  std::vector<std::uint8_t> text{'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd', '!', '!'};
  EXPECT_THROW(deserialize_checkpoint(text), CorruptCheckpointError);
}

TEST(Config, DefaultsRenderAndParseBack) {
  const RunConfig d;
  const std::string text = render_config(d);
  EXPECT_EQ(render_config(parse_config(text)), text);
  EXPECT_NO_THROW(parse_config(text).validate());
  EXPECT_EQ(parse_config("").schedule.iterations_per_stage, d.schedule.iterations_per_stage);
}

TEST(Config, NonDefaultValuesRoundTrip) {
  const std::string text =
      "# comment line\n"
      "patch_size = 32   # trailing comment\n"
      "heatmap_size=16\n"
      "  block_channels = 8, 8\n"
      "block_strides = 2,2\n"
      "stage_iterations = 10,20,30,40\n"
      "learning_rate = 0.0125\n"
      "category_mix = 0.1, 0.2, 0.3, 0.4\n"
      "superpixels = on\n"
      "eval_thresholds = 0.5, 0.6, 0.7\n"
      "seed = 12345678901\n";
  const RunConfig c = parse_config(text);
  EXPECT_EQ(c.arch.patch_size, 32u);
  EXPECT_EQ(c.arch.heatmap_size, 16u);
  ASSERT_EQ(c.arch.blocks.size(), 2u);
  EXPECT_EQ(c.arch.blocks[1].channels, 8u);
  EXPECT_EQ(c.schedule.iterations_per_stage.size(), 4u);
  EXPECT_EQ(c.schedule.learning_rate, 0.0125);
  EXPECT_EQ(c.data.scene.category_mix[3], 0.4);
  EXPECT_TRUE(c.eval.superpixels);
  EXPECT_EQ(c.eval.thresholds.size(), 3u);
  EXPECT_EQ(c.seed, 12345678901u);
  EXPECT_NO_THROW(c.validate());
  const std::string canon = render_config(c);
  EXPECT_EQ(render_config(parse_config(canon)), canon);
  EXPECT_EQ(c.dataset_config().patch_size, 32u);
}

TEST(Config, DoublesSurviveExactly) {
  RunConfig c;
  c.schedule.learning_rate = 0.1 + 0.2;
  c.data.scene.pixel_noise = 1.0 / 3.0;
  const RunConfig back = parse_config(render_config(c));
  EXPECT_EQ(back.schedule.learning_rate, c.schedule.learning_rate);
  EXPECT_EQ(back.data.scene.pixel_noise, c.data.scene.pixel_noise);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("patch_size\n"), ConfigError);
  EXPECT_THROW(parse_config("patch_size = big\n"), ConfigError);
  EXPECT_THROW(parse_config("superpixels = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("learning_rate = 1e-3x\n"), ConfigError);
  EXPECT_THROW(parse_config("patch_size = 48\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("eval_thresholds = 1.5\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("train_fraction = 1\n").validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/iterseg.cfg"), IoError);
}

TEST(ImageIo, PpmAndPgmRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "iterseg_test_io";
  fs::create_directories(dir);
  const RgbImage img = pattern_patch(16);
  write_ppm(dir / "a.ppm", img);
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
  Mask m(5, 3);
  m.values = {1, 0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1};
  write_mask_pgm(dir / "m.pgm", m);
  EXPECT_EQ(read_mask_pgm(dir / "m.pgm"), m);
  write_text(dir / "junk.ppm", "P6\n4 4\n255\nxx");
  EXPECT_THROW(read_ppm(dir / "junk.ppm"), DataError);
  fs::remove_all(dir);
}
