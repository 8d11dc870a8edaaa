// Writes the frozen golden fixtures under tests/golden. Run once; the files
// are committed and compared against by the test suite.

#include <filesystem>
#include <iostream>

#include "iterseg/checkpoint.hpp"
#include "iterseg/dataset.hpp"
#include "iterseg/image_io.hpp"
#include "iterseg/pipeline.hpp"
#include "iterseg/postprocess.hpp"
#include "support.hpp"

using namespace iterseg;
using namespace testing_support;

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : golden_dir();
  ensure_directory(dir);

  const SegNet net = golden_net();
  save_checkpoint(dir / "model.ckpt", net);
  const auto arch = small_arch();
  const Heatmap h = predict_heatmap(
      net, encode_input(arch, pattern_patch(arch.patch_size), pattern_heatmap(arch.heatmap_size),
                        kGoldenCategory));
  write_text(dir / "model_heatmap.csv", heatmap_csv(h));

  const Scene scene = generate_scene(SceneConfig{}, kGoldenSceneSeed);
  write_ppm(dir / "scene.ppm", scene.image);
  const PatchSample p = extract_patch(scene, scene.instances[0].bbox, 0, ArchDescriptor{});
  write_ppm(dir / "patch.ppm", p.patch);
  write_mask_pgm(dir / "patch_mask.pgm", p.gt_mask);

  RgbImage flat(16, 16);
  for (std::size_t i = 0; i < flat.pixels.size(); ++i) flat.pixels[i] = 120;
  const SuperpixelMap sp = compute_superpixels(flat, {4, 10.0, 10});
  Grid<std::uint8_t> labels(16, 16);
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels.values[i] = static_cast<std::uint8_t>(sp.labels.values[i]);
  write_pgm(dir / "superpixel_tiles.pgm", labels);
  std::cout << "golden files written to " << dir << " (" << sp.count << " superpixels)\n";
}
