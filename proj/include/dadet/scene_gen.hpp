#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dadet/image.hpp"
#include "dadet/manifest.hpp"
#include "dadet/tensor.hpp"

namespace dadet {

enum class Domain { Source, Target };

/// Target-domain rendering degradation. Gains/biases are drawn once per
/// corruption seed so every target split shares one style.
struct CorruptionProfile {
  std::array<float, 3> gain{1.0f, 1.0f, 1.0f};
  std::array<float, 3> bias{0.0f, 0.0f, 0.0f};
  float noise_sigma = 0.05f;
  int blur_radius = 1;
  int clutter_rects = 3;
};

CorruptionProfile derive_corruption_profile(std::uint64_t corruption_seed,
                                            float gain_lo = 0.6f,
                                            float gain_hi = 0.9f,
                                            float bias_range = 0.05f);

/// Two-domain scene generator. The same (seed, index) always produces the
/// same object layout; the domain only changes the rendering style, so
/// source/target annotation sets are identical.
struct SceneSpec {
  std::uint64_t seed = 1;
  Domain domain = Domain::Source;
  int image_size = 96;
  int num_classes = 8;  // glyph shape+color combinations
  int objects_min = 1;
  int objects_max = 4;
  int glyph_min = 14;
  int glyph_max = 56;
  CorruptionProfile corruption;  // applied when domain == Target
};

struct RenderedScene {
  Image image;
  std::vector<BoxAnnotation> boxes;
  // Per-object glyph coverage mask (image_size^2, row-major, 0/1), taken
  // before any corruption. Boxes are the exact mask bounding boxes.
  std::vector<std::vector<std::uint8_t>> masks;
};

RenderedScene render_scene(const SceneSpec& spec, int index);

/// Renders `count` scenes into out_dir/images/*.png and writes
/// out_dir/manifest.jsonl; returns the manifest. Pure function of
/// (spec, count): regenerating yields byte-identical files.
Manifest generate_dataset(const SceneSpec& spec, int count,
                          const std::string& out_dir);

}  // namespace dadet
