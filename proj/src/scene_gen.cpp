#include "dadet/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "dadet/detector.hpp"
#include "dadet/errors.hpp"

namespace fs = std::filesystem;

namespace dadet {

namespace {

constexpr std::uint64_t kLayoutStream = 0xA11C;
constexpr std::uint64_t kStyleStream = 0xB22D;

constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {0.85f, 0.15f, 0.15f},  // red
    {0.15f, 0.25f, 0.85f},  // blue
    {0.10f, 0.70f, 0.20f},  // green
    {0.95f, 0.75f, 0.10f},  // yellow
    {0.80f, 0.15f, 0.80f},  // magenta
    {0.10f, 0.75f, 0.80f},  // cyan
    {0.55f, 0.25f, 0.85f},  // purple
    {0.95f, 0.45f, 0.10f},  // orange
}};

// Glyph coverage in normalized coords u,v in [-1,1].
bool glyph_hit(int shape, float u, float v) {
  switch (shape) {
    case 0:  // disc
      return u * u + v * v <= 1.0f;
    case 1:  // square
      return std::max(std::fabs(u), std::fabs(v)) <= 0.9f;
    case 2:  // triangle, apex up
      return v >= -0.85f && v <= 0.85f &&
             std::fabs(u) <= 0.95f * (v + 0.85f) / 1.7f;
    case 3:  // diamond
      return std::fabs(u) + std::fabs(v) <= 1.0f;
    case 4: {  // ring
      const float r = std::sqrt(u * u + v * v);
      return r >= 0.55f && r <= 1.0f;
    }
    case 5:  // plus
      return (std::fabs(u) <= 0.33f && std::fabs(v) <= 1.0f) ||
             (std::fabs(v) <= 0.33f && std::fabs(u) <= 1.0f);
    case 6:  // diagonal cross
      return std::max(std::fabs(u), std::fabs(v)) <= 1.0f &&
             (std::fabs(u - v) <= 0.42f || std::fabs(u + v) <= 0.42f);
    default:  // hollow square frame
      return std::max(std::fabs(u), std::fabs(v)) >= 0.55f &&
             std::max(std::fabs(u), std::fabs(v)) <= 0.95f;
  }
}

void class_style(int class_id, int& shape, std::array<float, 3>& color) {
  shape = class_id % 8;
  color = kPalette[(class_id + class_id / 8) % 8];
}

float rect_iou(float ax1, float ay1, float ax2, float ay2, float bx1, float by1,
               float bx2, float by2) {
  return iou_boxf({ax1, ay1, ax2, ay2}, {bx1, by1, bx2, by2});
}

}  // namespace

CorruptionProfile derive_corruption_profile(std::uint64_t corruption_seed,
                                            float gain_lo, float gain_hi,
                                            float bias_range) {
  Rng rng(mix_seed(corruption_seed, 0xC0DE));
  CorruptionProfile p;
  for (int c = 0; c < 3; ++c) p.gain[c] = rng.uniform(gain_lo, gain_hi);
  for (int c = 0; c < 3; ++c) p.bias[c] = rng.uniform(-bias_range, bias_range);
  return p;
}

RenderedScene render_scene(const SceneSpec& spec, int index) {
  if (spec.num_classes < 1)
    throw std::invalid_argument("render_scene: need at least one class");
  const int S = spec.image_size;
  Rng layout(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(index)),
                      kLayoutStream));
  Rng style(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(index)),
                     kStyleStream));

  RenderedScene scene;
  scene.image = Image(S, S);
  // plain light background, slight per-scene tone (shared across domains)
  const float bg = 0.80f + layout.uniform(-0.04f, 0.04f);
  std::fill(scene.image.data.begin(), scene.image.data.end(), bg);

  const int n_objects = layout.uniform_int(spec.objects_min, spec.objects_max);
  std::vector<std::array<int, 3>> placed;  // x0, y0, size
  struct Draw {
    int class_id, x0, y0, size;
    float jitter;
  };
  std::vector<Draw> draws;
  for (int i = 0; i < n_objects; ++i) {
    const int cls = layout.uniform_int(0, spec.num_classes - 1);
    const int size = layout.uniform_int(spec.glyph_min,
                                        std::min(spec.glyph_max, S - 2));
    const float jitter = layout.uniform(-0.08f, 0.08f);
    bool ok = false;
    int x0 = 0, y0 = 0;
    for (int attempt = 0; attempt < 25 && !ok; ++attempt) {
      x0 = layout.uniform_int(1, S - size - 1);
      y0 = layout.uniform_int(1, S - size - 1);
      ok = true;
      for (const auto& [px, py, ps] : placed) {
        const float v = rect_iou(
            static_cast<float>(x0), static_cast<float>(y0),
            static_cast<float>(x0 + size), static_cast<float>(y0 + size),
            static_cast<float>(px), static_cast<float>(py),
            static_cast<float>(px + ps), static_cast<float>(py + ps));
        if (v > 0.25f) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;  // crowded scene, drop the object
    placed.push_back({x0, y0, size});
    draws.push_back({cls, x0, y0, size, jitter});
  }

  for (const auto& d : draws) {
    int shape;
    std::array<float, 3> color;
    class_style(d.class_id, shape, color);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(S) * S, 0);
    int mnx = S, mny = S, mxx = -1, mxy = -1;
    const float half = 0.5f * static_cast<float>(d.size);
    for (int py = d.y0; py < d.y0 + d.size; ++py)
      for (int px = d.x0; px < d.x0 + d.size; ++px) {
        const float u = ((px + 0.5f) - (d.x0 + half)) / half;
        const float v = ((py + 0.5f) - (d.y0 + half)) / half;
        if (!glyph_hit(shape, u, v)) continue;
        mask[static_cast<std::size_t>(py) * S + px] = 1;
        mnx = std::min(mnx, px);
        mny = std::min(mny, py);
        mxx = std::max(mxx, px);
        mxy = std::max(mxy, py);
        for (int c = 0; c < 3; ++c)
          scene.image.at(c, py, px) =
              std::clamp(color[c] + d.jitter, 0.0f, 1.0f);
      }
    if (mxx < 0) continue;  // degenerate raster (too small), no annotation
    scene.boxes.push_back({d.class_id, static_cast<float>(mnx),
                           static_cast<float>(mny), static_cast<float>(mxx + 1),
                           static_cast<float>(mxy + 1)});
    scene.masks.push_back(std::move(mask));
  }

  if (spec.domain == Domain::Target) {
    const CorruptionProfile& cp = spec.corruption;
    for (int c = 0; c < 3; ++c) {
      const float g = cp.gain[c], b = cp.bias[c];
      float* plane = scene.image.data.data() +
                     static_cast<std::size_t>(c) * S * S;
      for (int i = 0; i < S * S; ++i) plane[i] = plane[i] * g + b;
    }
    // background clutter, kept clear of annotated objects
    for (int r = 0; r < cp.clutter_rects; ++r) {
      const int w = style.uniform_int(8, std::max(9, S / 4));
      const int h = style.uniform_int(8, std::max(9, S / 4));
      const float cr = style.uniform(0.15f, 0.75f);
      const float cg = style.uniform(0.15f, 0.75f);
      const float cb = style.uniform(0.15f, 0.75f);
      for (int attempt = 0; attempt < 30; ++attempt) {
        const int x0 = style.uniform_int(0, std::max(0, S - w - 1));
        const int y0 = style.uniform_int(0, std::max(0, S - h - 1));
        bool clear = true;
        for (const auto& box : scene.boxes) {
          const float v = rect_iou(static_cast<float>(x0),
                                   static_cast<float>(y0),
                                   static_cast<float>(x0 + w),
                                   static_cast<float>(y0 + h), box.x1, box.y1,
                                   box.x2, box.y2);
          if (v > 0.3f) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        for (int py = y0; py < y0 + h; ++py)
          for (int px = x0; px < x0 + w; ++px) {
            scene.image.at(0, py, px) = cr;
            scene.image.at(1, py, px) = cg;
            scene.image.at(2, py, px) = cb;
          }
        break;
      }
    }
    if (cp.blur_radius > 0) scene.image = box_blur(scene.image, cp.blur_radius);
    if (cp.noise_sigma > 0.0f)
      for (auto& v : scene.image.data) v += cp.noise_sigma * style.normal();
  }
  for (auto& v : scene.image.data) v = std::clamp(v, 0.0f, 1.0f);
  return scene;
}

Manifest generate_dataset(const SceneSpec& spec, int count,
                          const std::string& out_dir) {
  if (count < 1)
    throw ConfigError("generate_dataset: count must be at least 1");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec)
    throw IoError("cannot create output directory " + out_dir + ": " +
                  ec.message());

  Manifest manifest;
  manifest.set_base_dir(out_dir);
  for (int i = 0; i < count; ++i) {
    RenderedScene scene = render_scene(spec, i);
    char name[64];
    std::snprintf(name, sizeof name, "images/img_%06d.png", i);
    write_png(scene.image, (fs::path(out_dir) / name).string());
    ManifestEntry entry;
    entry.image = name;
    entry.boxes = std::move(scene.boxes);
    manifest.add(std::move(entry));
  }
  manifest.write((fs::path(out_dir) / "manifest.jsonl").string());
  return manifest;
}

}  // namespace dadet
