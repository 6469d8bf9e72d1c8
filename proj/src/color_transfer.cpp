#include "dadet/color_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dadet/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dadet {

ChannelStats compute_domain_stats(const Manifest& manifest) {
  if (manifest.size() == 0)
    throw IoError("compute_domain_stats: empty manifest");
  std::array<double, 3> sum{}, sum_sq{};
  std::size_t n = 0;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const Image img = read_png(manifest.image_path(i));
    const std::size_t per = static_cast<std::size_t>(img.width) * img.height;
    for (int c = 0; c < 3; ++c) {
      const float* plane = img.data.data() + static_cast<std::size_t>(c) * per;
      for (std::size_t p = 0; p < per; ++p) {
        sum[c] += plane[p];
        sum_sq[c] += static_cast<double>(plane[p]) * plane[p];
      }
    }
    n += per;
  }
  ChannelStats stats;
  for (int c = 0; c < 3; ++c) {
    stats.mean[c] = sum[c] / static_cast<double>(n);
    const double var =
        std::max(0.0, sum_sq[c] / static_cast<double>(n) -
                          stats.mean[c] * stats.mean[c]);
    stats.stddev[c] = std::sqrt(var);
  }
  return stats;
}

Image color_stat_transfer(const Image& image, const ChannelStats& reference) {
  Image out(image.width, image.height);
  const std::size_t per = static_cast<std::size_t>(image.width) * image.height;
  for (int c = 0; c < 3; ++c) {
    const float* src = image.data.data() + static_cast<std::size_t>(c) * per;
    float* dst = out.data.data() + static_cast<std::size_t>(c) * per;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t p = 0; p < per; ++p) {
      sum += src[p];
      sum_sq += static_cast<double>(src[p]) * src[p];
    }
    const double mu_in = sum / static_cast<double>(per);
    const double var =
        std::max(0.0, sum_sq / static_cast<double>(per) - mu_in * mu_in);
    const double sigma_in = std::sqrt(var);
    if (sigma_in < 1e-9) {
      // flat channel: mean shift only
      const float shift = static_cast<float>(reference.mean[c] - mu_in);
      for (std::size_t p = 0; p < per; ++p)
        dst[p] = std::clamp(src[p] + shift, 0.0f, 1.0f);
      continue;
    }
    const double scale = reference.stddev[c] / sigma_in;
    for (std::size_t p = 0; p < per; ++p) {
      const double v = (src[p] - mu_in) * scale + reference.mean[c];
      dst[p] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
    }
  }
  return out;
}

ChannelStats read_stats_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stats file: " + path);
  json j;
  try {
    in >> j;
    ChannelStats stats;
    for (int c = 0; c < 3; ++c) {
      stats.mean[c] = j.at("mean").at(c).get<double>();
      stats.stddev[c] = j.at("std").at(c).get<double>();
    }
    return stats;
  } catch (const json::exception& e) {
    throw IoError("bad stats file " + path + ": " + e.what());
  }
}

void write_stats_json(const ChannelStats& stats, const std::string& path) {
  json j = {{"mean", {stats.mean[0], stats.mean[1], stats.mean[2]}},
            {"std", {stats.stddev[0], stats.stddev[1], stats.stddev[2]}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write stats file: " + path);
  out << j.dump(2) << "\n";
}

Manifest translate_dataset(const Manifest& input, const ChannelStats& reference,
                           const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec)
    throw IoError("cannot create output directory " + out_dir + ": " +
                  ec.message());
  Manifest out;
  out.set_base_dir(out_dir);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const Image img = read_png(input.image_path(i));
    const Image translated = color_stat_transfer(img, reference);
    const std::string name =
        (fs::path("images") / fs::path(input.image_name(i)).filename())
            .string();
    write_png(translated, (fs::path(out_dir) / name).string());
    ManifestEntry entry;
    entry.image = name;
    entry.boxes = input.boxes(i);
    out.add(std::move(entry));
  }
  out.write((fs::path(out_dir) / "manifest.jsonl").string());
  return out;
}

}  // namespace dadet
