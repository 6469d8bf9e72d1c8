#pragma once

#include <array>
#include <string>

#include "dadet/image.hpp"
#include "dadet/manifest.hpp"

namespace dadet {

/// Per-channel pixel statistics pooled over a whole domain sample.
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{0.0, 0.0, 0.0};
};

ChannelStats compute_domain_stats(const Manifest& manifest);

/// Moment-matching translation stand-in: per channel,
///   out = (pixel - mu_in) / sigma_in * sigma_ref + mu_ref, clamped to [0,1],
/// where mu_in/sigma_in are the image's own statistics. A zero-variance input
/// channel is passed through with a mean shift only. Content (and therefore
/// annotations) is untouched.
Image color_stat_transfer(const Image& image, const ChannelStats& reference);

/// Stats file: {"mean":[r,g,b],"std":[r,g,b]}.
ChannelStats read_stats_json(const std::string& path);
void write_stats_json(const ChannelStats& stats, const std::string& path);

/// Translates every image of a manifest into out_dir (same file names,
/// annotations copied verbatim) and returns the new manifest. With
/// strip_boxes the output manifest carries no annotations at all, which keeps
/// unlabeled-domain streams label-free end to end.
Manifest translate_dataset(const Manifest& input, const ChannelStats& reference,
                           const std::string& out_dir,
                           bool strip_boxes = false);

}  // namespace dadet
