#pragma once

#include <string>
#include <vector>

#include "dadet/tensor.hpp"

namespace dadet {

/// Planar RGB float image, values in [0,1], layout [3][H][W].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h),
        data(static_cast<std::size_t>(3) * w * h, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// 8-bit RGB PNG. Grayscale/palette/alpha inputs are expanded to RGB.
Image read_png(const std::string& path);
void write_png(const Image& img, const std::string& path);

/// Mean filter over the (2r+1)^2 window, normalized by the in-bounds count.
Image box_blur(const Image& img, int radius);

/// Stacks images (all same size) into a [N,3,H,W] tensor.
Tensor images_to_tensor(const std::vector<const Image*>& images);

}  // namespace dadet
