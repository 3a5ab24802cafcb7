#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace grimgep {

// Small RGB raster with channel values in [0, 1]. Row-major, interleaved RGB.
// This is the universal currency for observations and goals.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // height * width * 3

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  static Image filled(int h, int w, float r, float g, float b) {
    Image img(h, w);
    for (std::size_t i = 0; i + 2 < img.data.size(); i += 3) {
      img.data[i] = r;
      img.data[i + 1] = g;
      img.data[i + 2] = b;
    }
    return img;
  }

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  std::size_t size() const { return data.size(); }

  bool operator==(const Image& other) const = default;
};

// 2x average-pool then flatten to doubles. This is the feature vector the
// latent models consume; for the default 24x24 observation it is 12*12*3 = 432
// dimensions.
inline std::vector<double> downsample2_flatten(const Image& img) {
  if (img.height % 2 != 0 || img.width % 2 != 0) {
    throw std::invalid_argument("downsample2_flatten: image sides must be even");
  }
  const int hh = img.height / 2;
  const int ww = img.width / 2;
  std::vector<double> out(static_cast<std::size_t>(hh) * ww * 3);
  for (int y = 0; y < hh; ++y) {
    for (int x = 0; x < ww; ++x) {
      for (int c = 0; c < 3; ++c) {
        double s = static_cast<double>(img.at(2 * y, 2 * x, c)) +
                   static_cast<double>(img.at(2 * y, 2 * x + 1, c)) +
                   static_cast<double>(img.at(2 * y + 1, 2 * x, c)) +
                   static_cast<double>(img.at(2 * y + 1, 2 * x + 1, c));
        out[(static_cast<std::size_t>(y) * ww + x) * 3 + c] = s * 0.25;
      }
    }
  }
  return out;
}

}  // namespace grimgep
