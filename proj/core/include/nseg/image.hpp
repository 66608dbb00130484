#pragma once

#include <filesystem>
#include <vector>

#include "nseg/errors.hpp"

namespace nseg {

/// Single-channel 2-D image with float pixels. Images hold values in [0, 1];
/// masks hold exactly {0, 1}.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> pix;

  Image() = default;
  Image(int h_, int w_, float fill = 0.0f)
      : h(h_), w(w_), pix(static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_), fill) {}

  float& at(int y, int x) { return pix[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)]; }
  const float& at(int y, int x) const {
    return pix[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
  }

  bool operator==(const Image&) const = default;
};

/// Reads a binary 8-bit PGM (P5), scaling pixels to [0, 1].
Image read_pgm(const std::filesystem::path& path);

/// Writes a binary 8-bit PGM (P5), quantizing with round(v * 255).
void write_pgm(const std::filesystem::path& path, const Image& img);

}  // namespace nseg
