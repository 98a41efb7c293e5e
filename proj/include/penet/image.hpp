#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace penet {

/// Dense float image, interleaved HWC, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const noexcept { return pixels.empty(); }
  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) noexcept { return pixels[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const noexcept { return pixels[index(x, y, c)]; }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width && y < height;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Round every value to the nearest multiple of 1/255 (PNG-exact).
void quantize8(Image& image);

// 8-bit PNG with 1 (gray) or 3 (RGB) channels. Throws IoError.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Tile equally sized images into a rows x cols sheet with a 1 px black gutter.
Image tile_images(const std::vector<Image>& images, int cols);

}  // namespace penet
