#include "penet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "penet/errors.hpp"

namespace penet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void quantize8(Image& image) {
  for (float& v : image.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ParameterError("write_png: only 1 or 3 channels supported");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path, "libpng write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        row[static_cast<std::size_t>(x) * image.channels + c] = to_byte(image.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError(path, "cannot open for reading");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path, "not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path, "libpng init failed");
  }
  Image image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path, "corrupt PNG data");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  image = Image(w, h, c);
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        image.at(x, y, k) = static_cast<float>(row[static_cast<std::size_t>(x) * c + k]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Image tile_images(const std::vector<Image>& images, int cols) {
  if (images.empty()) return {};
  if (cols <= 0) throw ParameterError("tile_images: cols must be positive");
  const int w = images.front().width, h = images.front().height, c = images.front().channels;
  const int n = static_cast<int>(images.size());
  const int rows = (n + cols - 1) / cols;
  Image sheet(cols * (w + 1) - 1, rows * (h + 1) - 1, c);
  for (int i = 0; i < n; ++i) {
    const Image& im = images[i];
    if (im.width != w || im.height != h || im.channels != c)
      throw ParameterError("tile_images: images must share a shape");
    const int ox = (i % cols) * (w + 1), oy = (i / cols) * (h + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) sheet.at(ox + x, oy + y, k) = im.at(x, y, k);
  }
  return sheet;
}

}  // namespace penet
