#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "toonpose/errors.hpp"
#include "toonpose/hash.hpp"

namespace toonpose {

/// 8-bit interleaved raster with 1, 3 or 4 channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 4;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool has_alpha() const { return channels == 4; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Hash over dimensions and raw pixel bytes.
inline std::uint64_t pixel_hash(const Image& img) {
  Fnv1a h;
  h.update(static_cast<std::uint64_t>(img.width));
  h.update(static_cast<std::uint64_t>(img.height));
  h.update(static_cast<std::uint64_t>(img.channels));
  h.update(std::span<const std::uint8_t>(img.pixels));
  return h.digest();
}

namespace detail {
inline png_uint_32 png_format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw UsageError("unsupported channel count " + std::to_string(channels));
  }
}
}  // namespace detail

// Fast deflate setting: datasets write thousands of small frames.
inline void write_png(const std::filesystem::path& path, const Image& img, int compression_level = 1) {
  const int color_type = img.channels == 4 ? PNG_COLOR_TYPE_RGBA
                         : img.channels == 3 ? PNG_COLOR_TYPE_RGB
                                             : (detail::png_format_for(img.channels), PNG_COLOR_TYPE_GRAY);
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write PNG " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("cannot write PNG " + path.string());
  }
  png_init_io(png, fp);
  png_set_compression_level(png, compression_level);
  png_set_filter(png, 0, PNG_FILTER_SUB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + stride * static_cast<std::size_t>(y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("cannot write PNG " + path.string());
}

/// Reads any PNG, converted to RGBA (or RGB/gray when `channels` says so).
inline Image read_png(const std::filesystem::path& path, int channels = 4) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = detail::png_format_for(channels);
  Image out(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

}  // namespace toonpose
