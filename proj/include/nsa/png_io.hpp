#pragma once

#include <png.h>

#include <cstring>
#include <string>
#include <vector>

#include "nsa/errors.hpp"
#include "nsa/style_field.hpp"

namespace nsa {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Reads any PNG libpng understands, converted to 8-bit RGB.
inline RgbImage load_png_rgb(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path + "': " + message);
  }
  return out;
}

inline void save_png_rgb(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw InvalidArgument("RGB buffer does not match the image size");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path + "': " + image.message);
}

/// Loads a normal-capture image from a PNG file.
inline NormalCaptureImage load_normcap(const std::string& path) {
  RgbImage img = load_png_rgb(path);
  return decode_normcap(img.width, img.height, std::move(img.rgb));
}

}  // namespace nsa
