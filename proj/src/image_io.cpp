#include "i2i/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "i2i/errors.hpp"

namespace fs = std::filesystem;

namespace i2i {

std::uint8_t unit_to_pixel(double v) {
  const double scaled = std::floor((v + 1.0) * 127.5 + 0.5);
  if (!(scaled >= 0.0)) return 0;  // also catches NaN
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

template <typename T>
Tensor<T> load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("cannot open image " + path.string() + ": no such file");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string reason = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode " + path.string() + ": " + reason);
  }
  // The simplified reader reports the stored layout; only plain 8-bit RGB is accepted.
  if (image.format != PNG_FORMAT_RGB) {
    png_image_free(&image);
    throw FormatError(path.string() + ": expected an 8-bit RGB PNG without alpha or palette");
  }
  if (image.width != image.height || image.width == 0) {
    png_image_free(&image);
    throw FormatError(path.string() + ": expected a square image, got " + std::to_string(image.width) + "x" +
                      std::to_string(image.height));
  }
  const std::size_t s = image.width;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string reason = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode " + path.string() + ": " + reason);
  }
  std::vector<T> values(3 * s * s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        values[(c * s + y) * s + x] = static_cast<T>(pixel_to_unit(pixels[(y * s + x) * 3 + c]));
  return Tensor<T>(Shape{1, 3, s, s}, std::move(values));
}

template <typename T>
void save_image(const Tensor<T>& image, const fs::path& path) {
  const Shape& shape = image.shape();
  const bool batched = shape.size() == 4;
  if (!((batched && shape[0] == 1 && shape[1] == 3) || (shape.size() == 3 && shape[0] == 3))) {
    throw DimensionError("save_image expects a 1x3xHxW or 3xHxW tensor, got " + shape_str(shape));
  }
  const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
  std::vector<std::uint8_t> pixels(3 * h * w);
  const auto v = image.values();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        pixels[(y * w + x) * 3 + c] = unit_to_pixel(static_cast<double>(v[(c * h + y) * w + x]));

  png_image out;
  std::memset(&out, 0, sizeof out);
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(w);
  out.height = static_cast<png_uint_32>(h);
  out.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (!png_image_write_to_file(&out, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string reason = out.message;
    png_image_free(&out);
    throw IoError("cannot write " + path.string() + ": " + reason);
  }
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

template <typename T>
std::vector<Tensor<T>> load_images(const fs::path& dir) {
  std::vector<Tensor<T>> out;
  for (const auto& file : list_images(dir)) out.push_back(load_image<T>(file));
  return out;
}

template <typename T>
Tensor<T> horizontal_strip(const std::vector<Tensor<T>>& images) {
  if (images.empty()) throw ContractError("horizontal_strip needs at least one image");
  const Shape first = images.front().shape();
  if (first.size() != 4 || first[0] != 1) throw DimensionError("horizontal_strip expects 1xCxHxW images");
  const std::size_t c = first[1], h = first[2], w = first[3], n = images.size();
  std::vector<T> out(c * h * w * n);
  for (std::size_t k = 0; k < n; ++k) {
    if (images[k].shape() != first) throw DimensionError("horizontal_strip: images differ in shape");
    const auto v = images[k].values();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w), w,
                    out.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w * n + k * w));
  }
  return Tensor<T>(Shape{1, c, h, w * n}, std::move(out));
}

template Tensor<float> load_image(const fs::path&);
template Tensor<double> load_image(const fs::path&);
template void save_image(const Tensor<float>&, const fs::path&);
template void save_image(const Tensor<double>&, const fs::path&);
template std::vector<Tensor<float>> load_images(const fs::path&);
template std::vector<Tensor<double>> load_images(const fs::path&);
template Tensor<float> horizontal_strip(const std::vector<Tensor<float>>&);
template Tensor<double> horizontal_strip(const std::vector<Tensor<double>>&);

}  // namespace i2i
