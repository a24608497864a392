#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "i2i/tensor.hpp"

namespace i2i {

/// 8-bit value -> [-1, 1] via v / 127.5 - 1.
inline double pixel_to_unit(std::uint8_t v) { return v / 127.5 - 1.0; }
/// Inverse mapping with round-half-up; out-of-range values clamp to [0, 255].
std::uint8_t unit_to_pixel(double v);

/// Reads an 8-bit RGB square PNG into a [1 x 3 x s x s] tensor.
/// Throws IoError if the file cannot be opened and FormatError for anything
/// that is not an 8-bit RGB square image.
template <typename T>
Tensor<T> load_image(const std::filesystem::path& path);

/// Writes a [1 x 3 x h x w] (or [3 x h x w]) tensor as an 8-bit RGB PNG.
template <typename T>
void save_image(const Tensor<T>& image, const std::filesystem::path& path);

/// PNG files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Every image of list_images(dir), in that order.
template <typename T>
std::vector<Tensor<T>> load_images(const std::filesystem::path& dir);

/// Concatenates [1 x 3 x s x s] images left to right into one [1 x 3 x s x (n*s)] image.
template <typename T>
Tensor<T> horizontal_strip(const std::vector<Tensor<T>>& images);

}  // namespace i2i
