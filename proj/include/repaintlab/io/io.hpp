#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::io {

/// 8-bit grayscale PNG <-> [-1, 1] raster. Writing maps v to round((v + 1) * 127.5);
/// reading maps byte b to b / 127.5 - 1. Arrays are [H, W] or [1, H, W].
void save_png(const std::filesystem::path& path, const nd::NdArray<float>& image);
/// Returns [1, H, W].
nd::NdArray<float> load_png(const std::filesystem::path& path);

/// Every *.png directly inside `dir`, in sorted name order, stacked to [N, 1, H, W].
/// All images must share one size; an empty directory is a DataError.
nd::NdArray<float> load_png_dir(const std::filesystem::path& dir);
/// Writes images [N, 1, H, W] as <dir>/<prefix><index, 5 digits>.png.
void save_png_dir(const std::filesystem::path& dir, const nd::NdArray<float>& images, const std::string& prefix = "");

/// Mask PNG: 255 = known, 0 = hole. Anything else is rejected. Returns [H, W] of 0/1.
nd::NdArray<float> load_mask_png(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const nd::NdArray<float>& mask);

std::string sha256_hex(const void* data, std::size_t bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Hash over every regular file below `dir`, in sorted path order (relative path + content).
std::string sha256_tree(const std::filesystem::path& dir);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline; parent directories are created.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace repaintlab::io
