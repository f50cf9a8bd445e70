#include "repaintlab/io/io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include <openssl/evp.h>
#include <png.h>

#include "repaintlab/error.hpp"

namespace repaintlab::io {

namespace {

using File = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

std::size_t height_of(const nd::NdArray<float>& a) { return a.rank() == 2 ? a.dim(0) : a.dim(1); }
std::size_t width_of(const nd::NdArray<float>& a) { return a.rank() == 2 ? a.dim(1) : a.dim(2); }

void write_gray8(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<png_byte>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<png_byte> read_gray8(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
  auto f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw DataError(path.string() + " is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: out of memory");
  }
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  // normalize everything to 8-bit gray
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  if (png_get_rowbytes(png, info) != w) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": unsupported PNG layout");
  }
  pixels.resize(h * w);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

void check_raster(const nd::NdArray<float>& a, const char* op) {
  const bool ok = a.rank() == 2 || (a.rank() == 3 && a.dim(0) == 1);
  if (!ok) throw ShapeError(op, "rank", "need [H, W] or [1, H, W], got " + nd::shape_str(a.shape()));
}

}  // namespace

void save_png(const std::filesystem::path& path, const nd::NdArray<float>& image) {
  check_raster(image, "save_png");
  nd::require_finite(image, "save_png");
  std::vector<png_byte> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), -1.0, 1.0);
    pixels[i] = static_cast<png_byte>(std::lround((v + 1.0) * 127.5));
  }
  write_gray8(path, height_of(image), width_of(image), pixels);
}

nd::NdArray<float> load_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto pixels = read_gray8(path, h, w);
  auto out = nd::NdArray<float>::uninitialized({1, h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = static_cast<float>(pixels[i] / 127.5 - 1.0);
  return out;
}

nd::NdArray<float> load_png_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  if (files.empty()) throw DataError(dir.string() + ": no PNG images");
  std::sort(files.begin(), files.end());
  const auto first = load_png(files[0]);
  const std::size_t per = first.size();
  auto out = nd::NdArray<float>::uninitialized({files.size(), 1, first.dim(1), first.dim(2)});
  std::copy_n(first.data(), per, out.data());
  for (std::size_t i = 1; i < files.size(); ++i) {
    const auto img = load_png(files[i]);
    if (img.shape() != first.shape())
      throw DataError(files[i].string() + ": size " + nd::shape_str(img.shape()) + " differs from " +
                      nd::shape_str(first.shape()));
    std::copy_n(img.data(), per, out.data() + i * per);
  }
  return out;
}

void save_png_dir(const std::filesystem::path& dir, const nd::NdArray<float>& images, const std::string& prefix) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw ShapeError("save_png_dir", "image", "need [N, 1, H, W], got " + nd::shape_str(images.shape()));
  std::filesystem::create_directories(dir);
  const std::size_t per = images.size() / std::max<std::size_t>(images.dim(0), 1);
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    auto one = nd::NdArray<float>::uninitialized({1, images.dim(2), images.dim(3)});
    std::copy_n(images.data() + i * per, per, one.data());
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    save_png(dir / (prefix + name), one);
  }
}

nd::NdArray<float> load_mask_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto pixels = read_gray8(path, h, w);
  auto out = nd::NdArray<float>::uninitialized({h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] != 0 && pixels[i] != 255)
      throw DataError(path.string() + ": mask pixels must be 0 (hole) or 255 (known), found " +
                      std::to_string(pixels[i]));
    out[i] = pixels[i] == 255 ? 1.0f : 0.0f;
  }
  return out;
}

void save_mask_png(const std::filesystem::path& path, const nd::NdArray<float>& mask) {
  check_raster(mask, "save_mask_png");
  std::vector<png_byte> pixels(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f && mask[i] != 1.0f) throw DataError("save_mask_png: mask is not binary");
    pixels[i] = mask[i] == 1.0f ? 255 : 0;
  }
  write_gray8(path, height_of(mask), width_of(mask), pixels);
}

namespace {

struct Digest {
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  Digest() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  void update(const void* data, std::size_t bytes) {
    if (EVP_DigestUpdate(ctx.get(), data, bytes) != 1) throw Error("sha256: update failed");
  }
  void update_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path.string());
    std::vector<char> buf(1 << 16);
    while (is) {
      is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      update(buf.data(), static_cast<std::size_t>(is.gcount()));
    }
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw Error("sha256: final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t bytes) {
  Digest d;
  d.update(data, bytes);
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  Digest d;
  d.update_file(path);
  return d.hex();
}

std::string sha256_tree(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  Digest d;
  for (const auto& rel : files) {
    const auto name = rel.generic_string();
    d.update(name.data(), name.size() + 1);  // include the terminator as separator
    d.update_file(dir / rel);
  }
  return d.hex();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace repaintlab::io
