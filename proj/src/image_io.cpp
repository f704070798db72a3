#include "outpaint/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "outpaint/errors.hpp"

namespace outpaint {

namespace {

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void read_fn(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->bytes->data() + cur->offset, len);
  cur->offset += len;
}

void write_fn(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(in), len);
}

void flush_fn(png_structp) {}

void error_fn(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void warning_fn(png_structp, png_const_charp) {}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGBA;
  }
  throw IoError("unsupported channel count " + std::to_string(channels));
}

}  // namespace

std::string encode_png(const Raster& r) {
  const int type = color_type_for(r.channels);
  if (r.width <= 0 || r.height <= 0 ||
      r.data.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw ShapeError("raster size does not match its dimensions");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  std::string out;
  try {
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, r.width, r.height, 8, type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < r.height; ++y)
      png_write_row(png, const_cast<png_bytep>(r.data.data() + y * r.width * r.channels));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Raster decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    throw IoError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  Raster r;
  try {
    png_set_read_fn(png, &cur, read_fn);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    r.width = png_get_image_width(png, info);
    r.height = png_get_image_height(png, info);
    r.channels = png_get_channels(png, info);
    r.data.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
    std::vector<png_bytep> rows(r.height);
    for (int y = 0; y < r.height; ++y) rows[y] = r.data.data() + y * r.width * r.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Raster read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

void write_png(const std::filesystem::path& path, const Raster& raster) {
  write_file(path, encode_png(raster));
}

Raster to_raster(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3, H, W], got " + shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  Raster r{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(image[(c * h + y) * w + x], -1.0, 1.0);
        r.data[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
      }
  return r;
}

Tensor to_tensor(const Raster& r) {
  Tensor t({3, r.height, r.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) {
        const int src = r.channels >= 3 ? c : 0;
        t[(c * r.height + y) * r.width + x] = r.at(y, x, src) / 127.5 - 1.0;
      }
  return t;
}

Tensor read_image(const std::filesystem::path& path) { return to_tensor(read_png(path)); }

void write_image(const std::filesystem::path& path, const Tensor& image) {
  write_png(path, to_raster(image));
}

}  // namespace outpaint
