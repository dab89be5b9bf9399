#include "textseg/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "textseg/error.hpp"
#include "textseg/phantom.hpp"

namespace textseg {

namespace {

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

struct ReadState {
  const std::string* bytes;
  std::size_t pos;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->bytes->size()) png_error(png, "truncated png");
  std::memcpy(data, st->bytes->data() + st->pos, len);
  st->pos += len;
}

void warn_cb(png_structp, png_const_charp) {}

// libpng reports errors by longjmp back to png_jmpbuf; the jumps stay within
// these two functions, which hold no objects needing destruction past setjmp.
bool write_rows(png_structp png, png_infop info, const Image& img) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * static_cast<std::size_t>(img.channels);
  for (std::size_t r = 0; r < img.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * stride));
  }
  png_write_end(png, nullptr);
  return true;
}

bool read_header(png_structp png, png_infop info, png_uint_32& w, png_uint_32& h, int& type, int& depth) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  type = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  return true;
}

bool read_rows(png_structp png, std::uint8_t* data, std::size_t stride, std::size_t rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  for (std::size_t r = 0; r < rows; ++r) png_read_row(png, data + r * stride, nullptr);
  png_read_end(png, nullptr);
  return true;
}

}  // namespace

std::string encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 4) throw Error(ErrorCode::ShapeMismatch, "png needs 1 or 4 channels");
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height * img.channels) {
    throw Error(ErrorCode::ShapeMismatch, "png pixel buffer size");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warn_cb);
  if (!png) throw Error(ErrorCode::Io, "png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  std::string out;
  png_set_write_fn(png, &out, write_cb, nullptr);
  const bool ok = info && write_rows(png, info, img);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw Error(ErrorCode::Io, "png: encoding failed");
  return out;
}

Image decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw Error(ErrorCode::Io, "not a png");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warn_cb);
  if (!png) throw Error(ErrorCode::Io, "png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  ReadState st{&bytes, 0};
  png_set_read_fn(png, &st, read_cb);
  png_uint_32 w = 0, h = 0;
  int type = 0, depth = 0;
  Image img;
  bool ok = info && read_header(png, info, w, h, type, depth);
  if (ok && (depth != 8 || (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_RGBA))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::Io, "only 8-bit gray or RGBA png is supported");
  }
  if (ok) {
    img.width = w;
    img.height = h;
    img.channels = type == PNG_COLOR_TYPE_GRAY ? 1 : 4;
    img.pixels.resize(img.width * img.height * static_cast<std::size_t>(img.channels));
    ok = read_rows(png, img.pixels.data(), img.width * static_cast<std::size_t>(img.channels), img.height);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw Error(ErrorCode::Io, "png: decoding failed");
  return img;
}

std::array<std::uint8_t, 4> palette_color(int class_id) {
  static constexpr std::array<std::uint32_t, 13> kColors{
      0xE6194B,  // spleen
      0x3CB44B,  // right kidney
      0xFFE119,  // left kidney
      0x4363D8,  // gallbladder
      0xF58231,  // esophagus
      0x911EB4,  // liver
      0x46F0F0,  // stomach
      0xF032E6,  // aorta
      0xBCF60C,  // inferior vena cava
      0xFABEBE,  // portal and splenic veins
      0x008080,  // pancreas
      0xE6BEFF,  // right adrenal gland
      0x9A6324,  // left adrenal gland
  };
  if (class_id == 0) return {0, 0, 0, 0};
  if (class_id < 1 || class_id > 13) return {128, 128, 128, 255};
  const auto c = kColors[static_cast<std::size_t>(class_id - 1)];
  return {static_cast<std::uint8_t>(c >> 16), static_cast<std::uint8_t>((c >> 8) & 0xFF),
          static_cast<std::uint8_t>(c & 0xFF), 255};
}

Image gray_slice_image(const SliceImage& slice) {
  Image img{slice.width, slice.height, 1, std::vector<std::uint8_t>(slice.pixels.size())};
  for (std::size_t i = 0; i < slice.pixels.size(); ++i) {
    const double n = (std::clamp(slice.pixels[i], kHuLow, kHuHigh) - kHuLow) / (kHuHigh - kHuLow);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(n * 255.0));
  }
  return img;
}

Image palette_slice_image(const SliceImage& slice) {
  Image img{slice.width, slice.height, 4, std::vector<std::uint8_t>(slice.pixels.size() * 4)};
  for (std::size_t i = 0; i < slice.pixels.size(); ++i) {
    const auto c = palette_color(static_cast<int>(slice.pixels[i]));
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 4));
  }
  return img;
}

}  // namespace textseg
