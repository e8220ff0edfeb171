#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace speednet {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int y, int x, int c = 0) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  uint8_t& at(int y, int x, int c = 0) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  static Image make(int w, int h, int c, uint8_t fill = 0) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = c;
    im.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return im;
  }
};

// ITU-R 601 luma; output in [0,1].
inline std::vector<double> to_gray01(const Image& im) {
  std::vector<double> g(static_cast<size_t>(im.width) * im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      double v;
      if (im.channels >= 3)
        v = 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
      else
        v = im.at(y, x, 0);
      g[static_cast<size_t>(y) * im.width + x] = v / 255.0;
    }
  return g;
}

// Bilinear resample of a single-channel [0,1] raster; sample points at pixel
// centers (src = (dst + 0.5) * scale - 0.5), edges clamped.
inline std::vector<double> resize_bilinear(const std::vector<double>& src,
                                           int sw, int sh, int dw, int dh) {
  std::vector<double> dst(static_cast<size_t>(dw) * dh);
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * src[static_cast<size_t>(y0) * sw + x0] +
                                   wx * src[static_cast<size_t>(y0) * sw + x1]) +
                       wy * ((1 - wx) * src[static_cast<size_t>(y1) * sw + x0] +
                             wx * src[static_cast<size_t>(y1) * sw + x1]);
      dst[static_cast<size_t>(y) * dw + x] = v;
    }
  }
  return dst;
}

inline std::vector<double> resize_nearest(const std::vector<double>& src, int sw,
                                          int sh, int dw, int dh) {
  std::vector<double> dst(static_cast<size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y) {
    int syi = std::min(static_cast<int>((y + 0.5) * sh / dh), sh - 1);
    for (int x = 0; x < dw; ++x) {
      int sxi = std::min(static_cast<int>((x + 0.5) * sw / dw), sw - 1);
      dst[static_cast<size_t>(y) * dw + x] = src[static_cast<size_t>(syi) * sw + sxi];
    }
  }
  return dst;
}

// ---- PGM / PPM ----

inline void write_pnm(const Image& im, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  if (im.channels == 1)
    f << "P5\n" << im.width << ' ' << im.height << "\n255\n";
  else if (im.channels == 3)
    f << "P6\n" << im.width << ' ' << im.height << "\n255\n";
  else
    throw std::invalid_argument("write_pnm: unsupported channel count");
  f.write(reinterpret_cast<const char*>(im.pixels.data()),
          static_cast<std::streamsize>(im.pixels.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

namespace detail {
inline int pnm_next_int(std::istream& f) {
  // skips whitespace and '#' comments
  for (;;) {
    int c = f.peek();
    if (c == '#') {
      std::string line;
      std::getline(f, line);
    } else if (std::isspace(c)) {
      f.get();
    } else {
      break;
    }
  }
  int v;
  f >> v;
  if (!f) throw std::runtime_error("malformed PNM header");
  return v;
}
}  // namespace detail

inline Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char p, n;
  f.get(p);
  f.get(n);
  if (p != 'P' || (n != '5' && n != '6' && n != '2' && n != '3'))
    throw std::runtime_error("unsupported PNM magic in " + path);
  const bool binary = (n == '5' || n == '6');
  const int channels = (n == '5' || n == '2') ? 1 : 3;
  const int w = detail::pnm_next_int(f);
  const int h = detail::pnm_next_int(f);
  const int maxv = detail::pnm_next_int(f);
  if (maxv <= 0 || maxv > 255) throw std::runtime_error("unsupported PNM maxval");
  Image im = Image::make(w, h, channels);
  if (binary) {
    f.get();  // single whitespace after maxval
    f.read(reinterpret_cast<char*>(im.pixels.data()),
           static_cast<std::streamsize>(im.pixels.size()));
    if (!f) throw std::runtime_error("truncated PNM " + path);
  } else {
    for (auto& px : im.pixels) {
      int v;
      f >> v;
      if (!f) throw std::runtime_error("truncated PNM " + path);
      px = static_cast<uint8_t>(v);
    }
  }
  return im;
}

// ---- PNG via libpng ----

inline void write_png(const Image& im, const std::string& path) {
  if (im.channels != 1 && im.channels != 3)
    throw std::invalid_argument("write_png: unsupported channel count");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.width),
               static_cast<png_uint_32>(im.height), 8,
               im.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(im.height));
  for (int y = 0; y < im.height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
        im.pixels.data() + static_cast<size_t>(y) * im.width * im.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot read " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("unsupported PNG channel count in " + path);
  }
  Image im = Image::make(w, h, c);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        im.pixels.data() + static_cast<size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return im;
}

inline bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Dispatches on extension; only PNG and PPM/PGM are supported.
inline Image read_image(const std::string& path) {
  if (ends_with(path, ".png")) return read_png(path);
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm") || ends_with(path, ".pnm"))
    return read_pnm(path);
  throw std::runtime_error("unsupported image format: " + path);
}

inline void write_image(const Image& im, const std::string& path) {
  if (ends_with(path, ".png")) return write_png(im, path);
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm")) return write_pnm(im, path);
  throw std::runtime_error("unsupported image format: " + path);
}

}  // namespace speednet
