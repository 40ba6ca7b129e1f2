#include "tfgrasp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tfgrasp/errors.hpp"

namespace tfgrasp {
namespace {

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i) & 0xff));
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path);
}

std::vector<MapArray> read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  const Index h = image.height, w = image.width;
  std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path + ": " + image.message);
  }
  std::vector<MapArray> channels(3, MapArray(h, w));
  for (Index i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) channels[c].data()[i] = pixels[i * 3 + c] / 255.0f;
  }
  return channels;
}

void write_png(const std::string& path, const std::vector<MapArray>& rgb) {
  if (rgb.size() != 3) throw ShapeError("write_png needs three channels");
  const Index h = rgb[0].rows(), w = rgb[0].cols();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h * w * 3));
  for (Index i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(rgb[c].data()[i], 0.0f, 1.0f);
      pixels[i * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + image.message);
  }
}

MapArray read_f32raw(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw FormatError(path + ": truncated f32raw header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const Index h = read_u32le(p), w = read_u32le(p + 4);
  if (h <= 0 || w <= 0 || bytes.size() != static_cast<std::size_t>(8 + h * w * 4)) {
    throw FormatError(path + ": f32raw size does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
  MapArray out(h, w);
  for (Index i = 0; i < h * w; ++i) {
    const std::uint32_t bits = read_u32le(p + 8 + 4 * i);
    std::memcpy(out.data() + i, &bits, 4);
  }
  return out;
}

void write_f32raw(const std::string& path, const MapArray& raster) {
  std::string out;
  out.reserve(static_cast<std::size_t>(8 + raster.size() * 4));
  append_u32le(out, static_cast<std::uint32_t>(raster.rows()));
  append_u32le(out, static_cast<std::uint32_t>(raster.cols()));
  for (Index i = 0; i < raster.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, raster.data() + i, 4);
    append_u32le(out, bits);
  }
  write_file(path, out);
}

MapArray parse_depth_text(const std::string& text) {
  std::vector<float> values;
  Index rows = 0, cols = -1;
  std::istringstream lines(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream tokens(line);
    std::string token;
    Index n = 0;
    while (tokens >> token) {
      char* end = nullptr;
      const float v = std::strtof(token.c_str(), &end);
      if (end != token.c_str() + token.size()) {
        throw FormatError("depth text line " + std::to_string(line_no) + ": bad value '" + token + "'");
      }
      values.push_back(v);
      ++n;
    }
    if (n == 0) continue;
    if (cols >= 0 && n != cols) {
      throw FormatError("depth text line " + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                        " values, got " + std::to_string(n));
    }
    cols = n;
    ++rows;
  }
  if (rows == 0) throw FormatError("depth text has no values");
  MapArray out(rows, cols);
  std::copy(values.begin(), values.end(), out.data());
  return out;
}

std::string encode_pgm(const MapArray& map) {
  std::string out = "P5 " + std::to_string(map.cols()) + " " + std::to_string(map.rows()) + " 255\n";
  const float lo = map.minCoeff(), hi = map.maxCoeff();
  const double range = static_cast<double>(hi) - lo;
  for (Index i = 0; i < map.size(); ++i) {
    const double v = range > 0 ? (map.data()[i] - static_cast<double>(lo)) / range * 255.0 : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)))));
  }
  return out;
}

void write_pgm(const std::string& path, const MapArray& map) { write_file(path, encode_pgm(map)); }

MapArray read_pgm(const std::string& path) {
  const std::string bytes = read_file(path);
  std::istringstream header(bytes);
  std::string magic;
  Index w = 0, h = 0, maxval = 0;
  header >> magic >> w >> h >> maxval;
  if (!header || magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw FormatError(path + ": not an 8-bit P5 PGM");
  const auto offset = static_cast<std::size_t>(header.tellg()) + 1;
  if (bytes.size() != offset + static_cast<std::size_t>(w * h)) throw FormatError(path + ": PGM payload size mismatch");
  MapArray out(h, w);
  for (Index i = 0; i < w * h; ++i) out.data()[i] = static_cast<unsigned char>(bytes[offset + i]);
  return out;
}

}  // namespace tfgrasp
