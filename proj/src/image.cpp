#include "motarfuse/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "motarfuse/error.hpp"

namespace motarfuse {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the whitespace/comment separated header fields of a netpbm file.
std::size_t read_header_int(std::istream& in, const std::filesystem::path& path) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw ParseError("malformed netpbm header in " + path.string());
  return v;
}

}  // namespace

ImageFrame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') throw ParseError("not a binary PPM (P6): " + path.string());
  const std::size_t w = read_header_int(in, path);
  const std::size_t h = read_header_int(in, path);
  const std::size_t maxval = read_header_int(in, path);
  if (maxval != 255 || w == 0 || h == 0) throw ParseError("unsupported PPM geometry in " + path.string());
  in.get();
  std::vector<std::uint8_t> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ParseError("truncated PPM " + path.string());
  ImageFrame f(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) f.at(c, y, x) = raw[(y * w + x) * 3 + c] / 255.0;
  return f;
}

void write_ppm(const std::filesystem::path& path, const ImageFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  std::vector<std::uint8_t> raw(3 * frame.width * frame.height);
  for (std::size_t y = 0; y < frame.height; ++y)
    for (std::size_t x = 0; x < frame.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) raw[(y * frame.width + x) * 3 + c] = to_byte(frame.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values) {
  if (values.size() != height * width) throw ShapeError("write_pgm: value count does not match geometry");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<std::uint8_t> raw(values.size());
  std::transform(values.begin(), values.end(), raw.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw ParseError("not a binary PGM (P5): " + path.string());
  width = read_header_int(in, path);
  height = read_header_int(in, path);
  if (read_header_int(in, path) != 255) throw ParseError("unsupported PGM maxval in " + path.string());
  in.get();
  std::vector<std::uint8_t> raw(width * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ParseError("truncated PGM " + path.string());
  return raw;
}

ImageFrame quantize_8bit(const ImageFrame& frame) {
  ImageFrame out = frame;
  for (auto& v : out.pixels) v = to_byte(v) / 255.0;
  return out;
}

ImageFrame flip_horizontal(const ImageFrame& frame) {
  ImageFrame out(frame.height, frame.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < frame.height; ++y)
      for (std::size_t x = 0; x < frame.width; ++x) out.at(c, y, x) = frame.at(c, y, frame.width - 1 - x);
  return out;
}

}  // namespace motarfuse
