#include "countnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace countnet {

namespace {

int next_header_token(std::istream& in) {
  // skips whitespace and '#' comments per the netpbm spec
  for (;;) {
    int c = in.get();
    if (c == EOF) throw ParseError("unexpected end of netpbm header");
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
      continue;
    }
    if (!std::isspace(c)) return c;
  }
}

std::size_t read_header_uint(std::istream& in) {
  int c = next_header_token(in);
  if (!std::isdigit(c)) throw ParseError("malformed netpbm header");
  std::size_t v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

void write_ppm(const std::string& path, const RgbImage& img) {
  if (img.pixels.size() != img.height * img.width * 3) {
    throw ShapeError("rgb image buffer does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < img.width * 3; ++i) {
      float v = img.pixels[y * img.width * 3 + i];
      v = std::min(1.0f, std::max(0.0f, v));
      row[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char m0 = static_cast<char>(in.get()), m1 = static_cast<char>(in.get());
  if (m0 != 'P' || m1 != '6') throw ParseError("not a P6 pixmap: " + path);
  RgbImage img;
  img.width = read_header_uint(in);
  img.height = read_header_uint(in);
  const std::size_t maxval = read_header_uint(in);
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval) + ": " + path);
  // header ends with exactly one whitespace byte (already consumed by read_header_uint)
  const std::size_t n = img.height * img.width * 3;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw ParseError("truncated pixmap: " + path);
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

void write_pgm_density(const std::string& path, const DensityMap& map) {
  if (map.values.size() != map.height * map.width) {
    throw ShapeError("density buffer does not match dimensions");
  }
  double mx = 0.0;
  for (double v : map.values) mx = std::max(mx, v);
  const double scale = mx > 0.0 ? 65535.0 / mx : 1.0;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", scale);
  out << "P2\n# scale " << buf << "\n" << map.width << " " << map.height << "\n65535\n";
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      const double v = std::max(0.0, map.values[y * map.width + x]);
      const long q = std::lround(v * scale);
      out << std::min(65535l, q) << (x + 1 == map.width ? "\n" : " ");
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

DensityMap read_pgm_density(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open density map: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2") throw ParseError("not a P2 graymap: " + path);
  double scale = 1.0;
  // scan comments for the scale factor
  in.get();
  while (in.peek() == '#') {
    std::string line;
    std::getline(in, line);
    std::istringstream ls(line);
    std::string hash, key;
    ls >> hash >> key;
    if (key == "scale") ls >> scale;
  }
  DensityMap map;
  std::size_t maxval = 0;
  in >> map.width >> map.height >> maxval;
  if (!in || maxval == 0) throw ParseError("malformed graymap header: " + path);
  map.values.resize(map.height * map.width);
  for (auto& v : map.values) {
    long q;
    if (!(in >> q)) throw ParseError("truncated graymap: " + path);
    v = static_cast<double>(q) / scale;
  }
  return map;
}

RgbImage resize_bilinear(const RgbImage& img, std::size_t new_size) {
  if (img.height == new_size && img.width == new_size) return img;
  RgbImage out;
  out.height = out.width = new_size;
  out.pixels.resize(new_size * new_size * 3);
  const double sy = static_cast<double>(img.height) / new_size;
  const double sx = static_cast<double>(img.width) / new_size;
  for (std::size_t oy = 0; oy < new_size; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(fy));
    const double wy = fy - static_cast<double>(y0);
    const std::size_t ya = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0, 0, img.height - 1));
    const std::size_t yb = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0 + 1, 0, img.height - 1));
    for (std::size_t ox = 0; ox < new_size; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(fx));
      const double wx = fx - static_cast<double>(x0);
      const std::size_t xa = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0, 0, img.width - 1));
      const std::size_t xb = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0 + 1, 0, img.width - 1));
      for (std::size_t c = 0; c < 3; ++c) {
        const double p00 = img.pixels[(ya * img.width + xa) * 3 + c];
        const double p01 = img.pixels[(ya * img.width + xb) * 3 + c];
        const double p10 = img.pixels[(yb * img.width + xa) * 3 + c];
        const double p11 = img.pixels[(yb * img.width + xb) * 3 + c];
        out.pixels[(oy * new_size + ox) * 3 + c] = static_cast<float>(
            (1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11));
      }
    }
  }
  return out;
}

}  // namespace countnet
