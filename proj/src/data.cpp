#include "countnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace countnet {

namespace {

struct Blob {
  double cx, cy, r;
};

// overlap fraction > 50% means centers closer than half the radius sum
bool placement_ok(const std::vector<Blob>& placed, double cx, double cy, double r) {
  for (const Blob& b : placed) {
    const double dx = cx - b.cx, dy = cy - b.cy;
    const double min_dist = 0.5 * (r + b.r);
    if (dx * dx + dy * dy < min_dist * min_dist) return false;
  }
  return true;
}

void paint_disk(AnnotatedImage& img, double cx, double cy, double r, const float rgb[3]) {
  const auto size = static_cast<std::ptrdiff_t>(img.width);
  const auto y_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cy - r - 1)));
  const auto y_hi = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(cy + r + 1)));
  const auto x_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cx - r - 1)));
  const auto x_hi = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(cx + r + 1)));
  for (std::ptrdiff_t y = y_lo; y <= y_hi; ++y) {
    for (std::ptrdiff_t x = x_lo; x <= x_hi; ++x) {
      const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
      const double cov = std::clamp(r + 0.5 - d, 0.0, 1.0);
      if (cov <= 0) continue;
      float* px = &img.pixels[(static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3];
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<float>(px[c] * (1.0 - cov) + rgb[c] * cov);
      }
    }
  }
}

void paint_square(AnnotatedImage& img, double cx, double cy, double half, const float rgb[3]) {
  const auto size = static_cast<std::ptrdiff_t>(img.width);
  const auto y_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cy - half)));
  const auto y_hi = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(cy + half)));
  const auto x_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cx - half)));
  const auto x_hi = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(cx + half)));
  for (std::ptrdiff_t y = y_lo; y <= y_hi; ++y) {
    for (std::ptrdiff_t x = x_lo; x <= x_hi; ++x) {
      const double covx = std::clamp(half + 0.5 - std::abs(x - cx), 0.0, 1.0);
      const double covy = std::clamp(half + 0.5 - std::abs(y - cy), 0.0, 1.0);
      const double cov = covx * covy;
      if (cov <= 0) continue;
      float* px = &img.pixels[(static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3];
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<float>(px[c] * (1.0 - cov) + rgb[c] * cov);
      }
    }
  }
}

std::string image_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05zu.ppm", index);
  return buf;
}

}  // namespace

AnnotatedImage synth_image(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, index));
  const std::size_t s = spec.image_size;

  AnnotatedImage img;
  img.id = image_file_name(index);
  img.height = img.width = s;
  img.pixels.assign(s * s * 3, 0.35f);

  const auto n_targets = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.count_min),
                      static_cast<std::int64_t>(spec.count_max)));
  const auto n_distract = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.distractor_min),
                      static_cast<std::int64_t>(spec.distractor_max)));

  std::vector<Blob> placed;
  auto place = [&](double r) -> Blob {
    const double margin = r + 0.5;
    for (int attempt = 0; attempt < 500; ++attempt) {
      const double cx = rng.uniform(margin, static_cast<double>(s) - 1.0 - margin);
      const double cy = rng.uniform(margin, static_cast<double>(s) - 1.0 - margin);
      if (placement_ok(placed, cx, cy, r)) {
        placed.push_back(Blob{cx, cy, r});
        return placed.back();
      }
    }
    throw ValueError("cannot place " + std::to_string(n_targets + n_distract) +
                     " non-overlapping blobs in a " + std::to_string(s) + "px image");
  };

  // countable objects: warm (red family) antialiased disks
  for (std::size_t i = 0; i < n_targets; ++i) {
    const double r = rng.uniform(spec.radius_min, spec.radius_max);
    const Blob b = place(r);
    float rgb[3] = {static_cast<float>(rng.uniform(0.70, 0.95)),
                    static_cast<float>(rng.uniform(0.05, 0.25)),
                    static_cast<float>(rng.uniform(0.05, 0.25))};
    paint_disk(img, b.cx, b.cy, b.r, rgb);
    img.points.push_back(Point{b.cx, b.cy});
  }
  // distractors: cool (blue/green family) squares, unannotated
  for (std::size_t i = 0; i < n_distract; ++i) {
    const double r = rng.uniform(spec.radius_min, spec.radius_max);
    const Blob b = place(r);
    float rgb[3] = {static_cast<float>(rng.uniform(0.05, 0.25)),
                    static_cast<float>(rng.uniform(0.30, 0.70)),
                    static_cast<float>(rng.uniform(0.55, 0.95))};
    paint_square(img, b.cx, b.cy, b.r, rgb);
  }
  if (spec.background_noise > 0) {
    for (std::size_t p = 0; p < s * s; ++p) {
      const auto noise = static_cast<float>(rng.normal() * spec.background_noise);
      for (int c = 0; c < 3; ++c) {
        float& v = img.pixels[p * 3 + c];
        v = std::clamp(v + noise, 0.0f, 1.0f);
      }
    }
  }
  return img;
}

std::vector<AnnotatedImage> synth_generate(const SynthSpec& spec, std::size_t n) {
  spec.validate();
  std::vector<AnnotatedImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_image(spec, i));
  return out;
}

DensityMap density_target(const std::vector<Point>& points, std::size_t height, std::size_t width,
                          double sigma) {
  if (sigma <= 0) throw ValueError("density_target: sigma must be positive");
  DensityMap map;
  map.height = height;
  map.width = width;
  map.values.assign(height * width, 0.0);
  const double radius = 4.0 * sigma;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const Point& p : points) {
    const auto y_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(p.y - radius)));
    const auto y_hi = std::min<std::ptrdiff_t>(height - 1, static_cast<std::ptrdiff_t>(std::floor(p.y + radius)));
    const auto x_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(p.x - radius)));
    const auto x_hi = std::min<std::ptrdiff_t>(width - 1, static_cast<std::ptrdiff_t>(std::floor(p.x + radius)));
    double mass = 0.0;
    for (std::ptrdiff_t y = y_lo; y <= y_hi; ++y)
      for (std::ptrdiff_t x = x_lo; x <= x_hi; ++x)
        mass += std::exp(-((x - p.x) * (x - p.x) + (y - p.y) * (y - p.y)) * inv2s2);
    if (mass <= 0) continue;  // point outside the grid support
    const double inv_mass = 1.0 / mass;
    for (std::ptrdiff_t y = y_lo; y <= y_hi; ++y)
      for (std::ptrdiff_t x = x_lo; x <= x_hi; ++x)
        map.values[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] +=
            std::exp(-((x - p.x) * (x - p.x) + (y - p.y) * (y - p.y)) * inv2s2) * inv_mass;
  }
  return map;
}

AnnotatedImage augment(const AnnotatedImage& img, const AugmentOps& ops) {
  AnnotatedImage out = img;
  const std::size_t w = out.width, h = out.height;
  if (ops.hflip) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w / 2; ++x)
        for (int c = 0; c < 3; ++c)
          std::swap(out.pixels[(y * w + x) * 3 + c], out.pixels[(y * w + (w - 1 - x)) * 3 + c]);
    for (Point& p : out.points) p.x = static_cast<double>(w - 1) - p.x;
  }
  if (ops.vflip) {
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          std::swap(out.pixels[(y * w + x) * 3 + c], out.pixels[((h - 1 - y) * w + x) * 3 + c]);
    for (Point& p : out.points) p.y = static_cast<double>(h - 1) - p.y;
  }
  if (ops.crop) {
    const CropRect& r = *ops.crop;
    if (r.width == 0 || r.height == 0) throw ValueError("degenerate crop (zero area)");
    if (r.x0 + r.width > w || r.y0 + r.height > h) throw ValueError("crop outside image bounds");
    AnnotatedImage cropped;
    cropped.id = out.id;
    cropped.height = r.height;
    cropped.width = r.width;
    cropped.pixels.resize(r.height * r.width * 3);
    for (std::size_t y = 0; y < r.height; ++y) {
      std::copy_n(&out.pixels[((r.y0 + y) * w + r.x0) * 3], r.width * 3,
                  &cropped.pixels[y * r.width * 3]);
    }
    for (const Point& p : out.points) {
      const double nx = p.x - static_cast<double>(r.x0);
      const double ny = p.y - static_cast<double>(r.y0);
      if (nx >= 0 && ny >= 0 && nx <= static_cast<double>(r.width - 1) &&
          ny <= static_cast<double>(r.height - 1)) {
        cropped.points.push_back(Point{nx, ny});
      }
    }
    return cropped;
  }
  return out;
}

AnnotatedImage augment_random(const AnnotatedImage& img, bool allow_hflip, bool allow_vflip,
                              bool allow_crop, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xA46Dull));
  AugmentOps ops;
  ops.hflip = allow_hflip && rng.uniform() < 0.5;
  ops.vflip = allow_vflip && rng.uniform() < 0.5;
  if (allow_crop) {
    const std::size_t min_w = std::max<std::size_t>(1, img.width / 2);
    const std::size_t min_h = std::max<std::size_t>(1, img.height / 2);
    const std::size_t w = min_w + rng.uniform_index(img.width - min_w + 1);
    const std::size_t h = min_h + rng.uniform_index(img.height - min_h + 1);
    ops.crop = CropRect{rng.uniform_index(img.width - w + 1), rng.uniform_index(img.height - h + 1),
                        w, h};
  }
  return augment(img, ops);
}

std::vector<AnnotatedImage> ingest_annotations(const std::string& image_dir,
                                               const std::string& annotation_file,
                                               std::size_t resize_to) {
  std::ifstream in(annotation_file);
  if (!in) throw IoError("cannot open annotation file: " + annotation_file);
  std::vector<AnnotatedImage> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto loc = annotation_file + ":" + std::to_string(line_no);
    std::string trimmed = line;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto semi = trimmed.find(';');
    if (semi == std::string::npos) {
      throw ParseError(loc + ": expected '<path>; (x,y) ...'");
    }
    std::string rel = trimmed.substr(0, semi);
    rel.erase(rel.find_last_not_of(" \t") + 1);

    AnnotatedImage rec;
    rec.id = rel;
    const std::string full = (std::filesystem::path(image_dir) / rel).string();
    if (!std::filesystem::exists(full)) {
      throw IoError(loc + ": missing image file " + full);
    }
    RgbImage img = read_ppm(full);

    std::istringstream ps(trimmed.substr(semi + 1));
    char open, comma, close;
    double x, y;
    while (ps >> open) {
      if (open != '(' || !(ps >> x >> comma >> y >> close) || comma != ',' || close != ')') {
        throw ParseError(loc + ": malformed point in record " + rel);
      }
      if (x < 0 || y < 0 || x > static_cast<double>(img.width - 1) ||
          y > static_cast<double>(img.height - 1)) {
        throw ValueError(loc + ": point (" + std::to_string(x) + "," + std::to_string(y) +
                         ") outside image bounds in record " + rel);
      }
      rec.points.push_back(Point{x, y});
    }

    if (resize_to != 0 && (img.height != resize_to || img.width != resize_to)) {
      const double fy = static_cast<double>(resize_to) / static_cast<double>(img.height);
      const double fx = static_cast<double>(resize_to) / static_cast<double>(img.width);
      img = resize_bilinear(img, resize_to);
      for (Point& p : rec.points) {
        p.x = std::clamp((p.x + 0.5) * fx - 0.5, 0.0, static_cast<double>(resize_to - 1));
        p.y = std::clamp((p.y + 0.5) * fy - 0.5, 0.0, static_cast<double>(resize_to - 1));
      }
    }
    rec.height = img.height;
    rec.width = img.width;
    rec.pixels = std::move(img.pixels);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images) {
  std::filesystem::create_directories(dir);
  std::ofstream ann(std::filesystem::path(dir) / "annotations.txt", std::ios::trunc);
  if (!ann) throw IoError("cannot write annotations in " + dir);
  char buf[64];
  for (const auto& img : images) {
    RgbImage rgb{img.height, img.width, img.pixels};
    write_ppm((std::filesystem::path(dir) / img.id).string(), rgb);
    ann << img.id << ";";
    for (const Point& p : img.points) {
      std::snprintf(buf, sizeof(buf), " (%.4f,%.4f)", p.x, p.y);
      ann << buf;
    }
    ann << "\n";
  }
  if (!ann) throw IoError("annotation write failed in " + dir);
}

std::vector<AnnotatedImage> load_dataset(const std::string& dir, std::size_t resize_to) {
  return ingest_annotations(dir, (std::filesystem::path(dir) / "annotations.txt").string(),
                            resize_to);
}

}  // namespace countnet
