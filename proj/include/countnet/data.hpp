#pragma once

// Synthetic countable-object datasets, density-target construction from point
// annotations, annotation-file ingestion, and basic augmentation.
//
// Annotation format, one record per line:
//   <image path>; (x,y) (x,y) ...
// with `#` comment lines. Coordinates are pixel-center based: valid points
// lie in [0, W-1] x [0, H-1], and a horizontal flip maps x to W-1-x.

#include <optional>
#include <string>
#include <vector>

#include "countnet/image_io.hpp"
#include "countnet/model.hpp"

namespace countnet {

struct Point {
  double x = 0, y = 0;
};

struct AnnotatedImage {
  std::string id;  // file name within its dataset
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;  // H*W*3 in [0, 1]
  std::vector<Point> points;

  std::size_t true_count() const { return points.size(); }
};

struct SynthSpec {
  std::size_t image_size = 64;
  std::size_t count_min = 1, count_max = 20;
  double radius_min = 2.0, radius_max = 4.0;
  std::size_t distractor_min = 0, distractor_max = 3;
  double background_noise = 0.03;
  std::uint64_t seed = 1;

  void validate() const {
    if (count_min > count_max) throw ValueError("count range: min > max");
    if (radius_min > radius_max || radius_min <= 0) throw ValueError("radius range invalid");
    if (distractor_min > distractor_max) throw ValueError("distractor range: min > max");
    if (background_noise < 0) throw ValueError("background noise must be >= 0");
    if (image_size < 8) throw ValueError("image size too small");
  }
};

// One image per index; each index draws from its own seed stream, so the
// dataset is identical whether images are generated serially or in parallel.
AnnotatedImage synth_image(const SynthSpec& spec, std::size_t index);
std::vector<AnnotatedImage> synth_generate(const SynthSpec& spec, std::size_t n);

// Sum of per-point Gaussians (truncated at 4 sigma, renormalized to unit
// in-image mass), so the map integral equals the point count.
DensityMap density_target(const std::vector<Point>& points, std::size_t height, std::size_t width,
                          double sigma);

struct CropRect {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
};

// Flips first, then the crop. Points leaving the crop are dropped.
struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  std::optional<CropRect> crop;
};

AnnotatedImage augment(const AnnotatedImage& img, const AugmentOps& ops);

// Seeded variant: each allowed flip applies with probability 1/2; an allowed
// crop picks a random window of at least half the image side.
AnnotatedImage augment_random(const AnnotatedImage& img, bool allow_hflip, bool allow_vflip,
                              bool allow_crop, std::uint64_t seed);

// Reads `annotation_file` relative paths from `image_dir`; optionally resizes
// everything (and rescales points) to resize_to x resize_to.
std::vector<AnnotatedImage> ingest_annotations(const std::string& image_dir,
                                               const std::string& annotation_file,
                                               std::size_t resize_to = 0);

// Writes img_XXXXX.ppm files plus annotations.txt into dir.
void write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images);

std::vector<AnnotatedImage> load_dataset(const std::string& dir, std::size_t resize_to = 0);

}  // namespace countnet
