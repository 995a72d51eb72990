#pragma once

// Procedural scenes with exact depth, label sparsification, range clipping,
// augmentation and on-disk datasets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "redt/depth_map.hpp"

namespace redt {

class GenerationError : public DataError {
 public:
  using DataError::DataError;
};

struct SceneConfig {
  int height = 64;
  int width = 64;
  double d_min = 1.0;
  double d_max = 20.0;
  int min_boxes = 1, max_boxes = 4;
  int min_walls = 1, max_walls = 2;
  double camera_height = 1.5;
  double pitch_deg = 8.0;      // downward tilt of the optical axis
  double focal_scale = 0.9;    // focal length in pixels = focal_scale * width
  int max_retries = 100;

  void validate() const;
};

enum class Texture { kFlat, kChecker, kStripes, kGradient };

const char* to_string(Texture t);

struct Primitive {
  enum class Kind { kGround, kBox, kWall } kind = Kind::kGround;
  // Box: axis-aligned [x0,x1] x [0,height] x [z0,z1].
  // Wall: vertical rectangle centred at (cx, ., cz), yawed by `yaw` radians,
  //       spanning `extent` metres horizontally and [0,height] vertically.
  double x0 = 0, x1 = 0, z0 = 0, z1 = 0, height = 0;
  double cx = 0, cz = 0, yaw = 0, extent = 0;
  Texture texture = Texture::kFlat;
  double color_a[3] = {0.5, 0.5, 0.5};
  double color_b[3] = {0.5, 0.5, 0.5};
  double period = 1.0;       // checker / stripe period in metres
  double orientation = 0.0;  // stripe / gradient direction in radians
};

struct SceneSample {
  Index height = 0, width = 0;
  std::vector<float> rgb;          // H*W*3, row-major, in [0,1]
  std::vector<float> depth_dense;  // H*W metres
  std::vector<std::uint8_t> valid; // H*W label mask
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;

  /// Label raster: depth where valid.
  DepthMap labels() const;
  Index valid_count() const;
};

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg);

/// Ray-casts a fixed primitive list; labels are dense.
SceneSample render_scene(std::vector<Primitive> primitives, const SceneConfig& cfg);

/// Exactly round(rate * H * W) pixels become valid, chosen uniformly without
/// replacement; every other pixel becomes invalid.
SceneSample sparsify_labels(SceneSample sample, double rate, std::uint64_t seed);

/// Invalidates labels deeper than d_clip; depth values are left untouched.
SceneSample clip_labels(SceneSample sample, double d_clip, double d_min, double d_max);

struct AugmentFlags {
  bool flip = false;
  bool brightness = false;
  bool color = false;
};

SceneSample augment_sample(SceneSample sample, std::uint64_t seed, const AugmentFlags& flags);
SceneSample flip_horizontal(SceneSample sample);
/// Multiplies RGB by brightness * gains[channel], clamped to [0, 1].
SceneSample adjust_color(SceneSample sample, double brightness, const double gains[3]);
DepthMap flip_horizontal(const DepthMap& map);

/// Sample directory: rgb.rdt [H,W,3], depth.rdt [H,W] (0 = no label), meta.json.
void write_sample(const std::filesystem::path& dir, const SceneSample& sample);
SceneSample read_sample(const std::filesystem::path& dir);

struct DatasetManifest {
  std::string generator_version = "redt-scenes-1";
  Index count = 0;
  int height = 64, width = 64;
  double d_min = 1.0, d_max = 20.0;
  double sparsity = 0.15;
  std::optional<double> d_clip;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
  std::vector<std::uint64_t> seeds;
};

void write_manifest(const std::filesystem::path& root, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& root);

/// Seed of sample `index` in a dataset generated with `dataset_seed`.
std::uint64_t sample_seed(std::uint64_t dataset_seed, Index index);

/// Regenerates sample `index` from manifest fields alone.
SceneSample regenerate_sample(const DatasetManifest& m, Index index, const SceneConfig& base = {});

/// Generates `count` samples into `root` and writes the manifest.
DatasetManifest generate_dataset(const std::filesystem::path& root, Index count, std::uint64_t seed,
                                 double sparsity, const SceneConfig& cfg, std::optional<double> d_clip = {});

/// Loads all samples listed in a manifest.
std::vector<SceneSample> load_dataset(const std::filesystem::path& root, DatasetManifest* manifest = nullptr);

}  // namespace redt
