#include "redt/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "redt/io.hpp"
#include "redt/rng.hpp"

namespace redt {
namespace {

using Vec3 = std::array<double, 3>;

// Walls keep their nearest edge beyond this depth so boxes fit in front of them.
constexpr double kWallNearLimit = 7.0;
constexpr double kBoxNearLimit = 3.0;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal{0, 1, 0};
  double u = 0, v = 0;  // surface coordinates in metres
  const Primitive* prim = nullptr;
};

struct Camera {
  Vec3 origin, forward, up, right;
  double focal, cx, cy;

  Camera(const SceneConfig& cfg) {
    const double p = cfg.pitch_deg * std::numbers::pi / 180.0;
    origin = {0.0, cfg.camera_height, 0.0};
    forward = {0.0, -std::sin(p), std::cos(p)};
    up = {0.0, std::cos(p), std::sin(p)};
    right = {1.0, 0.0, 0.0};
    focal = cfg.focal_scale * cfg.width;
    cx = cfg.width / 2.0;
    cy = cfg.height / 2.0;
  }

  // Unnormalized direction whose component along `forward` is exactly 1,
  // so the ray parameter t equals z-depth.
  Vec3 ray(Index row, Index col) const {
    const double a = (static_cast<double>(col) + 0.5 - cx) / focal;
    const double b = (static_cast<double>(row) + 0.5 - cy) / focal;
    return {forward[0] + a * right[0] - b * up[0], forward[1] + a * right[1] - b * up[1],
            forward[2] + a * right[2] - b * up[2]};
  }
};

void intersect_ground(const Vec3& o, const Vec3& d, const Primitive& g, Hit& hit) {
  if (d[1] >= 0) return;
  const double t = -o[1] / d[1];
  if (t <= 0 || t >= hit.t) return;
  hit.t = t;
  hit.normal = {0, 1, 0};
  hit.u = o[0] + t * d[0];
  hit.v = o[2] + t * d[2];
  hit.prim = &g;
}

void intersect_box(const Vec3& o, const Vec3& d, const Primitive& b, Hit& hit) {
  const double lo[3] = {b.x0, 0.0, b.z0}, hi[3] = {b.x1, b.height, b.z1};
  double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a], t1 = (hi[a] - o[a]) / d[a];
    double s = -1;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1;
    }
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
      sign = s;
    }
    tmax = std::min(tmax, t1);
  }
  if (axis < 0 || tmin > tmax || tmin <= 0 || tmin >= hit.t) return;
  hit.t = tmin;
  hit.normal = {0, 0, 0};
  hit.normal[static_cast<std::size_t>(axis)] = sign;
  const Vec3 p{o[0] + tmin * d[0], o[1] + tmin * d[1], o[2] + tmin * d[2]};
  if (axis == 0) {
    hit.u = p[2];
    hit.v = p[1];
  } else if (axis == 1) {
    hit.u = p[0];
    hit.v = p[2];
  } else {
    hit.u = p[0];
    hit.v = p[1];
  }
  hit.prim = &b;
}

void intersect_wall(const Vec3& o, const Vec3& d, const Primitive& w, Hit& hit) {
  const Vec3 n{std::sin(w.yaw), 0.0, -std::cos(w.yaw)};
  const Vec3 tangent{std::cos(w.yaw), 0.0, std::sin(w.yaw)};
  const double denom = dot(n, d);
  if (std::abs(denom) < 1e-12) return;
  const Vec3 rel{w.cx - o[0], -o[1], w.cz - o[2]};
  const double t = dot(n, rel) / denom;
  if (t <= 0 || t >= hit.t) return;
  const Vec3 p{o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
  const double s = (p[0] - w.cx) * tangent[0] + (p[2] - w.cz) * tangent[2];
  if (std::abs(s) > w.extent / 2 || p[1] < 0 || p[1] > w.height) return;
  hit.t = t;
  hit.normal = denom > 0 ? Vec3{-n[0], -n[1], -n[2]} : n;
  hit.u = s;
  hit.v = p[1];
  hit.prim = &w;
}

Vec3 texture_color(const Primitive& prim, double u, double v) {
  const double c = std::cos(prim.orientation), s = std::sin(prim.orientation);
  const double ru = c * u + s * v;
  double mix = 0;
  switch (prim.texture) {
    case Texture::kFlat:
      mix = 0;
      break;
    case Texture::kChecker: {
      const long long k = static_cast<long long>(std::floor(u / prim.period)) + static_cast<long long>(std::floor(v / prim.period));
      mix = (k % 2 == 0) ? 0.0 : 1.0;
      break;
    }
    case Texture::kStripes: {
      const long long k = static_cast<long long>(std::floor(ru / prim.period));
      mix = (k % 2 == 0) ? 0.0 : 1.0;
      break;
    }
    case Texture::kGradient:
      mix = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * ru / (4.0 * prim.period));
      break;
  }
  return {prim.color_a[0] * (1 - mix) + prim.color_b[0] * mix, prim.color_a[1] * (1 - mix) + prim.color_b[1] * mix,
          prim.color_a[2] * (1 - mix) + prim.color_b[2] * mix};
}

void assign_appearance(Primitive& p, Rng& rng) {
  p.texture = static_cast<Texture>(rng.below(4));
  for (int c = 0; c < 3; ++c) p.color_a[c] = rng.uniform(0.1, 0.9);
  for (int c = 0; c < 3; ++c) p.color_b[c] = rng.uniform(0.1, 0.9);
  p.period = rng.uniform(0.25, 1.0);
  p.orientation = rng.uniform(0.0, std::numbers::pi);
}

nlohmann::json primitive_to_json(const Primitive& p) {
  nlohmann::json j;
  switch (p.kind) {
    case Primitive::Kind::kGround:
      j["kind"] = "ground";
      break;
    case Primitive::Kind::kBox:
      j["kind"] = "box";
      j["x0"] = p.x0;
      j["x1"] = p.x1;
      j["z0"] = p.z0;
      j["z1"] = p.z1;
      j["height"] = p.height;
      break;
    case Primitive::Kind::kWall:
      j["kind"] = "wall";
      j["cx"] = p.cx;
      j["cz"] = p.cz;
      j["yaw"] = p.yaw;
      j["extent"] = p.extent;
      j["height"] = p.height;
      break;
  }
  j["texture"] = to_string(p.texture);
  j["color_a"] = {p.color_a[0], p.color_a[1], p.color_a[2]};
  j["color_b"] = {p.color_b[0], p.color_b[1], p.color_b[2]};
  j["period"] = p.period;
  j["orientation"] = p.orientation;
  return j;
}

Primitive primitive_from_json(const nlohmann::json& j) {
  Primitive p;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "box") {
    p.kind = Primitive::Kind::kBox;
    p.x0 = j.at("x0");
    p.x1 = j.at("x1");
    p.z0 = j.at("z0");
    p.z1 = j.at("z1");
    p.height = j.at("height");
  } else if (kind == "wall") {
    p.kind = Primitive::Kind::kWall;
    p.cx = j.at("cx");
    p.cz = j.at("cz");
    p.yaw = j.at("yaw");
    p.extent = j.at("extent");
    p.height = j.at("height");
  } else if (kind != "ground") {
    throw DataError("unknown primitive kind '" + kind + "'");
  }
  const auto tex = j.at("texture").get<std::string>();
  bool found = false;
  for (auto t : {Texture::kFlat, Texture::kChecker, Texture::kStripes, Texture::kGradient})
    if (tex == to_string(t)) {
      p.texture = t;
      found = true;
    }
  if (!found) throw DataError("unknown texture '" + tex + "'");
  for (int c = 0; c < 3; ++c) {
    p.color_a[c] = j.at("color_a").at(c);
    p.color_b[c] = j.at("color_b").at(c);
  }
  p.period = j.at("period");
  p.orientation = j.at("orientation");
  return p;
}

void render_into(SceneSample& s, const SceneConfig& cfg);

}  // namespace

const char* to_string(Texture t) {
  switch (t) {
    case Texture::kFlat:
      return "flat";
    case Texture::kChecker:
      return "checkerboard";
    case Texture::kStripes:
      return "stripes";
    case Texture::kGradient:
      return "gradient";
  }
  return "flat";
}

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw UsageError("scene size " + std::to_string(height) + "x" + std::to_string(width) + " must be divisible by 32");
  if (!(d_max > d_min) || !(d_min > 0)) throw UsageError("scene depth range must satisfy 0 < d_min < d_max");
  if (min_boxes < 0 || max_boxes < min_boxes || min_walls < 0 || max_walls < min_walls)
    throw UsageError("scene primitive counts are inconsistent");
}

DepthMap SceneSample::labels() const {
  DepthMap m(height, width);
  for (Index i = 0; i < height * width; ++i) {
    const auto k = static_cast<std::size_t>(i);
    m.valid[k] = valid[k];
    m.values[k] = valid[k] ? depth_dense[k] : 0.0f;
  }
  return m;
}

Index SceneSample::valid_count() const {
  Index n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const Camera cam(cfg);
  const double half_fov = std::atan(cfg.width / 2.0 / cam.focal);

  SceneSample s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.seed = seed;

  Primitive ground;
  ground.kind = Primitive::Kind::kGround;
  assign_appearance(ground, rng);
  s.primitives.push_back(ground);

  const int walls = cfg.min_walls + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_walls - cfg.min_walls + 1)));
  const int boxes = cfg.min_boxes + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_boxes - cfg.min_boxes + 1)));

  double nearest_wall = std::numeric_limits<double>::infinity();
  for (int i = 0; i < walls; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      Primitive w;
      w.kind = Primitive::Kind::kWall;
      w.cz = rng.uniform(8.0, 17.0);
      w.yaw = rng.uniform(-0.5, 0.5);
      w.extent = rng.uniform(4.0, 12.0);
      w.height = rng.uniform(2.5, 7.0);
      w.cx = rng.uniform(-1.0, 1.0) * w.cz * std::tan(half_fov) * 0.6;
      const double near_edge = w.cz - 0.5 * w.extent * std::abs(std::sin(w.yaw));
      if (near_edge < kWallNearLimit) continue;
      assign_appearance(w, rng);
      nearest_wall = std::min(nearest_wall, near_edge);
      s.primitives.push_back(w);
      ok = true;
    }
    if (!ok)
      throw GenerationError("generate_scene: could not place wall " + std::to_string(i) + " after " +
                            std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
  }

  std::vector<Primitive> placed;
  for (int i = 0; i < boxes; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      Primitive b;
      b.kind = Primitive::Kind::kBox;
      const double dz = rng.uniform(0.6, 2.5), dx = rng.uniform(0.6, 2.5);
      const double z_hi = std::min(14.0, nearest_wall - 0.5 - dz);
      if (z_hi < kBoxNearLimit) continue;
      b.z0 = rng.uniform(kBoxNearLimit, z_hi);
      b.z1 = b.z0 + dz;
      const double xc = rng.uniform(-1.0, 1.0) * (b.z0 * std::tan(half_fov) + 1.0);
      b.x0 = xc - dx / 2;
      b.x1 = xc + dx / 2;
      b.height = rng.uniform(0.5, 2.5);
      const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const Primitive& o) {
        return b.x0 < o.x1 + 0.2 && o.x0 < b.x1 + 0.2 && b.z0 < o.z1 + 0.2 && o.z0 < b.z1 + 0.2;
      });
      if (overlaps) continue;
      assign_appearance(b, rng);
      placed.push_back(b);
      ok = true;
    }
    if (!ok)
      throw GenerationError("generate_scene: could not place box " + std::to_string(i) + " after " +
                            std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
  }
  s.primitives.insert(s.primitives.end(), placed.begin(), placed.end());
  render_into(s, cfg);
  return s;
}

SceneSample render_scene(std::vector<Primitive> primitives, const SceneConfig& cfg) {
  cfg.validate();
  SceneSample s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.primitives = std::move(primitives);
  render_into(s, cfg);
  return s;
}

namespace {

void render_into(SceneSample& s, const SceneConfig& cfg) {
  const Camera cam(cfg);
  const Vec3 light = normalized({-0.4, 0.8, -0.45});
  const auto n = static_cast<std::size_t>(cfg.height * cfg.width);
  s.rgb.assign(n * 3, 0.0f);
  s.depth_dense.assign(n, 0.0f);
  s.valid.assign(n, 1);
  for (Index r = 0; r < cfg.height; ++r)
    for (Index c = 0; c < cfg.width; ++c) {
      const Vec3 d = cam.ray(r, c);
      Hit hit;
      for (const auto& p : s.primitives) {
        switch (p.kind) {
          case Primitive::Kind::kGround:
            intersect_ground(cam.origin, d, p, hit);
            break;
          case Primitive::Kind::kBox:
            intersect_box(cam.origin, d, p, hit);
            break;
          case Primitive::Kind::kWall:
            intersect_wall(cam.origin, d, p, hit);
            break;
        }
      }
      const auto k = static_cast<std::size_t>(r * cfg.width + c);
      Vec3 color;
      double depth;
      if (hit.prim) {
        const Vec3 base = texture_color(*hit.prim, hit.u, hit.v);
        const double shade = 0.45 + 0.55 * std::max(0.0, dot(hit.normal, light));
        color = {base[0] * shade, base[1] * shade, base[2] * shade};
        depth = hit.t;
      } else {
        const double f = static_cast<double>(r) / static_cast<double>(cfg.height);
        color = {0.55 + 0.25 * f, 0.7 + 0.18 * f, 0.95 + 0.05 * f};
        depth = cfg.d_max;
      }
      s.depth_dense[k] = static_cast<float>(std::clamp(depth, cfg.d_min, cfg.d_max));
      for (int ch = 0; ch < 3; ++ch) s.rgb[k * 3 + static_cast<std::size_t>(ch)] = static_cast<float>(std::clamp(color[static_cast<std::size_t>(ch)], 0.0, 1.0));
    }
}

}  // namespace

SceneSample sparsify_labels(SceneSample sample, double rate, std::uint64_t seed) {
  if (!(rate > 0.0) || rate > 1.0) throw UsageError("sparsify_labels: rate must be in (0, 1]");
  const auto n = static_cast<std::size_t>(sample.height * sample.width);
  const auto keep = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }
  sample.valid.assign(n, 0);
  for (std::size_t i = 0; i < keep; ++i) sample.valid[order[i]] = 1;
  return sample;
}

SceneSample clip_labels(SceneSample sample, double d_clip, double d_min, double d_max) {
  if (!(d_clip > d_min) || d_clip > d_max)
    throw UsageError("clip_labels: d_clip " + std::to_string(d_clip) + " outside (d_min, d_max]");
  for (std::size_t i = 0; i < sample.valid.size(); ++i)
    if (sample.valid[i] && sample.depth_dense[i] > d_clip) sample.valid[i] = 0;
  return sample;
}

SceneSample flip_horizontal(SceneSample s) {
  for (Index r = 0; r < s.height; ++r)
    for (Index c = 0; c < s.width / 2; ++c) {
      const auto a = static_cast<std::size_t>(r * s.width + c), b = static_cast<std::size_t>(r * s.width + s.width - 1 - c);
      std::swap(s.depth_dense[a], s.depth_dense[b]);
      std::swap(s.valid[a], s.valid[b]);
      for (std::size_t ch = 0; ch < 3; ++ch) std::swap(s.rgb[a * 3 + ch], s.rgb[b * 3 + ch]);
    }
  return s;
}

DepthMap flip_horizontal(const DepthMap& m) {
  DepthMap out = m;
  for (Index r = 0; r < m.height; ++r)
    for (Index c = 0; c < m.width; ++c) {
      const auto dst = static_cast<std::size_t>(r * m.width + c), src = static_cast<std::size_t>(r * m.width + m.width - 1 - c);
      out.values[dst] = m.values[src];
      out.valid[dst] = m.valid[src];
    }
  return out;
}

SceneSample augment_sample(SceneSample s, std::uint64_t seed, const AugmentFlags& flags) {
  Rng rng(seed);
  // Draw every variate unconditionally so one flag never shifts another's stream.
  const bool do_flip = rng.uniform() < 0.5;
  const double brightness = rng.uniform(0.8, 1.2);
  const double color[3] = {rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)};
  if (flags.flip && do_flip) s = flip_horizontal(std::move(s));
  const double unit[3] = {1.0, 1.0, 1.0};
  if (flags.brightness || flags.color)
    s = adjust_color(std::move(s), flags.brightness ? brightness : 1.0, flags.color ? color : unit);
  return s;
}

SceneSample adjust_color(SceneSample s, double brightness, const double gains[3]) {
  if (brightness == 1.0 && gains[0] == 1.0 && gains[1] == 1.0 && gains[2] == 1.0) return s;
  for (std::size_t i = 0; i < s.rgb.size(); ++i)
    s.rgb[i] = static_cast<float>(std::clamp(s.rgb[i] * brightness * gains[i % 3], 0.0, 1.0));
  return s;
}

void write_sample(const std::filesystem::path& dir, const SceneSample& s) {
  std::filesystem::create_directories(dir);
  write_rdt_file(dir / "rgb.rdt", RawTensor{{s.height, s.width, 3}, s.rgb});
  RawTensor depth{{s.height, s.width}, std::vector<float>(s.depth_dense.size())};
  for (std::size_t i = 0; i < depth.values.size(); ++i) depth.values[i] = s.valid[i] ? s.depth_dense[i] : 0.0f;
  write_rdt_file(dir / "depth.rdt", depth);
  nlohmann::json meta;
  meta["seed"] = s.seed;
  meta["primitives"] = nlohmann::json::array();
  for (const auto& p : s.primitives) meta["primitives"].push_back(primitive_to_json(p));
  std::ofstream os(dir / "meta.json");
  if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

SceneSample read_sample(const std::filesystem::path& dir) {
  const RawTensor rgb = read_rdt_file(dir / "rgb.rdt");
  const RawTensor depth = read_rdt_file(dir / "depth.rdt");
  if (rgb.shape.size() != 3 || rgb.shape[2] != 3) throw DataError(dir.string() + ": rgb.rdt must be [H,W,3]");
  if (depth.shape.size() != 2 || depth.shape[0] != rgb.shape[0] || depth.shape[1] != rgb.shape[1])
    throw DataError(dir.string() + ": depth.rdt shape does not match rgb.rdt");
  SceneSample s;
  s.height = rgb.shape[0];
  s.width = rgb.shape[1];
  s.rgb = rgb.values;
  s.depth_dense = depth.values;
  s.valid.resize(depth.values.size());
  for (std::size_t i = 0; i < depth.values.size(); ++i) s.valid[i] = depth.values[i] > 0.0f ? 1 : 0;
  std::ifstream is(dir / "meta.json");
  if (is) {
    try {
      const auto meta = nlohmann::json::parse(is);
      s.seed = meta.at("seed").get<std::uint64_t>();
      if (meta.contains("primitives"))
        for (const auto& p : meta["primitives"]) s.primitives.push_back(primitive_from_json(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(dir.string() + "/meta.json: " + e.what());
    }
  }
  return s;
}

void write_manifest(const std::filesystem::path& root, const DatasetManifest& m) {
  nlohmann::json j;
  j["generator_version"] = m.generator_version;
  j["count"] = m.count;
  j["height"] = m.height;
  j["width"] = m.width;
  j["d_min"] = m.d_min;
  j["d_max"] = m.d_max;
  j["sparsity"] = m.sparsity;
  j["d_clip"] = m.d_clip ? nlohmann::json(*m.d_clip) : nlohmann::json(nullptr);
  j["seed"] = m.seed;
  j["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.files.size(); ++i) j["samples"].push_back({{"file", m.files[i]}, {"seed", m.seeds[i]}});
  std::filesystem::create_directories(root);
  std::ofstream os(root / "manifest.json");
  if (!os) throw DataError("cannot write " + (root / "manifest.json").string());
  os << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw DataError("missing manifest: " + (root / "manifest.json").string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(is);
    m.generator_version = j.at("generator_version").get<std::string>();
    m.count = j.at("count").get<Index>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.d_min = j.at("d_min").get<double>();
    m.d_max = j.at("d_max").get<double>();
    m.sparsity = j.at("sparsity").get<double>();
    if (!j.at("d_clip").is_null()) m.d_clip = j.at("d_clip").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("samples")) {
      m.files.push_back(e.at("file").get<std::string>());
      m.seeds.push_back(e.at("seed").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError((root / "manifest.json").string() + ": " + e.what());
  }
  if (static_cast<Index>(m.files.size()) != m.count) throw DataError("manifest count does not match its sample list");
  return m;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, Index index) {
  return Rng::mix(dataset_seed, static_cast<std::uint64_t>(index));
}

SceneSample regenerate_sample(const DatasetManifest& m, Index index, const SceneConfig& base) {
  SceneConfig cfg = base;
  cfg.height = m.height;
  cfg.width = m.width;
  cfg.d_min = m.d_min;
  cfg.d_max = m.d_max;
  const std::uint64_t seed = m.seeds.at(static_cast<std::size_t>(index));
  SceneSample s = sparsify_labels(generate_scene(seed, cfg), m.sparsity, Rng::mix(seed, 1));
  if (m.d_clip) s = clip_labels(std::move(s), *m.d_clip, m.d_min, m.d_max);
  return s;
}

DatasetManifest generate_dataset(const std::filesystem::path& root, Index count, std::uint64_t seed,
                                 double sparsity, const SceneConfig& cfg, std::optional<double> d_clip) {
  if (count <= 0) throw UsageError("generate_dataset: count must be positive");
  cfg.validate();
  DatasetManifest m;
  m.count = count;
  m.height = cfg.height;
  m.width = cfg.width;
  m.d_min = cfg.d_min;
  m.d_max = cfg.d_max;
  m.sparsity = sparsity;
  m.d_clip = d_clip;
  m.seed = seed;
  for (Index i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05lld", static_cast<long long>(i));
    m.files.emplace_back(name);
    m.seeds.push_back(sample_seed(seed, i));
  }
  for (Index i = 0; i < count; ++i) write_sample(root / m.files[static_cast<std::size_t>(i)], regenerate_sample(m, i, cfg));
  write_manifest(root, m);
  return m;
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& root, DatasetManifest* manifest) {
  DatasetManifest m = read_manifest(root);
  std::vector<SceneSample> out;
  out.reserve(m.files.size());
  for (const auto& f : m.files) out.push_back(read_sample(root / f));
  if (manifest) *manifest = std::move(m);
  return out;
}

}  // namespace redt
