#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "redt/errors.hpp"
#include "redt/tensor.hpp"

namespace redt {

/// Dense H x W depth raster (meters, row-major) with a validity mask.
/// Predictions are fully valid; ground truth is usually sparse.
struct DepthMap {
  Index height = 0;
  Index width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(Index h, Index w) : height(h), width(w), values(static_cast<std::size_t>(h * w), 0.0f),
                               valid(static_cast<std::size_t>(h * w), 0) {}

  static DepthMap dense(Index h, Index w, std::vector<float> v) {
    if (static_cast<Index>(v.size()) != h * w) throw ShapeError("DepthMap::dense: size mismatch");
    DepthMap m;
    m.height = h;
    m.width = w;
    m.values = std::move(v);
    m.valid.assign(m.values.size(), 1);
    return m;
  }

  Index size() const { return height * width; }
  float& at(Index r, Index c) { return values[static_cast<std::size_t>(r * width + c)]; }
  float at(Index r, Index c) const { return values[static_cast<std::size_t>(r * width + c)]; }
  bool is_valid(Index i) const { return valid[static_cast<std::size_t>(i)] != 0; }

  Index valid_count() const {
    Index n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }

  bool operator==(const DepthMap&) const = default;
};

/// Projects a full-resolution label raster onto a grid `factor` times coarser.
/// Each coarse pixel takes the valid source pixel closest to its block centre
/// (first in scan order on ties) and is valid iff such a pixel exists.
inline DepthMap project_labels(const DepthMap& full, Index factor) {
  if (factor <= 0 || full.height % factor != 0 || full.width % factor != 0)
    throw UsageError("project_labels: resolution not divisible by factor");
  DepthMap out(full.height / factor, full.width / factor);
  const double centre = (static_cast<double>(factor) - 1.0) / 2.0;
  for (Index r = 0; r < out.height; ++r)
    for (Index c = 0; c < out.width; ++c) {
      double best = 1e300;
      for (Index dy = 0; dy < factor; ++dy)
        for (Index dx = 0; dx < factor; ++dx) {
          const Index src = (r * factor + dy) * full.width + c * factor + dx;
          if (!full.is_valid(src)) continue;
          const double dist = (dy - centre) * (dy - centre) + (dx - centre) * (dx - centre);
          if (dist < best) {
            best = dist;
            out.at(r, c) = full.values[static_cast<std::size_t>(src)];
            out.valid[static_cast<std::size_t>(r * out.width + c)] = 1;
          }
        }
    }
  return out;
}

}  // namespace redt
