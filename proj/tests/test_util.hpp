#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "redt/io.hpp"
#include "redt/rng.hpp"
#include "redt/tensor.hpp"

namespace redt::testing {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  Vec<Scalar> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return Tensor<Scalar>(std::move(shape), std::move(v), requires_grad);
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("redt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

inline bool bitwise_equal(const RawTensor& a, const RawTensor& b) {
  return a.shape == b.shape && a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

// Rank 1..4, dimensions 1..6 with singleton axes common.
inline RawTensor random_raw(Rng& rng) {
  const int rank = 1 + static_cast<int>(rng.below(4));
  RawTensor t;
  for (int i = 0; i < rank; ++i) t.shape.push_back(1 + static_cast<Index>(rng.below(rng.below(2) ? 1 : 6)));
  t.values.resize(static_cast<std::size_t>(numel(t.shape)));
  for (auto& v : t.values) v = static_cast<float>(rng.normal() * 100.0);
  return t;
}

}  // namespace redt::testing
