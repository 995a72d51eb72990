#pragma once

// RDT1 tensor container and named-record checkpoints.
//
//   RDT1 file : "RDT1" | u32 rank | rank x u32 dims | float32 payload (all LE)
//   checkpoint: { u32 name_len | name bytes | RDT1 tensor }* | u32 0

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "redt/tensor.hpp"

namespace redt {

struct RawTensor {
  Shape shape;
  std::vector<float> values;

  bool operator==(const RawTensor&) const = default;
};

void write_rdt(std::ostream& os, const RawTensor& t);
// `base_offset` only affects the byte offsets reported in FormatError.
RawTensor read_rdt(std::istream& is, long long base_offset = 0);

void write_rdt_file(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_rdt_file(const std::filesystem::path& path);

using Checkpoint = std::vector<std::pair<std::string, RawTensor>>;

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);

template <typename Scalar>
RawTensor to_raw(const Tensor<Scalar>& t) {
  RawTensor raw{t.shape(), std::vector<float>(static_cast<std::size_t>(t.size()))};
  for (Index i = 0; i < t.size(); ++i) raw.values[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
  return raw;
}

template <typename Scalar>
Tensor<Scalar> from_raw(const RawTensor& raw, bool requires_grad = false) {
  Vec<Scalar> v(static_cast<Index>(raw.values.size()));
  for (std::size_t i = 0; i < raw.values.size(); ++i) v[static_cast<Index>(i)] = static_cast<Scalar>(raw.values[i]);
  return Tensor<Scalar>(raw.shape, std::move(v), requires_grad);
}

}  // namespace redt
