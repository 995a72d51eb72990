#include "redt/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace redt {
namespace {

static_assert(std::endian::native == std::endian::little, "RDT1 I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

class Reader {
 public:
  Reader(std::istream& is, long long base) : is_(is), offset_(base) {}

  void read(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    const auto got = is_.gcount();
    if (static_cast<std::size_t>(got) != n)
      throw FormatError(std::string("truncated ") + what, offset_ + static_cast<long long>(got));
    offset_ += static_cast<long long>(n);
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  long long offset() const { return offset_; }

 private:
  std::istream& is_;
  long long offset_;
};

RawTensor read_rdt_body(Reader& r) {
  const long long start = r.offset();
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, "RDT1", 4) != 0) throw FormatError("bad magic, expected RDT1", start);
  const long long rank_at = r.offset();
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > 16) throw FormatError("unsupported rank " + std::to_string(rank), rank_at);
  RawTensor t;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const long long at = r.offset();
    const std::uint32_t d = r.u32("dims");
    if (d == 0) throw FormatError("zero extent", at);
    count *= d;
    if (count > (1ULL << 32)) throw FormatError("payload too large", at);
    t.shape.push_back(static_cast<Index>(d));
  }
  t.values.resize(static_cast<std::size_t>(count));
  r.read(reinterpret_cast<char*>(t.values.data()), t.values.size() * sizeof(float), "payload");
  return t;
}

}  // namespace

void write_rdt(std::ostream& os, const RawTensor& t) {
  if (static_cast<Index>(t.values.size()) != numel(t.shape)) throw ShapeError("write_rdt: shape/value mismatch");
  os.write("RDT1", 4);
  put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (Index d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.values.data()),
           static_cast<std::streamsize>(t.values.size() * sizeof(float)));
}

RawTensor read_rdt(std::istream& is, long long base_offset) {
  Reader r(is, base_offset);
  return read_rdt_body(r);
}

void write_rdt_file(const std::filesystem::path& path, const RawTensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  write_rdt(os, t);
  if (!os) throw DataError("write failed: " + path.string());
}

RawTensor read_rdt_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path.string());
  return read_rdt(is);
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  for (const auto& [name, t] : ckpt) {
    if (name.empty()) throw UsageError("checkpoint record names must be non-empty");
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_rdt(os, t);
  }
  put_u32(os, 0);
}

Checkpoint read_checkpoint(std::istream& is) {
  Reader r(is, 0);
  Checkpoint out;
  for (;;) {
    const long long at = r.offset();
    const std::uint32_t len = r.u32("record name length");
    if (len == 0) break;
    if (len > 4096) throw FormatError("implausible record name length", at);
    std::string name(len, '\0');
    r.read(name.data(), len, "record name");
    out.emplace_back(std::move(name), read_rdt_body(r));
  }
  return out;
}

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  write_checkpoint(os, ckpt);
  if (!os) throw DataError("write failed: " + path.string());
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path.string());
  return read_checkpoint(is);
}

}  // namespace redt
