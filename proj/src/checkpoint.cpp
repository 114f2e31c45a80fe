#include "jessi/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace jessi {

namespace {

constexpr char kMagic[6] = {'J', 'E', 'S', 'S', 'I', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError(strf("checkpoint: truncated file %s", path.c_str()));
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  // x86/arm little-endian: raw bytes already match the wire format
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(strf("checkpoint: cannot open %s for writing", path.c_str()));
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  out.write(ckpt.meta.data(), static_cast<std::streamsize>(ckpt.meta.size()));
  put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_f32(out, e.tensor.ptr(), e.tensor.size());
  }
  if (!out) throw IoError(strf("checkpoint: write failed for %s", path.c_str()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(strf("checkpoint: cannot open %s", path.c_str()));
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    throw IoError(strf("checkpoint: %s is not a JESSI1 container", path.c_str()));
  Checkpoint ckpt;
  const std::uint32_t meta_len = get_u32(in, path);
  ckpt.meta.resize(meta_len);
  if (meta_len && !in.read(ckpt.meta.data(), meta_len))
    throw IoError(strf("checkpoint: truncated meta in %s", path.c_str()));
  const std::uint32_t count = get_u32(in, path);
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = get_u32(in, path);
    e.name.resize(name_len);
    if (name_len && !in.read(e.name.data(), name_len))
      throw IoError(strf("checkpoint: truncated name in %s", path.c_str()));
    const std::uint32_t rank = get_u32(in, path);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r) shape[r] = get_u32(in, path);
    Tensor<float> t(shape);
    if (t.size() &&
        !in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * 4)))
      throw IoError(strf("checkpoint: truncated data for '%s' in %s", e.name.c_str(),
                         path.c_str()));
    e.tensor = std::move(t);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace jessi
