#pragma once

// Flat named-tensor container. Layout, all integers unsigned 32-bit
// little-endian, tensor payloads raw 32-bit little-endian IEEE reals:
//
//   magic "JESSI1"
//   u32 metaLen, metaLen bytes of UTF-8 (JSON side record; 0 = none)
//   u32 entryCount
//   per entry: u32 nameLen, name bytes, u32 rank, u32 extents[rank], f32 data[]
//
// Round-trips are bit-exact for float tensors.

#include <cstdint>
#include <string>
#include <vector>

#include "jessi/common.hpp"
#include "jessi/tensor.hpp"

namespace jessi {

struct CheckpointEntry {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  std::string meta;  // free-form JSON, may be empty
  std::vector<CheckpointEntry> entries;

  const Tensor<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename Real>
Checkpoint checkpoint_from_params(const std::vector<Parameter<Real>*>& params,
                                  std::string meta = "") {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  ckpt.entries.reserve(params.size());
  for (const auto* p : params)
    ckpt.entries.push_back({p->name, p->value.template cast<float>()});
  return ckpt;
}

template <typename Real>
void checkpoint_into_params(const Checkpoint& ckpt, const std::vector<Parameter<Real>*>& params) {
  for (auto* p : params) {
    const Tensor<float>* t = ckpt.find(p->name);
    if (!t) throw IoError(strf("checkpoint: missing tensor '%s'", p->name.c_str()));
    if (t->shape != p->value.shape)
      throw IoError(strf("checkpoint: tensor '%s' has shape %s, expected %s", p->name.c_str(),
                         shape_str(t->shape).c_str(), shape_str(p->value.shape).c_str()));
    p->value = t->template cast<Real>();
    p->zero_grad();
  }
}

}  // namespace jessi
