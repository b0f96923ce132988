#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "core/model.hpp"
#include "core/tensor.hpp"

namespace st {

// STCK container: magic "STCK", version u32 LE, descriptor (length-prefixed
// UTF-8, JSON text), tensor count u32, then per tensor: name (length-prefixed
// UTF-8), ndim u32, dims u32[ndim], payload f32 LE; finally one
// length-prefixed UTF-8 JSON trailer (config echo / metrics snapshot).
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string descriptor;               // JSON text, e.g. a ModelSpec
  std::map<std::string, Tensor> tensors;
  std::string trailer;                  // JSON text

  bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

// Model-checkpoint helpers over the container.
Checkpoint make_model_checkpoint(const ModelSpec& spec, const Parameters& params,
                                 const std::string& config_echo, int epoch, float clean_acc,
                                 float robust_acc, bool is_best);
ModelSpec checkpoint_spec(const Checkpoint& cp);
Parameters checkpoint_params(const Checkpoint& cp);

}  // namespace st
