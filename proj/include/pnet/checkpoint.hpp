#pragma once

#include <map>
#include <string>

#include "pnet/model.hpp"

namespace pnet {

// Binary checkpoint: magic "PNET", u32 version, length-prefixed key=value
// manifest, then named tensors until end of file. All integers little-endian,
// tensor data raw IEEE-754 doubles; round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore tensors;                        // model params plus any extra tensors (e.g. optimizer moments)
  std::map<std::string, std::string> extras;  // manifest entries beyond the config
};

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& tensors,
                     const std::map<std::string, std::string>& extras = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pnet
