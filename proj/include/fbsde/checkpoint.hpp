#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fbsde/training.hpp"
#include "fbsde/value_net.hpp"

// Binary checkpoint container: magic, format version, config digest,
// iteration counter, then named float64 arrays in row-major order. Network
// parameters use their named_arrays names; Adam moments are stored alongside
// as adam.m.<name> / adam.v.<name> plus the step counter adam.t.

namespace fbsde {

struct Checkpoint {
  std::string digest;
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, Mat>> arrays;

  const Mat* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::string& digest, std::uint64_t iteration,
                     const NetworkParams& params, const AdamState* adam = nullptr);

// Throws ConfigError on missing file, bad magic, version mismatch or truncation.
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds parameters shaped by `spec` from the checkpoint arrays; every
// parameter array must be present with matching shape.
NetworkParams params_from_checkpoint(const NetworkSpec& spec, const Checkpoint& cp);

// Restores Adam state if the checkpoint carries it; returns a fresh state otherwise.
AdamState adam_from_checkpoint(const NetworkParams& params, const Checkpoint& cp);

}  // namespace fbsde
