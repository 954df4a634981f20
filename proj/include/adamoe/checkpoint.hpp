// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint: the exact run config plus every parameter
// tensor, bit-exact round trip. Format documented in the README.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adamoe/tensor.hpp"

namespace adamoe {

struct CheckpointTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::string config_json;
    std::vector<CheckpointTensor> tensors;
};

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& params);

Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into matching named parameters; throws when a
/// name or shape does not line up.
void restore_parameters(const Checkpoint& ckpt,
                        const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace adamoe
