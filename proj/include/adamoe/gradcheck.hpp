// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adamoe/tensor.hpp"

namespace adamoe {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_autodiff = 0.0;
    double worst_numeric = 0.0;
};

/// Central-difference check of reverse-mode gradients. `f` must rebuild the
/// graph from the current parameter values on every call and return a scalar
/// loss. Uses forward evaluations only, so it is independent of the backward
/// rules it verifies. Relative error per element is
/// |fd - ad| / max(|fd|, |ad|, 1e-6).
GradCheckReport finite_diff_check(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double eps);

}  // namespace adamoe
