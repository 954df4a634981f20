// SPDX-License-Identifier: Apache-2.0

#include "adamoe/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace adamoe {

GradCheckReport finite_diff_check(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");

    for (const auto& [name, p] : params) {
        (void)name;
        const_cast<Tensor&>(p).zero_grad();
    }
    Tensor loss = f();
    backward(loss);

    // snapshot autodiff gradients (zero when a parameter is unused)
    std::vector<std::vector<double>> ad;
    ad.reserve(params.size());
    for (const auto& [name, p] : params) {
        (void)name;
        ad.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));
    }

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k].second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double saved = p.values()[i];
            p.values()[i] = saved + eps;
            double up = f().item();
            p.values()[i] = saved - eps;
            double dn = f().item();
            p.values()[i] = saved;
            double fd = (up - dn) / (2.0 * eps);
            double g = ad[k][i];
            double denom = std::max({std::fabs(fd), std::fabs(g), 1e-6});
            double rel = std::fabs(fd - g) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[k].first;
                report.worst_index = i;
                report.worst_autodiff = g;
                report.worst_numeric = fd;
            }
        }
    }
    return report;
}

}  // namespace adamoe
