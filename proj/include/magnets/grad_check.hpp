#pragma once

#include <functional>
#include <string>
#include <vector>

#include "magnets/autodiff.hpp"

namespace magnets::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
};

// Builds a scalar loss on the given tape. Must bind every checked parameter via
// tape.parameter() and must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

// Compares reverse-mode gradients with central differences of step h.
// Error per entry is |analytic - fd| / max(1, |fd|); the maximum is reported.
GradCheckReport grad_check(const LossBuilder& f, const std::vector<Parameter*>& params, double h = 1e-5);

}  // namespace magnets::ad
