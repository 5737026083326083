#pragma once

#include "dfb/autodiff.hpp"

#include <functional>
#include <vector>

namespace dfb {

// Builds the scalar loss from parameter Vars bound in the given graph.
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Max over all parameter entries of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8), numeric by central differences.
double grad_check(const LossBuilder& loss, std::vector<Tensor>& params, double epsilon = 1e-5);

}  // namespace dfb
