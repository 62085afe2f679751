#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msse/tensor.hpp"

namespace msse {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // parameter name and element of the worst error
};

// Compares reverse-mode gradients of a scalar-valued function against
// central finite differences. `f` must rebuild its graph from the current
// parameter values on every call and be deterministic (dropout disabled or
// masks frozen). Error metric per element:
//   |analytic - central| / max(1, |central|)
GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           double eps = 1e-5);

}  // namespace msse
