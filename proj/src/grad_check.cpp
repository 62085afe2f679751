#include "msse/grad_check.hpp"

#include <cmath>

namespace msse {

GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           double eps) {
    for (const auto& [name, p] : params) {
        if (!p->requires_grad) {
            throw ConfigError("grad_check: parameter '" + name + "' does not track gradients");
        }
        p->zero_grad();
    }

    TensorPtr loss = f();
    if (loss->size() != 1) throw DimensionError("grad_check: f must return a scalar");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.push_back(p->grad.empty() ? std::vector<double>(p->data.size(), 0.0) : p->grad);
    }

    GradCheckReport report;
    NoGradGuard no_grad;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi].second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + eps;
            const double fp = f()->data[0];
            p.data[i] = saved - eps;
            const double fm = f()->data[0];
            p.data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite objective at '" + params[pi].first + "'");
            }
            const double central = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[pi][i] - central) / std::max(1.0, std::abs(central));
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace msse
