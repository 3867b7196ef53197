#pragma once

// Central finite-difference gradient oracle used across the test suites.
// Independent of the autograd path: it re-runs the forward closure with
// perturbed inputs and never touches recorded graphs.

#include <cmath>
#include <functional>
#include <vector>

#include "streamnas/rng.hpp"
#include "streamnas/tensor.hpp"

namespace testsupport {

struct FdCheck {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compare d(loss)/d(inputs[i]) from backward() against central differences.
/// `forward` must build a scalar loss from the given leaf tensors each call.
inline FdCheck check_gradients(std::vector<streamnas::Tensor> inputs,
                               const std::function<streamnas::Tensor()>& forward,
                               double step = 1e-5) {
    using streamnas::Tensor;
    for (auto& t : inputs) t.set_requires_grad(true);

    Tensor loss = forward();
    for (auto& t : inputs) t.zero_grad();
    loss.backward();

    FdCheck result;
    for (auto& t : inputs) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + step;
            const double up = forward().value();
            t.data()[i] = saved - step;
            const double down = forward().value();
            t.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = t.grad()[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            const double rel = std::abs(numeric - analytic) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

inline streamnas::Tensor random_tensor(streamnas::Shape shape, streamnas::Rng& rng,
                                       double lo = -1.0, double hi = 1.0) {
    std::vector<double> values(streamnas::shape_numel(shape));
    for (double& v : values) v = rng.uniform(lo, hi);
    return streamnas::Tensor(std::move(shape), std::move(values));
}

}  // namespace testsupport
