#pragma once

#include <cmath>
#include <vector>

#include "streamnas/errors.hpp"
#include "streamnas/tensor.hpp"

namespace streamnas {

/// Adam with standard bias correction, applied in place to a fixed
/// parameter set. Moment buffers are owned here and can be checkpointed
/// for exact run resumption.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : params_(std::move(params)),
          lr_(lr),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          weight_decay_(weight_decay) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t p = 0; p < params_.size(); ++p) {
            m_[p].assign(params_[p].numel(), 0.0);
            v_[p].assign(params_[p].numel(), 0.0);
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Tensor& param = params_[p];
            if (param.grad().size() != param.numel())
                throw ContractError("adam: parameter has no gradient buffer");
            auto& data = param.data();
            const auto& grad = param.grad();
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = grad[i] + weight_decay_ * data[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                data[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    std::size_t step_count() const { return step_count_; }

    const std::vector<Tensor>& params() const { return params_; }

    /// Raw optimizer state, exposed for checkpointing.
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void set_step_count(std::size_t t) { step_count_ = t; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    std::size_t step_count_ = 0;
};

}  // namespace streamnas
