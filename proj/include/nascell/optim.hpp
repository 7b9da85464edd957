#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nascell/tensor.hpp"

namespace nascell {

/// Cosine annealing: lr0 * (1 + cos(pi*t/T)) / 2 over t in [0, T].
/// Endpoints are returned exactly (lr0 at t=0, 0 at t=T).
inline double cosine_lr(long t, long total_steps, double lr0) {
    if (total_steps < 1) throw std::invalid_argument("cosine_lr: total steps must be >= 1");
    if (t < 0 || t > total_steps)
        throw std::invalid_argument("cosine_lr: step " + std::to_string(t) + " outside [0, " +
                                    std::to_string(total_steps) + "]");
    if (t == 0) return lr0;
    if (t == total_steps) return 0.0;
    return lr0 * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(t) /
                           static_cast<double>(total_steps)));
}

namespace detail {

inline const std::vector<double>& require_grad_buffer(const Tensor& p) {
    if (p.node()->grad.empty())
        throw std::invalid_argument("optimizer: parameter has no gradient (missing backward?)");
    return p.node()->grad;
}

} // namespace detail

/// SGD with classical momentum and coupled weight decay:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    /// Sizes the velocity buffers for a fixed parameter list.
    void attach(const std::vector<Tensor>& params) {
        velocity_.clear();
        for (const Tensor& p : params) velocity_.emplace_back(p.numel(), 0.0);
    }

    void step(std::vector<Tensor>& params, double lr) {
        if (params.size() != velocity_.size())
            throw std::invalid_argument("SgdMomentum::step: parameter list changed since attach");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = detail::require_grad_buffer(params[i]);
            auto& p = params[i].data();
            auto& v = velocity_[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                v[k] = momentum_ * v[k] + (g[k] + weight_decay_ * p[k]);
                p[k] -= lr * v[k];
            }
        }
    }

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }
    std::vector<std::vector<double>>& velocity() { return velocity_; }
    const std::vector<std::vector<double>>& velocity() const { return velocity_; }

private:
    double momentum_, weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

/// Plain gradient descent (the architecture-parameter update; no momentum,
/// no weight decay). lr == 0 leaves parameters bit-identical.
inline void gradient_descent_step(std::vector<Tensor>& params, double lr) {
    for (Tensor& p : params) {
        const auto& g = detail::require_grad_buffer(p);
        auto& d = p.data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
    }
}

} // namespace nascell
