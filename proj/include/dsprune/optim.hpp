#pragma once

#include <vector>

#include "dsprune/errors.hpp"
#include "dsprune/tensor.hpp"

namespace dsprune {

// SGD with classical momentum: v <- momentum * v + grad, p <- p - lr * v.
// Velocity buffers persist across steps; gradients are zeroed after each
// step. One optimizer instance belongs to one training context.
template <class T>
class SgdT {
public:
    SgdT(std::vector<TensorT<T>> params, T lr, T momentum)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        if (lr_ <= T(0)) throw ConfigError("sgd: learning rate must be positive");
        if (momentum_ < T(0) || momentum_ >= T(1)) throw ConfigError("sgd: momentum must be in [0,1)");
        velocity_.reserve(params_.size());
        for (const auto& p : params_) velocity_.emplace_back(std::vector<T>(p.size(), T(0)));
    }

    void step() {
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.has_grad()) {
                throw StateError("sgd: parameter " + std::to_string(pi) +
                                 " has no gradient; run backward before step");
            }
            auto g = p.grad();
            auto& v = velocity_[pi];
            T* pd = p.data();
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = momentum_ * v[i] + g[i];
                pd[i] -= lr_ * v[i];
            }
            p.zero_grad();
        }
    }

    T learning_rate() const { return lr_; }
    T momentum() const { return momentum_; }

private:
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<T>> velocity_;
    T lr_;
    T momentum_;
};

using Sgd = SgdT<float>;

}  // namespace dsprune
