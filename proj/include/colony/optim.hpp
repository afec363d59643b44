#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "colony/error.hpp"
#include "colony/nn.hpp"

namespace colony {

enum class optim_rule { sgd_momentum, adam };

struct optimizer_config {
    optim_rule rule = optim_rule::sgd_momentum;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8; // adam
};

// v <- mu*v + g ; w <- w - lr*v  (or bias-corrected adam). Gradients are left
// untouched so callers may inspect or zero them.
template <typename T>
class optimizer {
public:
    explicit optimizer(optimizer_config cfg = {}) : cfg_(cfg) {
        if (cfg_.learning_rate < 0) throw config_error("learning rate must be non-negative");
    }

    const optimizer_config& config() const { return cfg_; }

    void step(network<T>& net) {
        if (!net.grads_valid)
            throw state_error("optimizer step before any gradient computation");
        auto& blocks = net.blocks();
        if (m_.empty()) {
            m_.resize(blocks.size());
            v_.resize(blocks.size());
        }
        ++t_;
        const T lr = T(cfg_.learning_rate);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto& blk = blocks[i];
            if (!blk.trainable) continue;
            if (m_[i].numel() == 0) m_[i] = tensor<T>(blk.values.shape());
            auto& m = m_[i];
            if (cfg_.rule == optim_rule::sgd_momentum) {
                const T mu = T(cfg_.momentum);
                for (std::size_t k = 0; k < m.numel(); ++k) {
                    m[k] = mu * m[k] + blk.grad[k];
                    blk.values[k] -= lr * m[k];
                }
            } else {
                if (v_[i].numel() == 0) v_[i] = tensor<T>(blk.values.shape());
                auto& v = v_[i];
                const double b1 = cfg_.beta1, b2 = cfg_.beta2;
                const double c1 = 1.0 - std::pow(b1, double(t_));
                const double c2 = 1.0 - std::pow(b2, double(t_));
                for (std::size_t k = 0; k < m.numel(); ++k) {
                    const double g = double(blk.grad[k]);
                    m[k] = T(b1 * double(m[k]) + (1.0 - b1) * g);
                    v[k] = T(b2 * double(v[k]) + (1.0 - b2) * g * g);
                    const double mh = double(m[k]) / c1;
                    const double vh = double(v[k]) / c2;
                    blk.values[k] -= T(double(lr) * mh / (std::sqrt(vh) + cfg_.epsilon));
                }
            }
        }
    }

private:
    optimizer_config cfg_;
    std::vector<tensor<T>> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace colony
