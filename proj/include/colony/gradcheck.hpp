#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "colony/nn.hpp"
#include "colony/rng.hpp"

namespace colony {

struct gradcheck_result {
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped = 0; // coordinates straddling a ReLU kink or pool-argmax switch
};

// Central-difference check of the analytic gradient on a sampled subset of
// coordinates. A coordinate is excluded when the two perturbed forwards route
// differently (ReLU sign or pool argmax changed): the loss is not
// differentiable across that boundary. Run with network<double>.
template <typename T>
gradcheck_result finite_diff_check(network<T>& net, const tensor<T>& batch,
                                   const std::vector<int>& labels, double eps,
                                   int sample_coords = 200, std::uint64_t seed = 0x5eed) {
    if (eps < 1e-7 || eps > 1e-3) throw config_error("gradcheck eps must be in [1e-7, 1e-3]");

    net.loss_and_grad(batch, labels);
    auto& blocks = net.blocks();

    std::vector<std::pair<std::size_t, std::size_t>> coords; // (block, element)
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (!blocks[b].trainable) continue;
        for (std::size_t k = 0; k < blocks[b].values.numel(); ++k) coords.emplace_back(b, k);
    }
    if (static_cast<int>(coords.size()) > sample_coords) {
        rng r(derive_seed(seed, "gradcheck"));
        r.shuffle(coords.begin(), coords.end());
        coords.resize(static_cast<std::size_t>(sample_coords));
    }

    gradcheck_result res;
    for (const auto& [b, k] : coords) {
        const T saved = blocks[b].values[k];
        const double ga = double(blocks[b].grad[k]);

        std::uint64_t sig_plus = 0, sig_minus = 0;
        blocks[b].values[k] = saved + T(eps);
        const double lp = net.loss_only(batch, labels, &sig_plus);
        blocks[b].values[k] = saved - T(eps);
        const double lm = net.loss_only(batch, labels, &sig_minus);
        blocks[b].values[k] = saved;

        if (sig_plus != sig_minus) {
            ++res.skipped;
            continue;
        }
        const double gfd = (lp - lm) / (2.0 * eps);
        const double rel = std::abs(ga - gfd) / std::max(1e-8, std::abs(ga) + std::abs(gfd));
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.checked;
    }
    return res;
}

} // namespace colony
