#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "colony/mnist.hpp"
#include "colony/nn.hpp"
#include "colony/optim.hpp"
#include "colony/rng.hpp"

namespace colony {

struct train_config {
    int epochs = 3;
    int batch_size = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    optim_rule rule = optim_rule::sgd_momentum;
    std::uint64_t seed = 0;
};

struct train_stats {
    double final_epoch_loss = 0.0;
    double wall_seconds = 0.0;
    std::int64_t steps = 0;
};

// Seeded mini-batch training over a subset of a dataset. The shuffle stream
// depends only on (seed, epoch), so runs are reproducible.
inline train_stats train_network(network<float>& net, const std::vector<labeled_image>& data,
                                 const std::vector<int>& indices, const train_config& cfg) {
    if (indices.empty()) throw input_error("training needs a nonempty index set");
    if (cfg.epochs < 1) throw config_error("epochs must be >= 1");
    if (cfg.batch_size < 1) throw config_error("batch size must be >= 1");

    optimizer_config oc;
    oc.rule = cfg.rule;
    oc.learning_rate = cfg.learning_rate;
    oc.momentum = cfg.momentum;
    optimizer<float> opt(oc);

    const auto t0 = std::chrono::steady_clock::now();
    train_stats stats;
    std::vector<int> order = indices;
    for (int e = 0; e < cfg.epochs; ++e) {
        rng shuf(derive_seed(cfg.seed, "epoch", std::uint64_t(e)));
        shuf.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.batch_size)) {
            const std::size_t take = std::min(std::size_t(cfg.batch_size), order.size() - at);
            std::vector<int> chunk(order.begin() + std::ptrdiff_t(at),
                                   order.begin() + std::ptrdiff_t(at + take));
            const tensor<float> batch = to_batch(data, chunk);
            const std::vector<int> labels = labels_of(data, chunk);
            loss_sum += net.loss_and_grad(batch, labels);
            opt.step(net);
            ++batches;
            ++stats.steps;
        }
        stats.final_epoch_loss = loss_sum / double(batches);
    }
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

} // namespace colony
