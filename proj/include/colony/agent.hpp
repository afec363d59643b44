#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "colony/archetype.hpp"
#include "colony/nn.hpp"

namespace colony {

enum class agent_status { founder, child };

struct training_run {
    std::string task;
    int epochs = 0;
    std::int64_t data_size = 0;
    double wall_seconds = 0.0;
};

// One colony member: a built network plus its identity and history.
struct agent {
    std::string id;
    learner_kind kind = learner_kind::fast;
    double width = 1.0;
    std::uint64_t seed = 0;
    agent_status status = agent_status::founder;
    network<float> net;
    std::vector<training_run> history;

    archetype_spec spec() const { return spec_for(kind, width); }
};

// "<kind-code>-<seed>-<8-hex event hash>"
inline std::string agent_id(learner_kind kind, std::uint64_t seed, std::uint64_t event_hash) {
    static const char* hex = "0123456789abcdef";
    std::string h(8, '0');
    for (int i = 7; i >= 0; --i) {
        h[i] = hex[event_hash & 0xf];
        event_hash >>= 4;
    }
    return std::to_string(kind_code(kind)) + "-" + std::to_string(seed) + "-" + h;
}

} // namespace colony
