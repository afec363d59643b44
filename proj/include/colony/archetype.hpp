#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "colony/error.hpp"
#include "colony/nn.hpp"
#include "colony/rng.hpp"

namespace colony {

// The three learner roles and their model type codes.
enum class learner_kind { fast, detailed, organized };

inline int kind_code(learner_kind k) {
    switch (k) {
    case learner_kind::fast: return 16;
    case learner_kind::detailed: return 19;
    case learner_kind::organized: return 50;
    }
    throw config_error("unknown learner kind");
}

inline const char* kind_name(learner_kind k) {
    switch (k) {
    case learner_kind::fast: return "fast";
    case learner_kind::detailed: return "detailed";
    case learner_kind::organized: return "organized";
    }
    throw config_error("unknown learner kind");
}

inline learner_kind kind_from_name(std::string_view s) {
    if (s == "fast") return learner_kind::fast;
    if (s == "detailed") return learner_kind::detailed;
    if (s == "organized") return learner_kind::organized;
    throw config_error("unknown learner kind: " + std::string(s));
}

inline learner_kind kind_from_code(int code) {
    if (code == 16) return learner_kind::fast;
    if (code == 19) return learner_kind::detailed;
    if (code == 50) return learner_kind::organized;
    throw config_error("unknown model type code: " + std::to_string(code));
}

// (a,b,c): convolutional learning step, knowledge-module count, knowledge dimensionality
struct triplet {
    int step = 0;
    int modules = 0;
    int dim = 0;
    bool operator==(const triplet&) const = default;
};

// (a, 1..b, (c,d,e)): residual learning steps with bottleneck dimensionalities
struct hier_step {
    int step = 0;
    int blocks = 0;
    std::array<int, 3> dims{};
    bool operator==(const hier_step&) const = default;
};

struct archetype_spec {
    learner_kind kind = learner_kind::fast;
    double width = 1.0;
    std::vector<triplet> triplets;   // all steps (fast/detailed); stem step only (organized)
    std::vector<hier_step> hierarchy; // organized steps 2..5
    int input_hw = 32;
    int input_ch = 1;
    int classes = 10;
};

// Channel scaling: keeps the triplet structure while shrinking width.
inline int scaled_channels(int dim, double width) {
    return std::max<int>(8, static_cast<int>(std::llround(dim * width)));
}

inline archetype_spec spec_for(learner_kind kind, double width = 1.0) {
    if (!(width > 0.0) || width > 1.0) throw config_error("width factor must be in (0,1]");
    archetype_spec s;
    s.kind = kind;
    s.width = width;
    switch (kind) {
    case learner_kind::fast:
        s.triplets = {{1, 2, 64}, {2, 2, 128}, {3, 3, 256}, {4, 3, 512}, {5, 3, 512}};
        break;
    case learner_kind::detailed:
        s.triplets = {{1, 2, 64}, {2, 2, 128}, {3, 4, 256}, {4, 4, 512}, {5, 4, 512}};
        break;
    case learner_kind::organized:
        s.triplets = {{1, 2, 64}};
        s.hierarchy = {{2, 3, {64, 64, 256}},
                       {3, 4, {128, 128, 512}},
                       {4, 6, {256, 256, 1024}},
                       {5, 3, {512, 512, 2048}}};
        break;
    }
    return s;
}

inline int conv_layer_count(const archetype_spec& s) {
    if (s.kind == learner_kind::organized) {
        int n = 1; // stem
        for (const auto& h : s.hierarchy) n += 3 * h.blocks;
        return n;
    }
    int n = 0;
    for (const auto& t : s.triplets) n += t.modules;
    return n;
}

// Knowledge address: "a.b.c" for plain modules, "a.b.(c,d,e)" for bottleneck
// modules, with "-" as a positional wildcard selecting a single sub-block.
struct knowledge_address {
    int step = 0;
    int ordinal = 0;
    bool hierarchical = false;
    int dim = 0;               // plain form
    std::array<int, 3> dims{}; // hierarchical form; -1 = wildcard

    static constexpr int wildcard = -1;

    bool operator==(const knowledge_address&) const = default;

    std::string str() const {
        std::string s = std::to_string(step) + "." + std::to_string(ordinal) + ".";
        if (!hierarchical) return s + std::to_string(dim);
        s += "(";
        for (int i = 0; i < 3; ++i) {
            if (i) s += ",";
            s += dims[i] == wildcard ? "-" : std::to_string(dims[i]);
        }
        return s + ")";
    }

    static knowledge_address plain(int a, int b, int c) { return {a, b, false, c, {}}; }
    static knowledge_address bottleneck(int a, int b, std::array<int, 3> cde) {
        return {a, b, true, 0, cde};
    }

    static knowledge_address parse(std::string_view s) {
        const auto fail = [&] { throw address_error("malformed knowledge address: " + std::string(s)); };
        const auto dot1 = s.find('.');
        if (dot1 == std::string_view::npos) fail();
        const auto dot2 = s.find('.', dot1 + 1);
        if (dot2 == std::string_view::npos) fail();
        knowledge_address a;
        try {
            a.step = std::stoi(std::string(s.substr(0, dot1)));
            a.ordinal = std::stoi(std::string(s.substr(dot1 + 1, dot2 - dot1 - 1)));
        } catch (const std::exception&) {
            fail();
        }
        std::string_view rest = s.substr(dot2 + 1);
        if (rest.empty()) fail();
        if (rest.front() == '(') {
            if (rest.back() != ')') fail();
            a.hierarchical = true;
            std::string_view body = rest.substr(1, rest.size() - 2);
            int slot = 0;
            std::size_t pos = 0;
            while (slot < 3) {
                const auto comma = body.find(',', pos);
                std::string_view tok =
                    body.substr(pos, comma == std::string_view::npos ? comma : comma - pos);
                if (tok.empty()) fail();
                if (tok == "-") {
                    a.dims[slot] = wildcard;
                } else {
                    try {
                        a.dims[slot] = std::stoi(std::string(tok));
                    } catch (const std::exception&) {
                        fail();
                    }
                }
                ++slot;
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
            }
            if (slot != 3) fail();
        } else {
            try {
                a.dim = std::stoi(std::string(rest));
            } catch (const std::exception&) {
                fail();
            }
        }
        return a;
    }

    int wildcard_count() const {
        if (!hierarchical) return 0;
        int n = 0;
        for (int d : dims)
            if (d == wildcard) ++n;
        return n;
    }
};

// One knowledge module: its address, every parameter block it owns, and the
// block shapes as built at the spec's width.
struct manifest_entry {
    knowledge_address addr;
    std::vector<std::string> block_ids;
    std::vector<std::vector<int>> shapes;
};

struct fc_entry {
    std::string name;
    std::vector<std::string> block_ids;
    std::vector<std::vector<int>> shapes;
};

struct module_manifest {
    std::vector<manifest_entry> conv_modules;
    std::vector<fc_entry> fc_blocks;
};

namespace detail {

// Shared structural walk: emits layers/blocks into the network and rows into
// the manifest so the two can never disagree.
template <typename T>
struct net_assembler {
    network<T>& net;
    module_manifest& manifest;
    int act_top = 0; // activation slot of the current tail

    int add_layer(layer_spec L, int in1 = -1) {
        L.in1 = in1 < 0 ? act_top : in1;
        net.layers.push_back(L);
        act_top = static_cast<int>(net.layers.size());
        return act_top;
    }

    int block(manifest_entry* entry, const std::string& id, std::vector<int> shape,
              bool trainable = true) {
        const int idx = net.add_block(id, shape, trainable);
        if (entry) {
            entry->block_ids.push_back(id);
            entry->shapes.push_back(std::move(shape));
        }
        return idx;
    }

    // conv(+bias); organized archetypes attach batch-norm to every conv
    int conv(manifest_entry* entry, const std::string& prefix, int in_ch, int out_ch, int k,
             int stride, bool with_bn, int input_slot = -1) {
        layer_spec c;
        c.kind = layer_kind::conv2d;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.ksize = k;
        c.stride = stride;
        c.pad = k == 3 ? 1 : 0;
        c.w = block(entry, prefix + ":w", {out_ch, in_ch, k, k});
        c.b = block(entry, prefix + ":b", {out_ch});
        int slot = add_layer(c, input_slot);
        if (with_bn) {
            layer_spec bn;
            bn.kind = layer_kind::batch_norm;
            bn.channels = out_ch;
            bn.gamma = block(entry, prefix + ":bn_g", {out_ch});
            bn.beta = block(entry, prefix + ":bn_b", {out_ch});
            bn.rmean = block(entry, prefix + ":bn_m", {out_ch}, false);
            bn.rvar = block(entry, prefix + ":bn_v", {out_ch}, false);
            slot = add_layer(bn, slot);
        }
        return slot;
    }

    int relu(int in = -1) { return add_layer({.kind = layer_kind::relu}, in); }

    void fc(const std::string& name, int in_features, int out_features) {
        layer_spec L;
        L.kind = layer_kind::fully_connected;
        L.in_features = in_features;
        L.out_features = out_features;
        fc_entry e;
        e.name = name;
        L.w = net.add_block(name + ":w", {out_features, in_features});
        e.block_ids.push_back(name + ":w");
        e.shapes.push_back({out_features, in_features});
        L.b = net.add_block(name + ":b", {out_features});
        e.block_ids.push_back(name + ":b");
        e.shapes.push_back({out_features});
        manifest.fc_blocks.push_back(std::move(e));
        add_layer(L);
    }
};

} // namespace detail

template <typename T>
struct build_result {
    network<T> net;
    module_manifest manifest;
};

// Construct the width-scaled network for a spec together with its module
// manifest. Initialization is He-style fan-in-scaled uniform, drawn from a
// per-block stream derived from (seed, block id).
template <typename T = float>
build_result<T> build_with_manifest(const archetype_spec& spec, std::uint64_t seed,
                                    bool initialize = true) {
    build_result<T> out;
    network<T>& net = out.net;
    net.input_hw = spec.input_hw;
    net.input_ch = spec.input_ch;
    net.classes = spec.classes;
    detail::net_assembler<T> as{net, out.manifest};

    const double w = spec.width;
    int cur = spec.input_ch;
    int hw = spec.input_hw;

    if (spec.kind != learner_kind::organized) {
        // VGG-style: b conv(3x3)+relu modules per step, then a 2x2 max-pool
        for (const triplet& t : spec.triplets) {
            const int ch = scaled_channels(t.dim, w);
            for (int m = 1; m <= t.modules; ++m) {
                manifest_entry e;
                e.addr = knowledge_address::plain(t.step, m, t.dim);
                as.conv(&e, e.addr.str(), cur, ch, 3, 1, false);
                as.relu();
                out.manifest.conv_modules.push_back(std::move(e));
                cur = ch;
            }
            as.add_layer({.kind = layer_kind::max_pool});
            hw /= 2;
        }
        const int g = hw * hw;
        as.add_layer({.kind = layer_kind::flatten});
        as.fc("fc1", cur * g, 64);
        as.relu();
        as.fc("fc2", 64, 64);
        as.relu();
        as.fc("fc3", 64, spec.classes);
        as.add_layer({.kind = layer_kind::softmax});
    } else {
        // ResNet-style: stem conv, bottleneck residual blocks, global average
        // pool, one FC head. Stride-2 downsampling at the first block of
        // steps 3-5; projection shortcut whenever geometry changes.
        {
            manifest_entry e;
            e.addr = knowledge_address::plain(1, 1, spec.triplets.at(0).dim);
            const int ch = scaled_channels(spec.triplets.at(0).dim, w);
            as.conv(&e, e.addr.str(), cur, ch, 3, 1, true);
            as.relu();
            out.manifest.conv_modules.push_back(std::move(e));
            cur = ch;
        }
        for (const hier_step& hs : spec.hierarchy) {
            const int c = scaled_channels(hs.dims[0], w);
            const int d = scaled_channels(hs.dims[1], w);
            const int e_ch = scaled_channels(hs.dims[2], w);
            for (int b = 1; b <= hs.blocks; ++b) {
                const int stride = (hs.step >= 3 && b == 1) ? 2 : 1;
                manifest_entry e;
                e.addr = knowledge_address::bottleneck(hs.step, b, hs.dims);
                const std::string p = e.addr.str();
                const int entry_slot = as.act_top;
                as.conv(&e, p + ":c1", cur, c, 1, stride, true, entry_slot);
                as.relu();
                as.conv(&e, p + ":c2", c, d, 3, 1, true);
                as.relu();
                as.conv(&e, p + ":c3", d, e_ch, 1, 1, true);
                const int main_slot = as.act_top;
                int skip_slot = entry_slot;
                if (cur != e_ch || stride != 1)
                    skip_slot = as.conv(&e, p + ":proj", cur, e_ch, 1, stride, true, entry_slot);
                layer_spec add;
                add.kind = layer_kind::residual_add;
                add.in2 = skip_slot;
                as.add_layer(add, main_slot);
                as.relu();
                out.manifest.conv_modules.push_back(std::move(e));
                cur = e_ch;
                if (stride == 2) hw /= 2;
            }
        }
        as.add_layer({.kind = layer_kind::global_avg_pool});
        as.add_layer({.kind = layer_kind::flatten});
        as.fc("fc1", cur, spec.classes);
        as.add_layer({.kind = layer_kind::softmax});
    }

    if (initialize) {
        for (auto& blk : net.blocks()) {
            const auto& id = blk.id;
            const bool is_weight = id.size() > 2 && id.compare(id.size() - 2, 2, ":w") == 0;
            if (is_weight) {
                const auto& sh = blk.values.shape();
                std::size_t fan_in = 1;
                for (std::size_t i = 1; i < sh.size(); ++i) fan_in *= static_cast<std::size_t>(sh[i]);
                const double limit = std::sqrt(6.0 / double(fan_in));
                rng r(derive_seed(seed, id));
                for (auto& v : blk.values.values()) v = T(r.uniform(-limit, limit));
            } else if (id.ends_with(":bn_g") || id.ends_with(":bn_v")) {
                blk.values.fill(T(1));
            } else {
                blk.values.fill(T(0)); // biases, bn beta, bn running mean
            }
        }
    }
    return out;
}

template <typename T = float>
network<T> build_network(const archetype_spec& spec, std::uint64_t seed) {
    return build_with_manifest<T>(spec, seed).net;
}

inline module_manifest enumerate_modules(const archetype_spec& spec) {
    return build_with_manifest<float>(spec, 0, /*initialize=*/false).manifest;
}

namespace detail {

// slot index selected by a wildcard address, or -1 for the whole module
inline int wildcard_slot(const knowledge_address& q) {
    if (!q.hierarchical || q.wildcard_count() == 0) return -1;
    if (q.wildcard_count() != 2)
        throw address_error("ambiguous wildcard in address " + q.str() +
                            " (exactly one named position required)");
    for (int i = 0; i < 3; ++i)
        if (q.dims[i] != knowledge_address::wildcard) return i;
    return -1;
}

inline bool entry_matches(const knowledge_address& q, const knowledge_address& e) {
    if (q.step != e.step || q.ordinal != e.ordinal) return false;
    if (q.hierarchical != e.hierarchical) return false;
    if (!q.hierarchical) return q.dim == e.dim;
    for (int i = 0; i < 3; ++i)
        if (q.dims[i] != knowledge_address::wildcard && q.dims[i] != e.dims[i]) return false;
    return true;
}

} // namespace detail

// Resolve a knowledge address to the parameter block ids it names. A wildcard
// selects only that sub-block of a bottleneck; a full address names the whole
// module.
inline std::vector<std::string> resolve(const module_manifest& manifest,
                                        const knowledge_address& addr) {
    const int slot = detail::wildcard_slot(addr);
    for (const manifest_entry& e : manifest.conv_modules) {
        if (!detail::entry_matches(addr, e.addr)) continue;
        if (slot < 0) return e.block_ids;
        const std::string want = ":c" + std::to_string(slot + 1) + ":";
        std::vector<std::string> out;
        for (const auto& id : e.block_ids)
            if (id.find(want) != std::string::npos) out.push_back(id);
        return out;
    }
    throw address_error("address " + addr.str() + " is not present in the module manifest");
}

inline std::vector<std::string> resolve(const archetype_spec& spec, const knowledge_address& addr) {
    return resolve(enumerate_modules(spec), addr);
}

} // namespace colony
