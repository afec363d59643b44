#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "colony/agent.hpp"
#include "colony/archetype.hpp"
#include "colony/error.hpp"
#include "colony/nn.hpp"
#include "colony/rng.hpp"

namespace colony {

struct marriage_config {
    double crossover_p = 0.5;    // the 50% probabilistic knowledge-sharing rule
    double mutation_rate = 0.01; // fraction of coordinates perturbed
    double mutation_scale = 0.1; // noise std as a fraction of the block's std
    std::uint64_t seed = 0;

    void validate() const {
        if (crossover_p < 0 || crossover_p > 1) throw config_error("crossover_p must be in [0,1]");
        if (mutation_rate < 0 || mutation_rate > 1)
            throw config_error("mutation_rate must be in [0,1]");
        if (mutation_scale < 0) throw config_error("mutation_scale must be >= 0");
    }
};

// A shape-compatible module pairing between two distinct archetypes.
// Bottleneck sub-blocks are addressed with positional wildcards.
struct compatibility_pair {
    knowledge_address addr_a;
    knowledge_address addr_b;
    bool operator==(const compatibility_pair&) const = default;
};

struct crossover_record {
    int child = 0;              // index into marriage_outcome::children
    std::string address;        // module (or sub-block) address in the child's spec
    std::string source;         // "A" or "B"
    std::string source_address; // address in the donor parent's spec
};

struct mutation_record {
    int child = 0;
    std::string block_id;
    std::uint64_t perturbed = 0;
};

struct marriage_outcome {
    std::vector<agent> children; // one for intra, two (A-kind, B-kind) for inter
    std::vector<crossover_record> crossover_log;
    std::vector<mutation_record> mutation_log;
    std::string kind; // "intra" | "inter"
    std::uint64_t event_hash = 0;
};

namespace detail {

// The exchangeable knowledge units of an archetype: whole modules for
// VGG-style specs, per-conv sub-blocks for bottlenecks.
struct pair_unit {
    knowledge_address addr;           // wildcard form for sub-blocks
    std::vector<std::string> conv_ids; // conv w/b resolved block ids
    std::vector<std::string> norm_ids; // attached bn gamma/beta (may be empty)
    std::vector<int> weight_shape;
    int manifest_pos = 0;
};

inline std::vector<pair_unit> pair_units(const archetype_spec& spec,
                                         const module_manifest& manifest) {
    std::vector<pair_unit> units;
    const bool organized = spec.kind == learner_kind::organized;
    for (std::size_t mi = 0; mi < manifest.conv_modules.size(); ++mi) {
        const manifest_entry& e = manifest.conv_modules[mi];
        auto find_shape = [&](const std::string& id) -> const std::vector<int>& {
            for (std::size_t i = 0; i < e.block_ids.size(); ++i)
                if (e.block_ids[i] == id) return e.shapes[i];
            throw address_error("block not in manifest entry: " + id);
        };
        if (!e.addr.hierarchical) {
            pair_unit u;
            u.addr = e.addr;
            const std::string p = e.addr.str();
            u.conv_ids = {p + ":w", p + ":b"};
            if (organized) u.norm_ids = {p + ":bn_g", p + ":bn_b"};
            u.weight_shape = find_shape(p + ":w");
            u.manifest_pos = static_cast<int>(mi);
            units.push_back(std::move(u));
        } else {
            for (int slot = 0; slot < 3; ++slot) {
                pair_unit u;
                auto dims = e.addr.dims;
                for (int i = 0; i < 3; ++i)
                    if (i != slot) dims[i] = knowledge_address::wildcard;
                u.addr = knowledge_address::bottleneck(e.addr.step, e.addr.ordinal, dims);
                const std::string p = e.addr.str() + ":c" + std::to_string(slot + 1);
                u.conv_ids = {p + ":w", p + ":b"};
                u.norm_ids = {p + ":bn_g", p + ":bn_b"};
                u.weight_shape = find_shape(p + ":w");
                u.manifest_pos = static_cast<int>(mi);
                units.push_back(std::move(u));
            }
        }
    }
    return units;
}

inline void reset_bn_stats(network<float>& net) {
    for (auto& blk : net.blocks()) {
        if (blk.id.ends_with(":bn_m")) blk.values.fill(0.0f);
        if (blk.id.ends_with(":bn_v")) blk.values.fill(1.0f);
    }
}

inline void copy_block(network<float>& dst, const network<float>& src, const std::string& id) {
    dst.block(id).values = src.block(id).values;
}

} // namespace detail

// All shape-compatible module pairings between two distinct archetypes.
// Ordered by manifest position on A, then on B.
inline std::vector<compatibility_pair> discover_compatible_pairs(const archetype_spec& spec_a,
                                                                 const archetype_spec& spec_b) {
    if (spec_a.kind == spec_b.kind)
        throw input_error("compatibility discovery requires distinct archetype kinds");
    if (spec_a.width != spec_b.width)
        throw input_error("compatibility discovery requires equal widths");
    const auto ua = detail::pair_units(spec_a, enumerate_modules(spec_a));
    const auto ub = detail::pair_units(spec_b, enumerate_modules(spec_b));
    std::vector<compatibility_pair> pairs;
    for (const auto& a : ua)
        for (const auto& b : ub)
            if (a.weight_shape == b.weight_shape) pairs.push_back({a.addr, b.addr});
    return pairs;
}

namespace detail {

struct matched_pair {
    pair_unit a, b;
};

// One-to-one exchange plan: each A unit takes its best unused shape-equal B
// unit, preferring the same learning step, then the nearest ordinal.
inline std::vector<matched_pair> canonical_matching(const archetype_spec& spec_a,
                                                    const module_manifest& man_a,
                                                    const archetype_spec& spec_b,
                                                    const module_manifest& man_b) {
    const auto ua = pair_units(spec_a, man_a);
    const auto ub = pair_units(spec_b, man_b);
    std::vector<bool> used(ub.size(), false);
    std::vector<matched_pair> out;
    for (const auto& a : ua) {
        int best = -1;
        std::array<int, 3> best_key{};
        for (std::size_t j = 0; j < ub.size(); ++j) {
            if (used[j] || ub[j].weight_shape != a.weight_shape) continue;
            const std::array<int, 3> key{std::abs(a.addr.step - ub[j].addr.step),
                                         std::abs(a.addr.ordinal - ub[j].addr.ordinal),
                                         static_cast<int>(j)};
            if (best < 0 || key < best_key) {
                best = static_cast<int>(j);
                best_key = key;
            }
        }
        if (best >= 0) {
            used[best] = true;
            out.push_back({a, ub[best]});
        }
    }
    return out;
}

// Bernoulli(rate) coordinate mask, Gaussian(0, scale*std(block)) perturbation.
// Batch-norm running statistics are never mutated.
inline std::vector<mutation_record> mutate_network(const module_manifest& manifest,
                                                   network<float>& net,
                                                   const marriage_config& cfg,
                                                   std::uint64_t stream_seed, int child_index) {
    std::vector<mutation_record> log;
    for (const manifest_entry& e : manifest.conv_modules) {
        for (const std::string& id : e.block_ids) {
            auto& blk = net.block(id);
            if (!blk.trainable) continue;
            mutation_record rec{child_index, id, 0};
            if (cfg.mutation_rate > 0.0) {
                rng r(derive_seed(stream_seed, id));
                const double sigma = cfg.mutation_scale * blk.values.stddev();
                for (auto& v : blk.values.values()) {
                    if (r.bernoulli(cfg.mutation_rate)) {
                        v += float(r.normal() * sigma);
                        ++rec.perturbed;
                    }
                }
            }
            log.push_back(std::move(rec));
        }
    }
    return log;
}

} // namespace detail

// Standalone mutation entry point (used by both marriage forms).
inline std::vector<mutation_record> mutate(const archetype_spec& spec, network<float>& net,
                                           const marriage_config& cfg) {
    cfg.validate();
    return detail::mutate_network(enumerate_modules(spec), net, cfg,
                                  derive_seed(cfg.seed, "mutation", 0), 0);
}

// Same-archetype marriage: per knowledge module the child inherits parent A
// with probability crossover_p, else parent B; FC blocks are freshly
// initialized from the child's seed (the child's new task memory).
inline marriage_outcome intra_marry(const agent& a, const agent& b, const marriage_config& cfg) {
    cfg.validate();
    if (a.kind != b.kind)
        throw marriage_error("intra-marriage requires the same archetype (use inter_marry)");
    if (a.width != b.width) throw marriage_error("intra-marriage requires equal widths");

    const archetype_spec spec = a.spec();
    marriage_outcome out;
    out.kind = "intra";
    out.event_hash = fnv1a64(a.id + "|" + b.id + "|intra", mix_seed(cfg.seed, 0x1a));

    agent child;
    child.kind = a.kind;
    child.width = a.width;
    child.seed = derive_seed(cfg.seed, "child", 0);
    child.status = agent_status::child;
    child.id = agent_id(child.kind, child.seed, out.event_hash);
    auto built = build_with_manifest<float>(spec, child.seed);
    child.net = std::move(built.net);
    const module_manifest& manifest = built.manifest;

    rng cross(derive_seed(cfg.seed, "crossover"));
    for (const manifest_entry& e : manifest.conv_modules) {
        const bool from_a = cross.bernoulli(cfg.crossover_p);
        const agent& src = from_a ? a : b;
        for (const std::string& id : e.block_ids) {
            if (id.ends_with(":bn_m") || id.ends_with(":bn_v")) continue; // stats re-estimated
            detail::copy_block(child.net, src.net, id);
        }
        out.crossover_log.push_back({0, e.addr.str(), from_a ? "A" : "B", e.addr.str()});
    }

    auto mlog = detail::mutate_network(manifest, child.net, cfg,
                                       derive_seed(cfg.seed, "mutation", 0), 0);
    out.mutation_log.insert(out.mutation_log.end(), mlog.begin(), mlog.end());
    out.children.push_back(std::move(child));
    return out;
}

// Cross-archetype marriage: both children start from their own parent; each
// matched module pair is exchanged independently per child with probability
// crossover_p. FC heads are reinitialized, batch-norm statistics reset.
inline marriage_outcome inter_marry(const agent& a, const agent& b, const marriage_config& cfg) {
    cfg.validate();
    if (a.kind == b.kind)
        throw marriage_error("inter-marriage requires distinct archetypes (use intra_marry)");
    if (a.width != b.width) throw marriage_error("inter-marriage requires equal widths");

    const archetype_spec spec_a = a.spec();
    const archetype_spec spec_b = b.spec();
    const auto built_a = build_with_manifest<float>(spec_a, 0, false);
    const auto built_b = build_with_manifest<float>(spec_b, 0, false);
    const module_manifest& man_a = built_a.manifest;
    const module_manifest& man_b = built_b.manifest;

    marriage_outcome out;
    out.kind = "inter";
    out.event_hash = fnv1a64(a.id + "|" + b.id + "|inter", mix_seed(cfg.seed, 0x17));

    auto make_child = [&](const agent& own, int idx) {
        agent c;
        c.kind = own.kind;
        c.width = own.width;
        c.seed = derive_seed(cfg.seed, "child", std::uint64_t(idx));
        c.status = agent_status::child;
        c.id = agent_id(c.kind, c.seed, mix_seed(out.event_hash, std::uint64_t(idx)));
        c.net = own.net; // start as a copy of the own-parent
        // fresh task memory: reinitialize every FC block from the child's seed
        auto fresh = build_with_manifest<float>(own.spec(), c.seed);
        for (const fc_entry& f :
             (own.kind == a.kind ? man_a : man_b).fc_blocks)
            for (const std::string& id : f.block_ids) detail::copy_block(c.net, fresh.net, id);
        detail::reset_bn_stats(c.net);
        return c;
    };
    agent child_a = make_child(a, 0);
    agent child_b = make_child(b, 1);

    // every module starts as kept-from-own-parent; exchanges refine the log
    std::vector<std::vector<crossover_record>> log_a(man_a.conv_modules.size());
    std::vector<std::vector<crossover_record>> log_b(man_b.conv_modules.size());

    const auto matching = detail::canonical_matching(spec_a, man_a, spec_b, man_b);
    rng cross(derive_seed(cfg.seed, "crossover"));

    auto exchange = [](network<float>& dst, const detail::pair_unit& dst_unit,
                       const network<float>& src, const detail::pair_unit& src_unit) {
        for (std::size_t i = 0; i < dst_unit.conv_ids.size(); ++i)
            dst.block(dst_unit.conv_ids[i]).values = src.block(src_unit.conv_ids[i]).values;
        if (!dst_unit.norm_ids.empty()) {
            if (!src_unit.norm_ids.empty()) {
                for (std::size_t i = 0; i < dst_unit.norm_ids.size(); ++i)
                    dst.block(dst_unit.norm_ids[i]).values =
                        src.block(src_unit.norm_ids[i]).values;
            } else {
                // incoming knowledge carries no normalization: identity scale/shift
                dst.block(dst_unit.norm_ids[0]).values.fill(1.0f);
                dst.block(dst_unit.norm_ids[1]).values.fill(0.0f);
            }
        }
    };

    for (const auto& m : matching) {
        const bool swap_a = cross.bernoulli(cfg.crossover_p);
        const bool swap_b = cross.bernoulli(cfg.crossover_p);
        if (swap_a) {
            exchange(child_a.net, m.a, b.net, m.b);
            log_a[m.a.manifest_pos].push_back({0, m.a.addr.str(), "B", m.b.addr.str()});
        }
        if (swap_b) {
            exchange(child_b.net, m.b, a.net, m.a);
            log_b[m.b.manifest_pos].push_back({1, m.b.addr.str(), "A", m.a.addr.str()});
        }
    }

    auto finalize_log = [&](const module_manifest& man, const archetype_spec& spec,
                            std::vector<std::vector<crossover_record>>& partial, int idx,
                            const char* own) {
        const auto units = detail::pair_units(spec, man);
        for (std::size_t mi = 0; mi < man.conv_modules.size(); ++mi) {
            const auto& e = man.conv_modules[mi];
            if (partial[mi].empty()) {
                out.crossover_log.push_back({idx, e.addr.str(), own, e.addr.str()});
                continue;
            }
            // exchanged sub-blocks logged individually, kept siblings as own
            for (const auto& u : units) {
                if (u.manifest_pos != static_cast<int>(mi)) continue;
                bool exchanged = false;
                for (const auto& r : partial[mi])
                    if (r.address == u.addr.str()) {
                        out.crossover_log.push_back(r);
                        exchanged = true;
                        break;
                    }
                if (!exchanged)
                    out.crossover_log.push_back({idx, u.addr.str(), own, u.addr.str()});
            }
        }
    };
    finalize_log(man_a, spec_a, log_a, 0, "A");
    finalize_log(man_b, spec_b, log_b, 1, "B");

    auto ml_a = detail::mutate_network(man_a, child_a.net, cfg,
                                       derive_seed(cfg.seed, "mutation", 0), 0);
    auto ml_b = detail::mutate_network(man_b, child_b.net, cfg,
                                       derive_seed(cfg.seed, "mutation", 1), 1);
    out.mutation_log.insert(out.mutation_log.end(), ml_a.begin(), ml_a.end());
    out.mutation_log.insert(out.mutation_log.end(), ml_b.begin(), ml_b.end());

    out.children.push_back(std::move(child_a));
    out.children.push_back(std::move(child_b));
    return out;
}

} // namespace colony
