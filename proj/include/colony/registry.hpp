#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "colony/agent.hpp"
#include "colony/archetype.hpp"
#include "colony/error.hpp"
#include "colony/marriage.hpp"
#include "colony/rng.hpp"

namespace colony {

inline constexpr int colony_format_version = 1;

struct family_record {
    int p = 0, q = 0, r = 0; // parent-1, parent-2, child model type codes
    std::int64_t s = 0;      // data size (images)
    int t = 0;               // training duration (epochs)
    std::string child_id;
    std::string event_id;
};

inline void validate_family_record(const family_record& f) {
    if (f.r != f.p && f.r != f.q)
        throw registry_error("family record child type " + std::to_string(f.r) +
                             " is neither parent type (" + std::to_string(f.p) + "," +
                             std::to_string(f.q) + ")");
    if (f.s < 1) throw registry_error("family record data size must be >= 1");
    if (f.t < 1) throw registry_error("family record epochs must be >= 1");
}

struct lineage_edge {
    std::string parent_id;
    std::string child_id;
    std::string event_id;
};

struct lineage_entry {
    std::string agent_id;
    std::string event_id; // marriage that produced the agent; empty for founders
};

struct marriage_event {
    std::string event_id;
    std::string parent_a, parent_b;
    std::vector<std::string> children;
    std::string kind;
    std::int64_t s = 0;
    int t = 0;
    std::vector<crossover_record> crossover;
    std::vector<mutation_record> mutation;
};

struct task_spec {
    std::string task_id;
    std::string dataset_ref;
    int class_count = 10;
};

inline void validate_task(const task_spec& t) {
    if (t.class_count < 2) throw registry_error("task class count must be >= 2");
}

namespace detail {

inline std::string hex64(std::uint64_t v, int digits = 16) {
    static const char* hx = "0123456789abcdef";
    std::string s(static_cast<std::size_t>(digits), '0');
    for (int i = digits - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hx[v & 0xf];
        v >>= 4;
    }
    return s;
}

// weight store codec: magic "CWB1", u32 block count, then per block
// u32 id length + bytes, u32 dim count, u32 dims, raw f32 little-endian.
inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    b[0] = char(v & 0xff);
    b[1] = char((v >> 8) & 0xff);
    b[2] = char((v >> 16) & 0xff);
    b[3] = char((v >> 24) & 0xff);
    out.append(b, 4);
}

struct byte_reader {
    const std::string& buf;
    std::size_t pos = 0;

    std::uint32_t u32(const char* what) {
        if (pos + 4 > buf.size())
            throw parse_error(pos, std::string("truncated weight file reading ") + what);
        std::uint32_t v = 0;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw parse_error(pos, std::string("truncated weight file reading ") + what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    void floats(float* dst, std::size_t n) {
        if (pos + n * 4 > buf.size())
            throw parse_error(pos, "truncated weight file reading block values");
        std::memcpy(dst, buf.data() + pos, n * 4);
        pos += n * 4;
    }
};

inline std::string encode_weights(const network<float>& net) {
    std::string out = "CWB1";
    put_u32(out, static_cast<std::uint32_t>(net.blocks().size()));
    for (const auto& blk : net.blocks()) {
        put_u32(out, static_cast<std::uint32_t>(blk.id.size()));
        out += blk.id;
        const auto& sh = blk.values.shape();
        put_u32(out, static_cast<std::uint32_t>(sh.size()));
        for (int d : sh) put_u32(out, static_cast<std::uint32_t>(d));
        const std::size_t n = blk.values.numel();
        const std::size_t off = out.size();
        out.resize(off + n * 4);
        std::memcpy(out.data() + off, blk.values.data(), n * 4);
    }
    return out;
}

inline void decode_weights_into(const std::string& buf, network<float>& net) {
    byte_reader rd{buf};
    if (rd.bytes(4, "magic") != "CWB1") throw parse_error(0, "bad weight file magic (want CWB1)");
    const std::uint32_t count = rd.u32("block count");
    if (count != net.blocks().size())
        throw parse_error(4, "weight file holds " + std::to_string(count) + " blocks, network has " +
                                 std::to_string(net.blocks().size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t idlen = rd.u32("id length");
        const std::size_t id_at = rd.pos;
        const std::string id = rd.bytes(idlen, "block id");
        if (!net.has_block(id)) throw parse_error(id_at, "unknown block id '" + id + "'");
        auto& blk = net.block(id);
        const std::uint32_t nd = rd.u32("dim count");
        std::vector<int> dims(nd);
        for (auto& d : dims) d = static_cast<int>(rd.u32("dim"));
        if (dims != blk.values.shape())
            throw parse_error(id_at, "shape mismatch for block '" + id + "'");
        rd.floats(blk.values.data(), blk.values.numel());
    }
    if (rd.pos != buf.size()) throw parse_error(rd.pos, "trailing bytes after last block");
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("short write to " + p.string());
}

} // namespace detail

// The colony: agents, tasks, family records, the lineage DAG, marriage event
// logs, and their durable form (manifest.jsonl + weights/<hash>.cwb).
class registry {
public:
    agent& register_founder(learner_kind kind, double width, std::uint64_t seed) {
        agent a;
        a.kind = kind;
        a.width = width;
        a.seed = seed;
        a.status = agent_status::founder;
        const std::uint64_t h =
            mix_seed(fnv1a64(kind_name(kind)), mix_seed(seed, ++event_counter_));
        a.id = agent_id(kind, seed, h);
        a.net = build_network<float>(spec_for(kind, width), seed);
        return insert(std::move(a));
    }

    // Registers the outcome's children and records one family per child plus
    // the lineage edges and the crossover/mutation event log.
    std::vector<family_record> record_marriage(const std::string& parent_a,
                                               const std::string& parent_b,
                                               marriage_outcome outcome, std::int64_t s, int t) {
        const agent& pa = get(parent_a);
        const agent& pb = get(parent_b);
        marriage_event ev;
        ev.event_id = detail::hex64(mix_seed(outcome.event_hash, ++event_counter_));
        if (events_.count(ev.event_id)) throw registry_error("duplicate event id " + ev.event_id);
        ev.parent_a = parent_a;
        ev.parent_b = parent_b;
        ev.kind = outcome.kind;
        ev.s = s;
        ev.t = t;
        ev.crossover = std::move(outcome.crossover_log);
        ev.mutation = std::move(outcome.mutation_log);

        std::vector<family_record> records;
        for (agent& c : outcome.children) {
            family_record f;
            f.p = kind_code(pa.kind);
            f.q = kind_code(pb.kind);
            f.r = kind_code(c.kind);
            f.s = s;
            f.t = t;
            f.child_id = c.id;
            f.event_id = ev.event_id;
            validate_family_record(f);
            ev.children.push_back(c.id);
            insert(std::move(c));
            edges_.push_back({parent_a, f.child_id, ev.event_id});
            edges_.push_back({parent_b, f.child_id, ev.event_id});
            families_.push_back(f);
            records.push_back(f);
        }
        events_order_.push_back(ev.event_id);
        events_[ev.event_id] = std::move(ev);
        return records;
    }

    bool has(const std::string& id) const { return index_.count(id) != 0; }

    const agent& get(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw registry_error("unknown agent id " + id);
        return agents_[it->second];
    }
    agent& get_mut(const std::string& id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw registry_error("unknown agent id " + id);
        return agents_[it->second];
    }

    const std::vector<agent>& agents() const { return agents_; }
    const std::vector<family_record>& families() const { return families_; }
    const std::vector<lineage_edge>& edges() const { return edges_; }
    const marriage_event& event(const std::string& id) const {
        auto it = events_.find(id);
        if (it == events_.end()) throw registry_error("unknown event id " + id);
        return it->second;
    }

    // Transitive ancestors of an agent (excluding itself), ancestors before
    // descendants.
    std::vector<lineage_entry> lineage_of(const std::string& id) const {
        get(id); // existence check
        std::unordered_map<std::string, std::vector<std::pair<std::string, std::string>>> parents;
        for (const auto& e : edges_) parents[e.child_id].push_back({e.parent_id, e.event_id});

        std::unordered_set<std::string> seen;
        std::vector<lineage_entry> out;
        auto visit = [&](auto&& self, const std::string& node) -> void {
            if (!seen.insert(node).second) return;
            std::string ev; // marriage event that produced the node; empty for founders
            auto it = parents.find(node);
            if (it != parents.end()) {
                for (const auto& [p, e] : it->second) self(self, p);
                ev = it->second.front().second;
            }
            out.push_back({node, ev});
        };
        auto it = parents.find(id);
        if (it != parents.end())
            for (const auto& [p, e] : it->second) visit(visit, p);
        return out;
    }

    void persist(const std::filesystem::path& dir) const {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(dir / "weights", ec);
        if (ec) throw io_error("cannot create " + (dir / "weights").string());

        std::string manifest;
        manifest += nlohmann::json{{"colony_format", colony_format_version}}.dump();
        manifest += "\n";
        for (const agent& a : agents_) {
            const std::string bytes = detail::encode_weights(a.net);
            const std::string hash = detail::hex64(fnv1a64(bytes));
            detail::write_file(dir / "weights" / (hash + ".cwb"), bytes);
            nlohmann::json jh = nlohmann::json::array();
            for (const auto& h : a.history)
                jh.push_back({{"task", h.task},
                              {"epochs", h.epochs},
                              {"data_size", h.data_size},
                              {"wall_seconds", h.wall_seconds}});
            manifest += nlohmann::json{{"type", "agent"},
                                       {"id", a.id},
                                       {"kind", kind_name(a.kind)},
                                       {"width", a.width},
                                       {"seed", a.seed},
                                       {"status", a.status == agent_status::founder ? "founder"
                                                                                    : "child"},
                                       {"history", jh},
                                       {"weights", hash}}
                            .dump();
            manifest += "\n";
        }
        for (const auto& f : families_) {
            manifest += nlohmann::json{{"type", "family"}, {"p", f.p},         {"q", f.q},
                                       {"r", f.r},         {"s", f.s},         {"t", f.t},
                                       {"child", f.child_id}, {"event", f.event_id}}
                            .dump();
            manifest += "\n";
        }
        for (const auto& e : edges_) {
            manifest += nlohmann::json{{"type", "edge"},
                                       {"parent", e.parent_id},
                                       {"child", e.child_id},
                                       {"event", e.event_id}}
                            .dump();
            manifest += "\n";
        }
        for (const auto& eid : events_order_) {
            const marriage_event& ev = events_.at(eid);
            nlohmann::json jc = nlohmann::json::array();
            for (const auto& c : ev.crossover)
                jc.push_back({{"child", c.child},
                              {"address", c.address},
                              {"source", c.source},
                              {"source_address", c.source_address}});
            nlohmann::json jm = nlohmann::json::array();
            for (const auto& m : ev.mutation)
                jm.push_back({{"child", m.child}, {"block", m.block_id}, {"count", m.perturbed}});
            manifest += nlohmann::json{{"type", "marriage"},
                                       {"event", ev.event_id},
                                       {"parents", {ev.parent_a, ev.parent_b}},
                                       {"children", ev.children},
                                       {"kind", ev.kind},
                                       {"s", ev.s},
                                       {"t", ev.t},
                                       {"crossover", jc},
                                       {"mutation", jm}}
                            .dump();
            manifest += "\n";
        }
        detail::write_file(dir / "manifest.jsonl", manifest);
    }

    static registry load(const std::filesystem::path& dir) {
        registry reg;
        const std::string manifest = detail::read_file(dir / "manifest.jsonl");
        std::size_t line_no = 0;
        std::size_t pos = 0;
        bool version_seen = false;
        while (pos < manifest.size()) {
            std::size_t end = manifest.find('\n', pos);
            if (end == std::string::npos) end = manifest.size();
            const std::string line = manifest.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw registry_error("manifest line " + std::to_string(line_no) +
                                     ": invalid JSON: " + e.what());
            }
            auto ctx = [&](const char* what) {
                return "manifest line " + std::to_string(line_no) + ": " + what;
            };
            try {
                if (line_no == 1) {
                    if (!j.contains("colony_format") ||
                        j["colony_format"].get<int>() != colony_format_version)
                        throw registry_error(ctx("unsupported or missing colony_format version"));
                    version_seen = true;
                    continue;
                }
                const std::string type = j.at("type").get<std::string>();
                if (type == "agent") {
                    agent a;
                    a.id = j.at("id").get<std::string>();
                    a.kind = kind_from_name(j.at("kind").get<std::string>());
                    a.width = j.at("width").get<double>();
                    a.seed = j.at("seed").get<std::uint64_t>();
                    a.status = j.at("status").get<std::string>() == "founder"
                                   ? agent_status::founder
                                   : agent_status::child;
                    for (const auto& h : j.at("history"))
                        a.history.push_back({h.at("task").get<std::string>(),
                                             h.at("epochs").get<int>(),
                                             h.at("data_size").get<std::int64_t>(),
                                             h.at("wall_seconds").get<double>()});
                    a.net = build_network<float>(spec_for(a.kind, a.width), a.seed);
                    const std::string hash = j.at("weights").get<std::string>();
                    const auto wpath = dir / "weights" / (hash + ".cwb");
                    const std::string bytes = detail::read_file(wpath);
                    if (detail::hex64(fnv1a64(bytes)) != hash)
                        throw registry_error("weight file " + wpath.string() +
                                             " does not match its content hash");
                    detail::decode_weights_into(bytes, a.net);
                    reg.insert(std::move(a));
                } else if (type == "family") {
                    family_record f{j.at("p").get<int>(),
                                    j.at("q").get<int>(),
                                    j.at("r").get<int>(),
                                    j.at("s").get<std::int64_t>(),
                                    j.at("t").get<int>(),
                                    j.at("child").get<std::string>(),
                                    j.at("event").get<std::string>()};
                    validate_family_record(f);
                    if (!reg.has(f.child_id)) throw registry_error(ctx("family child unknown"));
                    reg.families_.push_back(std::move(f));
                } else if (type == "edge") {
                    lineage_edge e{j.at("parent").get<std::string>(),
                                   j.at("child").get<std::string>(),
                                   j.at("event").get<std::string>()};
                    if (!reg.has(e.parent_id) || !reg.has(e.child_id))
                        throw registry_error(ctx("edge references unknown agent"));
                    reg.edges_.push_back(std::move(e));
                } else if (type == "marriage") {
                    marriage_event ev;
                    ev.event_id = j.at("event").get<std::string>();
                    ev.parent_a = j.at("parents").at(0).get<std::string>();
                    ev.parent_b = j.at("parents").at(1).get<std::string>();
                    for (const auto& c : j.at("children"))
                        ev.children.push_back(c.get<std::string>());
                    ev.kind = j.at("kind").get<std::string>();
                    ev.s = j.at("s").get<std::int64_t>();
                    ev.t = j.at("t").get<int>();
                    for (const auto& c : j.at("crossover"))
                        ev.crossover.push_back({c.at("child").get<int>(),
                                                c.at("address").get<std::string>(),
                                                c.at("source").get<std::string>(),
                                                c.at("source_address").get<std::string>()});
                    for (const auto& m : j.at("mutation"))
                        ev.mutation.push_back({m.at("child").get<int>(),
                                               m.at("block").get<std::string>(),
                                               m.at("count").get<std::uint64_t>()});
                    if (reg.events_.count(ev.event_id))
                        throw registry_error(ctx("duplicate event id"));
                    reg.events_order_.push_back(ev.event_id);
                    reg.events_[ev.event_id] = std::move(ev);
                } else {
                    throw registry_error(ctx("unknown record type"));
                }
            } catch (const nlohmann::json::exception& e) {
                throw registry_error(ctx(e.what()));
            }
        }
        if (!version_seen) throw registry_error("manifest is empty or missing the version record");
        reg.validate_dag();
        reg.event_counter_ = line_no; // keep ids fresh for post-load events
        return reg;
    }

private:
    agent& insert(agent&& a) {
        if (index_.count(a.id)) throw registry_error("duplicate agent id " + a.id);
        index_[a.id] = agents_.size();
        agents_.push_back(std::move(a));
        return agents_.back();
    }

    void validate_dag() const {
        std::unordered_map<std::string, int> indeg;
        for (const auto& e : edges_) ++indeg[e.child_id];
        for (const auto& [id, d] : indeg)
            if (d != 2)
                throw registry_error("agent " + id + " has in-degree " + std::to_string(d) +
                                     " (children need exactly two parents)");
        for (const agent& a : agents_)
            if (a.status == agent_status::child && !indeg.count(a.id))
                throw registry_error("child agent " + a.id + " has no lineage edges");
        // cycle check via repeated removal of roots
        std::unordered_map<std::string, std::vector<std::string>> down;
        std::unordered_map<std::string, int> deg;
        for (const agent& a : agents_) deg[a.id] = 0;
        for (const auto& e : edges_) {
            down[e.parent_id].push_back(e.child_id);
            ++deg[e.child_id];
        }
        std::vector<std::string> q;
        for (const auto& [id, d] : deg)
            if (d == 0) q.push_back(id);
        std::size_t done = 0;
        while (!q.empty()) {
            const std::string n = q.back();
            q.pop_back();
            ++done;
            for (const auto& c : down[n])
                if (--deg[c] == 0) q.push_back(c);
        }
        if (done != deg.size()) throw registry_error("lineage graph contains a cycle");
    }

    std::vector<agent> agents_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<family_record> families_;
    std::vector<lineage_edge> edges_;
    std::unordered_map<std::string, marriage_event> events_;
    std::vector<std::string> events_order_;
    std::uint64_t event_counter_ = 0;
};

} // namespace colony
