// Builds a world from a scenario, injects the fault schedule, runs the
// engine to the horizon and hands the trace to the verdict checks.
#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rcsim/client.hpp"
#include "rcsim/convergence.hpp"
#include "rcsim/node.hpp"
#include "rcsim/scenario.hpp"

namespace rcsim {

/// Expands an entity name ("bg:1", "sl:1.2", "node:1.2.0", "cm:1",
/// "clients") into concrete node ids. BG entities include the co-hosted CM
/// replica.
inline std::vector<NodeId> expand_entity(const Topology& topo, const std::string& name) {
    auto fail = [&]() -> std::vector<NodeId> {
        throw ConfigError("unknown entity: " + name);
    };
    auto colon = name.find(':');
    if (colon == std::string::npos) return fail();
    std::string kind = name.substr(0, colon);
    std::string rest = name.substr(colon + 1);
    auto parse_parts = [&](std::size_t n) {
        std::vector<std::uint32_t> parts;
        std::stringstream ss(rest);
        std::string tok;
        while (std::getline(ss, tok, '.')) parts.push_back(std::stoul(tok));
        if (parts.size() != n) fail();
        return parts;
    };
    std::vector<NodeId> out;
    if (kind == "bg") {
        auto p = parse_parts(1);
        for (NodeId n : topo.nodes_of_bg(p[0])) out.push_back(n);
        out.push_back(topo.cm_node_id(p[0]));
    } else if (kind == "sl") {
        auto p = parse_parts(2);
        for (NodeId n : topo.nodes_of_sl(topo.sl_index(p[0], p[1]))) out.push_back(n);
    } else if (kind == "node") {
        auto p = parse_parts(3);
        out.push_back(topo.node_id(p[0], p[1], p[2]));
    } else if (kind == "cm") {
        auto p = parse_parts(1);
        out.push_back(topo.cm_node_id(p[0]));
    } else {
        fail();
    }
    return out;
}

struct RunResult {
    Digest trace_digest;
    std::uint64_t commits = 0;
    bool finished = false;
};

class Runner : public Actor {
public:
    explicit Runner(Scenario sc)
        : scenario(std::move(sc)),
          world(scenario.topo, scenario.timing, scenario.policy, scenario.clients, scenario.seed) {
        fault_actor_id = world.topo.client_id(world.client_spec.count) + 1;
    }

    Scenario scenario;
    World world;
    std::vector<std::unique_ptr<Node>> nodes;
    std::vector<std::unique_ptr<CmNode>> cms;
    std::vector<std::unique_ptr<ClientAgent>> clients;
    NodeId fault_actor_id = 0;
    std::set<NodeId> killed;
    // F16 triggers: bg -> cycle to kill after
    std::map<BgId, Cycle> kill_after_complete;
    std::set<BgId> kill_done;
    std::map<BgId, Tick> join_at;

    void build() {
        for (const auto& f : scenario.faults)
            if (f.cls == "JOIN") world.dormant_bgs.insert(f.bg);
        for (NodeId id = 0; id < world.topo.protocol_nodes(); ++id) {
            nodes.push_back(std::make_unique<Node>(world, id));
            world.engine.register_actor(id, nodes.back().get());
        }
        for (BgId b = 0; b < world.topo.bgs; ++b) {
            cms.push_back(std::make_unique<CmNode>(world, b));
            world.engine.register_actor(world.topo.cm_node_id(b), cms.back().get());
        }
        for (std::uint32_t c = 0; c < world.client_spec.count; ++c) {
            clients.push_back(std::make_unique<ClientAgent>(world, c));
            world.engine.register_actor(world.topo.client_id(c), clients.back().get());
        }
        world.engine.register_actor(fault_actor_id, this);
        world.on_bg_complete = [this](BgId b, Cycle c) { on_complete_hook(b, c); };
        schedule_faults();
    }

    void run() {
        if (nodes.empty()) build();
        for (auto& n : nodes) n->boot();
        for (auto& c : cms) c->boot();
        for (auto& c : clients) c->boot();
        world.engine.run_until(scenario.duration);
    }

    RunResult result() const {
        RunResult r;
        r.trace_digest = world.trace.digest();
        for (const auto& e : world.trace.events())
            if (e.kind == "commit") ++r.commits;
        r.finished = true;
        return r;
    }

    // ------------------------------------------------------------------

    void schedule_faults() {
        for (std::size_t i = 0; i < scenario.faults.size(); ++i) {
            const auto& f = scenario.faults[i];
            if (f.cls == "F16") {
                kill_after_complete[f.bg] = f.trigger_cycle;
                continue;
            }
            if (f.cls == "JOIN") {
                join_at[f.bg] = f.at;
                world.engine.schedule_timer(fault_actor_id, std::max<Tick>(f.at, 1), 1, i);
                continue;
            }
            world.engine.schedule_timer(fault_actor_id, std::max<Tick>(f.at, 1), 1, i);
            if (is_partition(f.cls)) {
                std::vector<std::vector<NodeId>> groups;
                for (const auto& comp : partition_components(f)) groups.push_back(comp);
                world.engine.set_partition(groups, f.at, f.until);
            }
        }
    }

    static bool is_partition(const std::string& cls) {
        return cls == "F10" || cls == "F13" || cls == "F15";
    }

    std::vector<std::vector<NodeId>> partition_components(const FaultSpec& f) const {
        std::vector<std::vector<NodeId>> groups;
        if (!f.components.empty()) {
            for (const auto& comp : f.components) {
                std::vector<NodeId> g;
                for (const auto& name : comp)
                    for (NodeId n : expand_entity(world.topo, name)) g.push_back(n);
                groups.push_back(std::move(g));
            }
            return groups;
        }
        // defaults per class
        if (f.cls == "F10") {
            // split the SL: minority = its last node
            auto members = world.topo.nodes_of_sl(world.topo.sl_index(f.bg, f.sl));
            std::vector<NodeId> minority = {members.back()};
            members.pop_back();
            groups.push_back(members);
            groups.push_back(minority);
        } else if (f.cls == "F13") {
            // split the BG: minority = its last SL
            std::vector<NodeId> majority, minority;
            for (std::uint32_t s = 0; s < world.topo.sls_per_bg; ++s) {
                auto nodes_s = world.topo.nodes_of_sl(world.topo.sl_index(f.bg, s));
                auto& side = (s + 1 == world.topo.sls_per_bg) ? minority : majority;
                side.insert(side.end(), nodes_s.begin(), nodes_s.end());
            }
            groups.push_back(majority);
            groups.push_back(minority);
        } else if (f.cls == "F15") {
            // split the system: minority = the named BG (plus its CM replica)
            std::vector<NodeId> minority;
            for (NodeId n : world.topo.nodes_of_bg(f.bg)) minority.push_back(n);
            minority.push_back(world.topo.cm_node_id(f.bg));
            groups.push_back(minority);
        }
        return groups;
    }

    void on_timer(const Timer& t) override {
        apply_fault(scenario.faults.at(t.a));
    }

    void on_message(const Envelope&) override {}

    void apply_fault(const FaultSpec& f) {
        auto kill_node = [&](NodeId n) {
            if (!killed.insert(n).second) return;
            world.engine.kill(n);
            world.emit("node_dead", n, {{"class", f.cls}});
        };
        NodeId target = world.topo.node_id(f.bg, f.sl, f.node);
        if (f.cls == "F1" || f.cls == "F2" || f.cls == "F3" || f.cls == "F4" || f.cls == "F14") {
            kill_node(target);
        } else if (f.cls == "F5") {
            set_sl_flags(f, [](ByzFlags& b) { b.bias_tx_numbering = true; });
            // the attacker's client: any client homed on this SL steers its
            // payloads
            for (std::uint32_t c = 0; c < world.client_spec.count; ++c) {
                std::uint32_t total = world.topo.bgs * world.topo.sls_per_bg;
                if (c % total == world.topo.sl_index(f.bg, f.sl))
                    world.byz[world.topo.client_id(c)].bias_tx_numbering = true;
            }
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", "bias_tx_numbering"}});
        } else if (f.cls == "F6") {
            set_sl_flags(f, [](ByzFlags& b) { b.silent_emulator = true; });
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", "silent_emulator"}});
        } else if (f.cls == "F7") {
            set_sl_flags(f, [](ByzFlags& b) { b.ignore_client = true; });
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", "ignore_client"}});
        } else if (f.cls == "F8") {
            set_sl_flags(f, [](ByzFlags& b) { b.lie_in_response = true; });
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", "lie_in_response"}});
        } else if (f.cls == "F9") {
            // SL crash: kill a quorum of its nodes
            auto members = world.topo.nodes_of_sl(world.topo.sl_index(f.bg, f.sl));
            for (std::uint32_t i = 0; i < world.topo.sl_quorum(); ++i)
                kill_node(members[members.size() - 1 - i]);
        } else if (f.cls == "F11") {
            set_sl_flags(f, [](ByzFlags& b) {
                b.equivocate_state = true;
                b.lie_in_response = true;
            });
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", "equivocate_state"}});
        } else if (f.cls == "F12") {
            // BG crash: kill enough SLs to break the BG quorum
            std::uint32_t to_kill = world.topo.sls_per_bg - world.topo.bg_quorum() + 1;
            for (std::uint32_t s = 0; s < to_kill; ++s)
                for (NodeId n : world.topo.nodes_of_sl(
                         world.topo.sl_index(f.bg, world.topo.sls_per_bg - 1 - s)))
                    kill_node(n);
        } else if (f.cls == "F10" || f.cls == "F13" || f.cls == "F15") {
            world.emit("partition", fault_actor_id,
                       {{"class", f.cls}, {"until", f.until == kTickForever ? 0 : f.until}});
        } else if (f.cls == "JOIN") {
            world.dormant_bgs.erase(f.bg);
            for (NodeId n : world.topo.nodes_of_bg(f.bg)) {
                auto* node = nodes.at(n).get();
                node->activate();
            }
            world.emit("bg_join_start", fault_actor_id, {{"bg", f.bg}});
        } else if (f.cls == "BYZ") {
            // free-form behavior injection (assumption-breach scenarios)
            set_sl_flags(f, [&](ByzFlags& b) {
                if (f.behavior == "sign_everything") {
                    b.sign_everything = true;
                    b.equivocate_state = true;
                } else if (f.behavior == "equivocate_state") {
                    b.equivocate_state = true;
                } else if (f.behavior == "omit_transactions") {
                    b.omit_transactions = true;
                } else if (f.behavior == "silent_emulator") {
                    b.silent_emulator = true;
                } else if (f.behavior == "lie_in_response") {
                    b.lie_in_response = true;
                } else if (f.behavior == "client_equivocate") {
                    for (std::uint32_t c = 0; c < world.client_spec.count; ++c) {
                        std::uint32_t total = world.topo.bgs * world.topo.sls_per_bg;
                        if (c % total == world.topo.sl_index(f.bg, f.sl))
                            world.byz[world.topo.client_id(c)].client_equivocate = true;
                    }
                }
            });
            world.emit("byz", fault_actor_id, {{"class", f.cls}, {"behavior", f.behavior}});
        }
    }

    template <typename Fn>
    void set_sl_flags(const FaultSpec& f, Fn&& fn) {
        for (NodeId n : world.topo.nodes_of_sl(world.topo.sl_index(f.bg, f.sl)))
            fn(world.byz[n]);
    }

    void on_complete_hook(BgId b, Cycle c) {
        auto it = kill_after_complete.find(b);
        if (it == kill_after_complete.end() || c < it->second || kill_done.count(b)) return;
        kill_done.insert(b);
        for (NodeId n : world.topo.nodes_of_bg(b)) {
            killed.insert(n);
            world.engine.kill(n);
        }
        world.engine.kill(world.topo.cm_node_id(b));
        world.emit("early_exit_kill", fault_actor_id, {{"bg", b}, {"after_cycle", c}});
    }

    /// Honest protocol nodes (excludes Byzantine-flagged and killed ones).
    std::set<NodeId> honest_nodes() const {
        std::set<NodeId> out;
        for (NodeId id = 0; id < world.topo.protocol_nodes(); ++id) {
            if (killed.count(id)) continue;
            if (world.is_byzantine(id)) continue;
            out.insert(id);
        }
        return out;
    }
};

}  // namespace rcsim
