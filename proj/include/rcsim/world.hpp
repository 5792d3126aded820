// Shared run environment: engine, configuration, key material, trace sink
// and fault flags. Actors send through here so link delays and tracing stay
// uniform.
#pragma once

#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "rcsim/config.hpp"
#include "rcsim/engine.hpp"
#include "rcsim/messages.hpp"
#include "rcsim/trace.hpp"

namespace rcsim {

struct ByzFlags {
    bool equivocate_state = false;
    bool omit_transactions = false;
    bool silent_emulator = false;
    bool lie_in_response = false;
    bool bias_tx_numbering = false;
    bool ignore_client = false;
    bool sign_everything = false;
    bool client_equivocate = false;  // client-side: same nonce, two payloads

    bool any() const {
        return equivocate_state || omit_transactions || silent_emulator || lie_in_response ||
               bias_tx_numbering || ignore_client || sign_everything || client_equivocate;
    }
};

class World {
public:
    Topology topo;
    Timing timing;
    Policy policy;
    CmParams cm;
    ClientSpec client_spec;
    std::uint64_t seed = 1;
    bool base_cm_mode = false;  // scripted/base protocol: CM decides every cycle

    SimEngine engine;
    KeyDirectory directory;
    Trace trace;
    DelayModel delays;
    std::map<NodeId, ByzFlags> byz;
    std::set<BgId> dormant_bgs;  // join at a later resynchronization

    World(const Topology& t, const Timing& tm, const Policy& p, const ClientSpec& cs,
          std::uint64_t seed_)
        : topo(t), timing(tm), policy(p), cm(CmParams::defaults_for(t.bgs)), client_spec(cs),
          seed(seed_), engine(seed_) {
        delays.delta = timing.delta;
        delays.delta_net_max = timing.delta_net_max;
        topo.validate();
        for (NodeId n = 0; n < topo.protocol_nodes() + topo.bgs; ++n) add_principal(n);
        for (std::uint32_t c = 0; c < client_spec.count; ++c) add_principal(topo.client_id(c));
    }

    const KeyPair& key_of(PrincipalId id) const { return keys_.at(id); }

    const ByzFlags& flags(NodeId id) const {
        static const ByzFlags none;
        auto it = byz.find(id);
        return it == byz.end() ? none : it->second;
    }

    bool is_byzantine(NodeId id) const { return flags(id).any(); }

    void send(NodeId src, NodeId dst, MessagePtr msg) {
        Tick delay;
        if (src == dst) {
            delay = 1;
        } else if (same_rack(src, dst)) {
            delay = delays.intra_sl(engine.rng());
        } else {
            delay = delays.remote(engine.rng());
        }
        engine.schedule_message(src, dst, std::move(msg), engine.now() + delay);
    }

    bool same_rack(NodeId a, NodeId b) const {
        return topo.is_protocol_node(a) && topo.is_protocol_node(b) &&
               topo.sl_of(a) == topo.sl_of(b);
    }

    std::string actor_name(NodeId id) const {
        std::ostringstream os;
        if (topo.is_protocol_node(id)) {
            os << "n" << topo.bg_of(id) << "." << (topo.sl_of(id) % topo.sls_per_bg) << "."
               << (id % topo.nodes_per_sl);
        } else if (topo.is_cm_node(id)) {
            os << "cm" << (id - topo.protocol_nodes());
        } else {
            os << "client" << (id - topo.protocol_nodes() - topo.bgs);
        }
        return os.str();
    }

    void emit(const std::string& kind, NodeId actor, ordered_json fields = {}) {
        trace.emit(engine.now(), kind, actor_name(actor), std::move(fields));
    }

    // harness hooks, resolved by the runner
    std::function<void(BgId bg, Cycle cycle)> on_bg_complete;  // e.g. F16 trigger

    /// The full order manifest is traced once per (cycle, digest).
    bool manifest_needed(Cycle c, const Digest& d) {
        return manifests_.insert({c, d.hex()}).second;
    }

private:
    std::set<std::pair<Cycle, std::string>> manifests_;
    void add_principal(PrincipalId id) {
        auto kp = derive_keypair(id, seed);
        keys_[id] = kp;
        directory.add(kp);
    }

    std::map<PrincipalId, KeyPair> keys_;
};

}  // namespace rcsim
