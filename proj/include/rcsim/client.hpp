// Client agents: open-loop transaction generation, timeout-driven retry to
// additional SLs, and commit-proof verification.
#pragma once

#include <map>

#include "rcsim/node.hpp"
#include "rcsim/world.hpp"

namespace rcsim {

class ClientAgent : public Actor {
public:
    ClientAgent(World& world, std::uint32_t index)
        : w(world), idx(index), self(world.topo.client_id(index)) {
        // clients spread round-robin over SLs; the closest SL's first node is
        // the primary target
        std::uint32_t total_sls = w.topo.bgs * w.topo.sls_per_bg;
        home_sl = idx % total_sls;
        home_bg = w.topo.bg_of_sl(home_sl);
        home_node = w.topo.nodes_of_sl(home_sl).front();
    }

    void boot() {
        Tick first = 5 + w.engine.rng().uniform(0, w.client_spec.mean_gap);
        w.engine.schedule_timer(self, first, TClientGen);
    }

    World& w;
    const std::uint32_t idx;
    const NodeId self;
    SlId home_sl = 0;
    BgId home_bg = 0;
    NodeId home_node = 0;

    struct TxRecord {
        ClientTx tx;
        Tick submitted = 0;
        std::uint32_t retries = 0;
        bool proven = false;
    };
    std::map<std::uint64_t, TxRecord> txs;
    std::uint64_t next_tx_id = 1;
    std::uint64_t proofs_ok = 0;
    std::uint64_t proofs_bad = 0;
    Digest last_seen_root;

    bool bias() const { return w.flags(self).bias_tx_numbering; }
    bool equivocate() const { return w.flags(self).client_equivocate; }

    void on_timer(const Timer& t) override {
        if (t.kind == TClientGen) {
            generate();
            Tick gap = 1 + w.engine.rng().uniform(w.client_spec.mean_gap / 2,
                                                  3 * w.client_spec.mean_gap / 2);
            w.engine.schedule_timer(self, w.engine.now() + gap, TClientGen);
        } else if (t.kind == TClientTimeout) {
            retry(t.a);
        }
    }

    void generate() {
        TxRecord rec;
        rec.tx.client_id = self;
        rec.tx.tx_id = next_tx_id++;
        for (auto& b : rec.tx.nonce) b = static_cast<std::uint8_t>(w.engine.rng().uniform(0, 255));
        rec.tx.payload = make_payload(rec.tx.tx_id);
        rec.tx.sig = default_provider().sign(
            w.key_of(self),
            ClientTx::signing_digest(rec.tx.tx_id, rec.tx.nonce, rec.tx.payload));
        rec.submitted = w.engine.now();
        w.send(self, home_node, wrap(rec.tx));
        w.emit("tx_submit", self, {{"tx", rec.tx.tx_id}});
        if (equivocate()) {
            // same nonce, different payload to a different SL: recipients
            // flag the client as malicious
            ClientTx other = rec.tx;
            other.payload.push_back(0xEE);
            other.sig = default_provider().sign(
                w.key_of(self), ClientTx::signing_digest(other.tx_id, other.nonce, other.payload));
            SlId alt = w.topo.sl_index(home_bg, (home_sl % w.topo.sls_per_bg + 1) % w.topo.sls_per_bg);
            w.send(self, w.topo.nodes_of_sl(alt).front(), wrap(other));
        }
        w.engine.schedule_timer(self, w.engine.now() + w.timing.client_timeout(), TClientTimeout,
                                rec.tx.tx_id);
        txs[rec.tx.tx_id] = std::move(rec);
    }

    Bytes make_payload(std::uint64_t tx_id) {
        Bytes p(w.client_spec.payload_bytes);
        if (bias()) {
            // adversarial numbering: extrapolate from the last observed
            // committed root, hoping to steer the block's position
            ByteWriter bw;
            bw.str("steer");
            bw.fixed(last_seen_root.bytes);
            bw.u64(tx_id);
            auto d = hash_bytes(bw.bytes());
            for (std::size_t i = 0; i < p.size(); ++i) p[i] = d.bytes[i % 32];
        } else {
            for (auto& b : p) b = static_cast<std::uint8_t>(w.engine.rng().uniform(0, 255));
        }
        return p;
    }

    MessagePtr wrap(const ClientTx& tx) {
        auto msg = std::make_shared<MsgClientSubmit>();
        msg->tx = tx;
        return msg;
    }

    void retry(std::uint64_t tx_id) {
        auto it = txs.find(tx_id);
        if (it == txs.end() || it->second.proven) return;
        auto& rec = it->second;
        ++rec.retries;
        // f_i additional distinct SLs of the same BG (the first retry); later
        // rounds keep rotating in case the order stays silent
        std::uint32_t extra = w.topo.f_i;
        std::uint32_t others = w.topo.sls_per_bg - 1;
        if (others < extra) {
            w.emit("tx_degraded", self, {{"tx", tx_id}});
            extra = others;
        }
        for (std::uint32_t i = 0; i < extra; ++i) {
            std::uint32_t local = (home_sl % w.topo.sls_per_bg + 1 + i + (rec.retries - 1) * extra) %
                                  w.topo.sls_per_bg;
            SlId target_sl = w.topo.sl_index(home_bg, local);
            if (target_sl == home_sl) target_sl = w.topo.sl_index(home_bg, (local + 1) % w.topo.sls_per_bg);
            NodeId target = w.topo.nodes_of_sl(target_sl)[rec.retries % w.topo.nodes_per_sl];
            w.send(self, target, wrap(rec.tx));
        }
        w.emit("tx_retry", self, {{"tx", tx_id}, {"round", rec.retries}});
        w.engine.schedule_timer(self, w.engine.now() + 2 * w.timing.client_timeout(),
                                TClientTimeout, tx_id);
    }

    void on_message(const Envelope& env) override {
        const auto* pm = dynamic_cast<const ProtoMessage*>(env.payload.get());
        if (!pm || pm->kind != MsgKind::CommitProofMsg) return;
        const auto& msg = as<MsgCommitProof>(env);
        bool ok = verify_commit_proof(msg.proof, w.topo.bg_quorum(), w.directory);
        // proofs also bind to the issuing BG's nodes
        if (ok) {
            std::set<SlId> sls;
            for (const auto& sig : msg.proof.qc.signatures) {
                NodeId n = static_cast<NodeId>(sig.signer);
                if (!w.topo.is_protocol_node(n) || w.topo.bg_of(n) != msg.proof.qc.bg_id) {
                    ok = false;
                    break;
                }
                sls.insert(w.topo.sl_of(n));
            }
            if (ok && sls.size() < w.topo.bg_quorum()) ok = false;
        }
        if (!ok) {
            ++proofs_bad;
            w.emit("client_proof", self, {{"cycle", msg.cycle}, {"valid", false}});
            return;
        }
        ++proofs_ok;
        last_seen_root = msg.proof.qc.payload_root;
        // match the proof to a pending transaction by digest
        for (auto& [id, rec] : txs) {
            if (rec.proven || rec.tx.digest() != msg.proof.tx_digest) continue;
            rec.proven = true;
            w.emit("client_proof", self,
                   {{"cycle", msg.cycle}, {"valid", true}, {"tx", id}, {"latency", w.engine.now() - rec.submitted}});
            break;
        }
    }
};

}  // namespace rcsim
