// Intra-BG consensus helpers: the nonce dedup buffer and the deterministic
// aggregate construction/validation rules shared by coordinator and signers.
#pragma once

#include <map>
#include <set>
#include <vector>

#include "rcsim/bft.hpp"
#include "rcsim/config.hpp"
#include "rcsim/types.hpp"

namespace rcsim {

/// Buffers (client_id, nonce) digests of recently committed transactions.
/// Membership queries are exact within the retention window.
class DedupBuffer {
public:
    explicit DedupBuffer(std::uint32_t window = 8) : window_(window) {}

    void remember(const DedupKey& key, Cycle cycle) {
        auto [it, fresh] = recent_.emplace(key, cycle);
        if (!fresh && cycle < it->second) it->second = cycle;
    }

    void evict_before(Cycle cycle) {
        for (auto it = recent_.begin(); it != recent_.end();) {
            if (it->second + window_ < cycle)
                it = recent_.erase(it);
            else
                ++it;
        }
    }

    /// Releases a key whose cycle outcome ended up excluding it, so a client
    /// retry can land in a later cycle.
    void forget(const DedupKey& key, Cycle cycle) {
        auto it = recent_.find(key);
        if (it != recent_.end() && it->second == cycle) recent_.erase(it);
    }

    bool contains(const DedupKey& key) const { return recent_.count(key) != 0; }
    std::uint32_t window() const { return window_; }

private:
    std::uint32_t window_;
    std::map<DedupKey, Cycle> recent_;
};

/// Deterministic dedup over an aggregate: traverse SLs ascending, blocks and
/// transactions in order; drop a transaction if its (client, nonce) was seen
/// earlier in the traversal or sits in the committed-recently buffer. Empty
/// blocks vanish.
inline std::vector<SlContribution> dedup_contributions(std::vector<SlContribution> contribs,
                                                       const DedupBuffer& buffer) {
    std::sort(contribs.begin(), contribs.end(),
              [](const SlContribution& a, const SlContribution& b) { return a.sl_id < b.sl_id; });
    std::set<DedupKey> seen;
    std::vector<SlContribution> out;
    for (auto& c : contribs) {
        SlContribution kept;
        kept.sl_id = c.sl_id;
        for (auto& tb : c.tbs) {
            TransactionBlock ktb;
            ktb.origin_node = tb.origin_node;
            ktb.cycle = tb.cycle;
            for (auto& tx : tb.txs) {
                auto key = tx.dedup_key();
                if (buffer.contains(key) || !seen.insert(key).second) continue;
                ktb.txs.push_back(tx);
            }
            if (!ktb.txs.empty()) kept.tbs.push_back(std::move(ktb));
        }
        out.push_back(std::move(kept));
    }
    return out;
}

struct AggregateCheck {
    bool ok = false;
    const char* why = "";
};

/// Signer-side validation of a proposed decision. `my_contribution` is the
/// signer's own sealed input for the cycle if it sent one in time.
inline AggregateCheck validate_aggregate(const BgDecision& d, BgId bg, Cycle cycle,
                                         const SlContribution* my_contribution,
                                         const DedupBuffer& buffer, const KeyDirectory& dir,
                                         const std::set<Cycle>& own_declared_seeks,
                                         std::uint32_t pipeline_k) {
    if (d.bg_id != bg || d.cycle != cycle) return {false, "scope mismatch"};
    std::set<DedupKey> seen;
    SlId prev_sl = 0;
    bool first = true;
    for (const auto& c : d.contributions) {
        if (!first && c.sl_id <= prev_sl) return {false, "unsorted contributions"};
        prev_sl = c.sl_id;
        first = false;
        for (const auto& tb : c.tbs) {
            if (tb.txs.empty()) return {false, "empty block"};
            for (const auto& tx : tb.txs) {
                if (!tx.verify(dir)) return {false, "bad client signature"};
                if (buffer.contains(tx.dedup_key())) return {false, "recently committed nonce"};
                if (!seen.insert(tx.dedup_key()).second) return {false, "duplicate nonce"};
            }
        }
    }
    if (my_contribution) {
        // own input must appear, post-dedup: every surviving key of ours must
        // match, and our slot must not be silently dropped
        bool found = false;
        for (const auto& c : d.contributions) {
            if (c.sl_id != my_contribution->sl_id) continue;
            found = true;
        }
        if (!found && !my_contribution->tbs.empty()) return {false, "own contribution omitted"};
    }
    for (const auto& m : d.metas) {
        Cycle about = m.about_cycle;
        if (about + pipeline_k != cycle) return {false, "meta for wrong slot"};
        switch (m.flavor) {
            case MetaFlavor::NoAsst:
                if (own_declared_seeks.count(about)) return {false, "no_asst after seek"};
                break;
            case MetaFlavor::Assisted:
                if (!m.reply || m.reply->cycle != about) return {false, "assisted without reply"};
                break;
            case MetaFlavor::Denied:
                if (!m.deny || m.deny->cycle != about) return {false, "denied without deny"};
                break;
            case MetaFlavor::Pending:
                break;
        }
    }
    return {true, ""};
}

/// BG-level QC check: beyond the signature math, signers must map to enough
/// distinct SLs of the issuing BG (a Byzantine SL's three node keys count
/// once).
inline bool verify_bg_qc(const QuorumCertificate& qc, BgId bg, Cycle cycle, std::uint32_t quorum,
                         const KeyDirectory& dir, const Topology& topo,
                         const SignatureProvider& prov = default_provider()) {
    if (!qc_verify(qc, quorum, dir, bg, cycle, prov)) return false;
    std::set<SlId> sls;
    for (const auto& sig : qc.signatures) {
        auto node = static_cast<NodeId>(sig.signer);
        if (!topo.is_protocol_node(node) || topo.bg_of(node) != bg) return false;
        sls.insert(topo.sl_of(node));
    }
    return sls.size() >= quorum;
}

}  // namespace rcsim
