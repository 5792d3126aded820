// Protocol domain types: client transactions, transaction blocks, BG
// decisions and the convergence-module wire vocabulary. Everything hashes
// through a canonical serialization so roots and certificates are stable.
#pragma once

#include <array>
#include <limits>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "rcsim/certificates.hpp"
#include "rcsim/merkle.hpp"
#include "rcsim/signature.hpp"

namespace rcsim {

using SlId = std::uint32_t;  // global superleaf index

constexpr Cycle kCycleNone = std::numeric_limits<Cycle>::max();

// scope sentinels reusing the QuorumCertificate bg_id field
constexpr BgId kGlobalScope = 0xFFFFFFFFu;
constexpr BgId kCmScope = 0xFFFFFFFEu;

// ---------------------------------------------------------------------------
// client transactions

struct ClientTx {
    PrincipalId client_id = 0;
    std::uint64_t tx_id = 0;
    std::array<std::uint8_t, 16> nonce{};  // client-generated, 128-bit
    Bytes payload;
    Signature sig;  // over (tx_id, nonce, payload)

    static Digest signing_digest(std::uint64_t tx_id, const std::array<std::uint8_t, 16>& nonce,
                                 const Bytes& payload) {
        ByteWriter w;
        w.str("rcsim-tx");
        w.u64(tx_id);
        w.raw(nonce.data(), nonce.size());
        w.blob(payload);
        return hash_bytes(w.bytes());
    }

    Digest digest() const {
        ByteWriter w;
        w.u64(client_id);
        w.u64(tx_id);
        w.raw(nonce.data(), nonce.size());
        w.blob(payload);
        w.u64(sig.signer);
        w.fixed(sig.mac.bytes);
        return hash_bytes(w.bytes());
    }

    bool verify(const KeyDirectory& dir, const SignatureProvider& prov = default_provider()) const {
        if (sig.signer != client_id) return false;
        return prov.verify(dir, sig, signing_digest(tx_id, nonce, payload));
    }

    /// (client_id, nonce) globally identifies the logical transaction.
    std::pair<PrincipalId, std::array<std::uint8_t, 16>> dedup_key() const {
        return {client_id, nonce};
    }
};

using DedupKey = std::pair<PrincipalId, std::array<std::uint8_t, 16>>;

struct TransactionBlock {
    std::uint32_t origin_node = 0;
    Cycle cycle = 0;
    std::vector<ClientTx> txs;  // arrival order

    Digest root() const {
        std::vector<Digest> leaves;
        leaves.reserve(txs.size());
        for (const auto& tx : txs) leaves.push_back(tx.digest());
        return merkle_root(leaves);
    }
};

// ---------------------------------------------------------------------------
// convergence-module vocabulary (declared early: BG decisions embed metas)

struct BgReport {
    Cycle cycle = 0;
    BgId reporter = 0;
    Digest own_hash;                  // reporter's payload root for the cycle
    std::map<BgId, Digest> received;  // issuer -> payload root held by reporter
    bool complete = false;
    Signature reporter_sig;           // BG leader's signature over the content
    // present on assist requests: the certified seek-assistance commitment
    std::optional<QuorumCertificate> commitment;

    Digest content_digest() const {
        ByteWriter w;
        w.str("rcsim-bgreport");
        w.u64(cycle);
        w.u32(reporter);
        w.fixed(own_hash.bytes);
        w.u32(static_cast<std::uint32_t>(received.size()));
        for (const auto& [bg, h] : received) {
            w.u32(bg);
            w.fixed(h.bytes);
        }
        w.u8(complete ? 1 : 0);
        return hash_bytes(w.bytes());
    }
};

/// CM_REPLY: the certified outcome of a CM-assisted cycle.
struct CmReply {
    Cycle cycle = 0;
    std::map<BgId, Digest> committed;             // bg -> payload hash
    std::map<BgId, FailureCertificate> fn;        // excluded this cycle
    std::uint32_t exclusion_horizon = 0;          // extra cycles starting at C+k
    std::vector<std::pair<BgId, BgId>> edges;     // issuer -> holder, audit evidence
    std::vector<BgId> vertices;                   // BGs considered in the analysis
    std::vector<BgId> failed;                     // vertices excluded before analysis
    ValidityCertificate certification;

    Digest content_digest() const {
        ByteWriter w;
        w.str("rcsim-cmreply");
        w.u64(cycle);
        w.u32(static_cast<std::uint32_t>(committed.size()));
        for (const auto& [bg, h] : committed) {
            w.u32(bg);
            w.fixed(h.bytes);
        }
        w.u32(static_cast<std::uint32_t>(fn.size()));
        for (const auto& [bg, cert] : fn) {
            w.u32(bg);
            w.u32(static_cast<std::uint32_t>(cert.signatures.size()));
        }
        w.u32(exclusion_horizon);
        return hash_bytes(w.bytes());
    }
};

/// CM_DENY: certifies that a cycle is (and will remain) unassisted.
struct CmDeny {
    Cycle cycle = 0;
    ValidityCertificate certification;

    Digest content_digest() const {
        ByteWriter w;
        w.str("rcsim-cmdeny");
        w.u64(cycle);
        return hash_bytes(w.bytes());
    }
};

using CmReplyPtr = std::shared_ptr<const CmReply>;
using CmDenyPtr = std::shared_ptr<const CmDeny>;

enum class MetaFlavor : std::uint8_t { NoAsst = 0, Assisted = 1, Denied = 2, Pending = 3 };

inline const char* meta_flavor_name(MetaFlavor f) {
    switch (f) {
        case MetaFlavor::NoAsst: return "NO_ASST";
        case MetaFlavor::Assisted: return "ASSISTED";
        case MetaFlavor::Denied: return "DENIED";
        case MetaFlavor::Pending: return "PENDING";
    }
    return "?";
}

/// Meta-data about cycle `about_cycle`, carried inside the issuing BG's input
/// for a later cycle. The enclosing decision's quorum certificate certifies
/// the NoAsst commitment; Assisted/Denied carry the CM's certified message.
struct BgMeta {
    Cycle about_cycle = 0;
    MetaFlavor flavor = MetaFlavor::NoAsst;
    CmReplyPtr reply;  // for Assisted
    CmDenyPtr deny;    // for Denied

    Digest content_digest() const {
        ByteWriter w;
        w.str("rcsim-meta");
        w.u64(about_cycle);
        w.u8(static_cast<std::uint8_t>(flavor));
        if (reply) w.fixed(reply->content_digest().bytes);
        if (deny) w.fixed(deny->content_digest().bytes);
        return hash_bytes(w.bytes());
    }
};

// ---------------------------------------------------------------------------
// BG decisions

struct SlContribution {
    SlId sl_id = 0;
    std::vector<TransactionBlock> tbs;  // post-dedup, non-empty blocks only
};

/// One BG's agreed input for a cycle: the deduplicated transaction blocks of
/// its participating SLs plus any meta-data and membership notes. The payload
/// root is a Merkle root over the ordered TB roots with one trailing leaf
/// covering everything else, so commit proofs can branch to individual TBs.
struct BgDecision {
    BgId bg_id = 0;
    Cycle cycle = 0;
    std::vector<SlContribution> contributions;  // sorted by sl_id
    std::vector<BgMeta> metas;                  // sorted by about_cycle
    std::vector<SlId> readmitted_sls;           // SL rejoin announcements
    std::vector<Cycle> seek_cycles;             // certified seek-assistance declarations

    /// TB roots in committed order (ascending by root digest).
    std::vector<std::pair<Digest, const TransactionBlock*>> ordered_tbs() const {
        std::vector<std::pair<Digest, const TransactionBlock*>> blocks;
        for (const auto& c : contributions)
            for (const auto& tb : c.tbs) blocks.emplace_back(tb.root(), &tb);
        return order_blocks(std::move(blocks));
    }

    Digest extras_digest() const {
        ByteWriter w;
        w.str("rcsim-decision-extras");
        w.u32(bg_id);
        w.u64(cycle);
        w.u32(static_cast<std::uint32_t>(contributions.size()));
        for (const auto& c : contributions) w.u32(c.sl_id);
        w.u32(static_cast<std::uint32_t>(metas.size()));
        for (const auto& m : metas) w.fixed(m.content_digest().bytes);
        w.u32(static_cast<std::uint32_t>(readmitted_sls.size()));
        for (auto sl : readmitted_sls) w.u32(sl);
        w.u32(static_cast<std::uint32_t>(seek_cycles.size()));
        for (auto c : seek_cycles) w.u64(c);
        return hash_bytes(w.bytes());
    }

    /// Leaves: ordered TB roots, then the extras digest (so never empty).
    std::vector<Digest> payload_leaves() const {
        std::vector<Digest> leaves;
        for (const auto& [root, tb] : ordered_tbs()) leaves.push_back(root);
        leaves.push_back(extras_digest());
        return leaves;
    }

    Digest payload_root() const { return merkle_root(payload_leaves()); }
};

using BgDecisionPtr = std::shared_ptr<const BgDecision>;

struct CertifiedDecision {
    BgDecisionPtr decision;
    QuorumCertificate qc;
};

// ---------------------------------------------------------------------------
// commit proofs returned to clients

struct CommitProof {
    Digest tx_digest;
    MerkleProof tb_branch;       // tx leaf -> TB root
    Digest tb_root;
    MerkleProof payload_branch;  // TB-root leaf -> payload root
    QuorumCertificate qc;        // over (bg, cycle, payload root)
};

inline bool verify_commit_proof(const CommitProof& p, std::uint32_t bg_quorum_size,
                                const KeyDirectory& dir,
                                const SignatureProvider& prov = default_provider()) {
    if (!merkle_verify(p.tb_root, p.tx_digest, p.tb_branch)) return false;
    if (!merkle_verify(p.qc.payload_root, p.tb_root, p.payload_branch)) return false;
    return qc_verify(p.qc, bg_quorum_size, dir, p.qc.bg_id, p.qc.cycle, prov).ok;
}

// ---------------------------------------------------------------------------
// global membership service records

struct MembershipView {
    EpochId epoch = 0;
    Cycle first_cycle = 0;  // epoch covers cycles [first_cycle, ...)
    std::vector<BgId> bgs;  // sorted
    std::map<BgId, std::vector<NodeId>> emulators;
    std::map<BgId, std::uint32_t> quorum_sizes;
    Cycle committed_first = 0;  // cycle range certified committed by the prior epoch
    Cycle committed_last = 0;
    QuorumCertificate qc;  // leader signatures over the view content
    GlobalQuorumCertificate gqc;

    bool lists(BgId bg) const {
        return std::find(bgs.begin(), bgs.end(), bg) != bgs.end();
    }
};

struct ExclusionRecord {
    BgId excluded = 0;
    Cycle effective_cycle = 0;
    QuorumCertificate cert;  // leader signatures, bg_id = kGlobalScope

    static Digest statement_digest(BgId excluded, Cycle effective) {
        ByteWriter w;
        w.str("rcsim-exclusion");
        w.u32(excluded);
        w.u64(effective);
        return hash_bytes(w.bytes());
    }
};

}  // namespace rcsim
