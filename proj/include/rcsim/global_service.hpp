// Global membership service records and the BFT payloads the BG-leader tier
// agrees on: epoch views and the decision payloads wrapping them.
#pragma once

#include <memory>

#include "rcsim/bft.hpp"
#include "rcsim/types.hpp"

namespace rcsim {

inline Digest view_content_digest(const MembershipView& v) {
    ByteWriter w;
    w.str("rcsim-view");
    w.u64(v.epoch);
    w.u64(v.first_cycle);
    w.u32(static_cast<std::uint32_t>(v.bgs.size()));
    for (auto bg : v.bgs) w.u32(bg);
    w.u32(static_cast<std::uint32_t>(v.emulators.size()));
    for (const auto& [bg, ems] : v.emulators) {
        w.u32(bg);
        w.u32(static_cast<std::uint32_t>(ems.size()));
        for (auto n : ems) w.u32(n);
    }
    w.u32(static_cast<std::uint32_t>(v.quorum_sizes.size()));
    for (const auto& [bg, q] : v.quorum_sizes) {
        w.u32(bg);
        w.u32(q);
    }
    w.u64(v.committed_first);
    w.u64(v.committed_last);
    return hash_bytes(w.bytes());
}

/// Emulator list attestation: 2f_i+1 monitors of a BG vouch for the set.
struct EmulatorAttestation final : Message {
    EpochId epoch = 0;
    BgId bg = 0;
    std::vector<NodeId> emulators;
    std::vector<Signature> sigs;

    static Digest signing_digest(EpochId epoch, BgId bg, const std::vector<NodeId>& ems) {
        ByteWriter w;
        w.str("rcsim-emu-attest");
        w.u64(epoch);
        w.u32(bg);
        for (auto n : ems) w.u32(n);
        return hash_bytes(w.bytes());
    }
};

struct EpochPayload final : BftPayload {
    std::shared_ptr<MembershipView> view;  // certificates filled in post-decide
    Digest digest() const override { return view_content_digest(*view); }
};

/// Builds the exportable global quorum certificate from the decided epoch
/// instance: same signatures, canonical content.
inline GlobalQuorumCertificate make_gqc(const MembershipView& v, Cycle last_cycle,
                                        const QuorumCertificate& instance_qc) {
    GlobalQuorumCertificate g;
    g.epoch = v.epoch;
    g.participating_bgs = v.bgs;
    g.first_cycle = v.first_cycle;
    g.last_cycle = last_cycle;
    g.quorum_sizes = v.quorum_sizes;
    g.signatures = instance_qc.signatures;
    return g;
}

struct SyncCycle {
    Cycle cycle = 0;
    std::vector<CertifiedDecision> decisions;  // the cycle's included inputs
};

struct SyncPackage final : Message {
    std::vector<std::shared_ptr<const MembershipView>> missed_epochs;
    std::vector<SyncCycle> cycles;
};

struct MsgSyncWrapper final : ProtoMessage {
    MsgSyncWrapper() : ProtoMessage(MsgKind::SyncWrapper) {}
    std::shared_ptr<const SyncPackage> package;
};

}  // namespace rcsim
