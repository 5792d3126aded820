// Wire messages. Dispatch is by enum kind; payload structs own their data.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rcsim/engine.hpp"
#include "rcsim/types.hpp"

namespace rcsim {

enum class MsgKind : std::uint16_t {
    // client <-> node
    ClientSubmit,
    CommitProofMsg,
    // intra-SL
    Heartbeat,
    SlbForward,
    SlbDeliver,
    RejoinRequest,
    RejoinGrant,
    SlReset,
    // generic BFT instance
    BftInput,
    BftSignReq,
    BftSignResp,
    BftDecide,
    BftNewView,
    // monitor-level votes
    ProbeReq,
    ProbeResp,
    RemovalProposal,
    RemovalVote,
    BgStatusQuery,
    BgStatusReply,
    // state exchange
    StateRequest,
    StateResponse,
    RelayQuery,
    RelayResponse,
    // global membership service
    MembershipQuery,
    MembershipReply,
    LeaderPing,
    LeaderPong,
    ExclusionPoll,
    ExclusionCycleReport,
    ExclusionSignReq,
    ExclusionSignResp,
    ExclusionAnnounce,
    EpochAnnounce,
    EmulatorAttestReq,
    EmulatorAttestResp,
    SlAnnounce,
    BgJoinRequest,
    SyncRequest,
    SyncResponse,
    SyncWrapper,
    // convergence module
    CmBgReport,
    CmReportQuery,
    CmSuspect,
    CmReportForward,
    CmReplyMsg,
    CmDenyMsg,
    CmOutcomeQuery,
    CmOutcomeReply,
    CmValiditySign,
    CmPing,
    CmPong,
};

struct ProtoMessage : Message {
    explicit ProtoMessage(MsgKind k) : kind(k) {}
    MsgKind kind;
};

template <typename T>
const T& as(const Envelope& env) {
    return static_cast<const T&>(*env.payload);
}

// ---- client ----

struct MsgClientSubmit final : ProtoMessage {
    MsgClientSubmit() : ProtoMessage(MsgKind::ClientSubmit) {}
    ClientTx tx;
};

struct MsgCommitProof final : ProtoMessage {
    MsgCommitProof() : ProtoMessage(MsgKind::CommitProofMsg) {}
    CommitProof proof;
    Cycle cycle = 0;
};

// ---- intra-SL ----

struct MsgHeartbeat final : ProtoMessage {
    MsgHeartbeat() : ProtoMessage(MsgKind::Heartbeat) {}
};

struct MsgSlbForward final : ProtoMessage {
    MsgSlbForward() : ProtoMessage(MsgKind::SlbForward) {}
    NodeId origin = 0;
    std::uint64_t origin_seq = 0;
    MessagePtr inner;
};

struct MsgSlbDeliver final : ProtoMessage {
    MsgSlbDeliver() : ProtoMessage(MsgKind::SlbDeliver) {}
    NodeId leader = 0;
    std::uint64_t seq = 0;
    NodeId origin = 0;
    std::uint64_t origin_seq = 0;
    MessagePtr inner;
};

struct MsgRejoinRequest final : ProtoMessage {
    MsgRejoinRequest() : ProtoMessage(MsgKind::RejoinRequest) {}
    NodeId node = 0;
};

struct MsgRejoinGrant final : ProtoMessage {
    MsgRejoinGrant() : ProtoMessage(MsgKind::RejoinGrant) {}
    NodeId node = 0;
    std::vector<CertifiedDecision> missed_decisions;
    Cycle resume_cycle = 0;
};

// intra-SL broadcast payloads (wrapped by SlbDeliver)

struct SlbTbShare final : Message {
    TransactionBlock tb;
};

struct SlbSeal final : Message {
    Cycle cycle = 0;
};

struct SlbFetchedState final : Message {
    BgId bg = 0;
    Cycle cycle = 0;
    CertifiedDecision state;
};

struct SlbRepStalled final : Message {
    Cycle cycle = 0;
    BgId bg = 0;
    NodeId rep = 0;
};

struct SlbDecisionShare final : Message {
    CertifiedDecision decision;
};

struct SlbReplyShare final : Message {
    CmReplyPtr reply;
};

struct SlbDenyShare final : Message {
    CmDenyPtr deny;
};

struct SlbReadmit final : Message {
    NodeId node = 0;
};

struct SlbExclusionShare final : Message {
    ExclusionRecord record;
};

struct SlbStallMarker final : Message {
    bool stalled = false;
};

struct SlbEpochShare final : Message {
    std::shared_ptr<const MembershipView> view;
};

// ---- generic single-shot BFT instance ----

struct BftPayload {
    virtual ~BftPayload() = default;
    virtual Digest digest() const = 0;
};
using BftPayloadPtr = std::shared_ptr<const BftPayload>;

struct DecisionPayload final : BftPayload {
    BgDecisionPtr decision;
    Digest digest() const override { return decision->payload_root(); }
};

struct StatementPayload final : BftPayload {
    std::string statement;  // canonical text of the agreed statement
    Digest extra;           // content hash (e.g. epoch record, CM command)
    Digest digest() const override {
        ByteWriter w;
        w.str("rcsim-statement");
        w.str(statement);
        w.fixed(extra.bytes);
        return hash_bytes(w.bytes());
    }
};

struct MsgBftInput final : ProtoMessage {
    MsgBftInput() : ProtoMessage(MsgKind::BftInput) {}
    std::string scope;
    std::uint32_t view = 0;
    SlId from_sl = 0;
    // cycle-instance inputs: the SL's sealed blocks plus flags
    std::vector<TransactionBlock> tbs;
    std::vector<Cycle> stalled_cycles;   // seek-assistance declarations
    std::vector<BgMeta> metas;           // resolved meta slots this SL vouches for
    std::vector<SlId> readmit_sls;
    // non-cycle instances attach their input here (e.g. emulator attestations)
    std::shared_ptr<const Message> extra;
};

struct MsgBftSignReq final : ProtoMessage {
    MsgBftSignReq() : ProtoMessage(MsgKind::BftSignReq) {}
    std::string scope;
    std::uint32_t view = 0;
    BftPayloadPtr payload;
    // justification for views > 0: signed lock summaries from a quorum
    struct LockInfo {
        PrincipalId who = 0;
        std::int64_t locked_view = -1;
        Digest locked_digest;
        Signature sig;
    };
    std::vector<LockInfo> justification;
};

struct MsgBftSignResp final : ProtoMessage {
    MsgBftSignResp() : ProtoMessage(MsgKind::BftSignResp) {}
    std::string scope;
    std::uint32_t view = 0;
    Digest payload_digest;
    Signature sig;
};

struct MsgBftDecide final : ProtoMessage {
    MsgBftDecide() : ProtoMessage(MsgKind::BftDecide) {}
    std::string scope;
    BftPayloadPtr payload;
    QuorumCertificate qc;
};

struct MsgBftNewView final : ProtoMessage {
    MsgBftNewView() : ProtoMessage(MsgKind::BftNewView) {}
    std::string scope;
    std::uint32_t view = 0;
    std::int64_t locked_view = -1;
    Digest locked_digest;
    BftPayloadPtr locked_payload;
    Signature lock_sig;  // over (scope, view, locked_view, locked_digest)
    // the sender's input, so a new coordinator can rebuild an aggregate
    std::shared_ptr<const MsgBftInput> input;
};

// ---- monitor votes ----

struct MsgProbeReq final : ProtoMessage {
    MsgProbeReq() : ProtoMessage(MsgKind::ProbeReq) {}
    std::uint64_t probe_id = 0;
};

struct MsgProbeResp final : ProtoMessage {
    MsgProbeResp() : ProtoMessage(MsgKind::ProbeResp) {}
    std::uint64_t probe_id = 0;
};

struct MsgRemovalProposal final : ProtoMessage {
    MsgRemovalProposal() : ProtoMessage(MsgKind::RemovalProposal) {}
    BgId bg = 0;
    NodeId suspect = 0;
    Cycle cycle = 0;
};

struct MsgRemovalVote final : ProtoMessage {
    MsgRemovalVote() : ProtoMessage(MsgKind::RemovalVote) {}
    BgId bg = 0;
    NodeId suspect = 0;
    Cycle cycle = 0;
    bool agree = false;
    Signature sig;  // over the removal statement, when agreeing
};

struct MsgBgStatusQuery final : ProtoMessage {
    MsgBgStatusQuery() : ProtoMessage(MsgKind::BgStatusQuery) {}
    BgId suspect_bg = 0;
    Cycle cycle = 0;
};

struct MsgBgStatusReply final : ProtoMessage {
    MsgBgStatusReply() : ProtoMessage(MsgKind::BgStatusReply) {}
    BgId suspect_bg = 0;
    Cycle cycle = 0;
    bool unreachable = false;
    Signature sig;  // over (suspect, cycle, "unreachable"), when agreeing
    // when the replier holds the suspect's state, it shares it instead
    std::optional<CertifiedDecision> state;
};

// ---- state exchange ----

struct MsgStateRequest final : ProtoMessage {
    MsgStateRequest() : ProtoMessage(MsgKind::StateRequest) {}
    BgId target_bg = 0;
    Cycle cycle = 0;
    SlId requester_sl = 0;
    BgId requester_bg = 0;
};

struct MsgStateResponse final : ProtoMessage {
    MsgStateResponse() : ProtoMessage(MsgKind::StateResponse) {}
    enum class Kind : std::uint8_t { Full, Null, Refuse };
    Kind rkind = Kind::Null;
    BgId target_bg = 0;
    Cycle cycle = 0;
    std::optional<CertifiedDecision> state;
};

struct MsgRelayQuery final : ProtoMessage {
    MsgRelayQuery() : ProtoMessage(MsgKind::RelayQuery) {}
    BgId about_bg = 0;
    Cycle cycle = 0;
};

struct MsgRelayResponse final : ProtoMessage {
    MsgRelayResponse() : ProtoMessage(MsgKind::RelayResponse) {}
    BgId about_bg = 0;
    Cycle cycle = 0;
    std::optional<CertifiedDecision> state;
};

// ---- global membership service ----

struct MsgMembershipQuery final : ProtoMessage {
    MsgMembershipQuery() : ProtoMessage(MsgKind::MembershipQuery) {}
    Cycle cycle = 0;
};

struct MsgMembershipReply final : ProtoMessage {
    MsgMembershipReply() : ProtoMessage(MsgKind::MembershipReply) {}
    bool loss_of_quorum = false;
    std::shared_ptr<const MembershipView> view;
    std::vector<ExclusionRecord> exclusions;
    std::vector<NodeId> removed_emulators;
};

struct MsgLeaderPing final : ProtoMessage {
    MsgLeaderPing() : ProtoMessage(MsgKind::LeaderPing) {}
    bool is_monitor = false;
    bool is_leader = false;
};

struct MsgLeaderPong final : ProtoMessage {
    MsgLeaderPong() : ProtoMessage(MsgKind::LeaderPong) {}
};

struct MsgSlReset final : ProtoMessage {
    MsgSlReset() : ProtoMessage(MsgKind::SlReset) {}
    std::vector<NodeId> members;
};

/// Phase 1 of exclusion consensus: collect per-BG stall cycles for the
/// suspect, so the effective cycle is the minimum stall cycle.
struct MsgExclusionPoll final : ProtoMessage {
    MsgExclusionPoll() : ProtoMessage(MsgKind::ExclusionPoll) {}
    BgId suspect = 0;
    Cycle reported_stall = 0;
    QuorumCertificate internal_qc;  // the reporting BG's 2f_i+1 unreachability consensus
};

struct MsgExclusionCycleReport final : ProtoMessage {
    MsgExclusionCycleReport() : ProtoMessage(MsgKind::ExclusionCycleReport) {}
    BgId suspect = 0;
    bool agree = false;
    Cycle own_stall = 0;  // valid when agree
};

struct MsgExclusionSignReq final : ProtoMessage {
    MsgExclusionSignReq() : ProtoMessage(MsgKind::ExclusionSignReq) {}
    BgId suspect = 0;
    Cycle effective = 0;
    QuorumCertificate internal_qc;
};

struct MsgExclusionSignResp final : ProtoMessage {
    MsgExclusionSignResp() : ProtoMessage(MsgKind::ExclusionSignResp) {}
    BgId suspect = 0;
    Cycle effective = 0;
    Signature sig;
};

struct MsgExclusionAnnounce final : ProtoMessage {
    MsgExclusionAnnounce() : ProtoMessage(MsgKind::ExclusionAnnounce) {}
    ExclusionRecord record;
};

struct MsgEpochAnnounce final : ProtoMessage {
    MsgEpochAnnounce() : ProtoMessage(MsgKind::EpochAnnounce) {}
    std::shared_ptr<const MembershipView> view;
};

struct MsgEmulatorAttestReq final : ProtoMessage {
    MsgEmulatorAttestReq() : ProtoMessage(MsgKind::EmulatorAttestReq) {}
    EpochId epoch = 0;
};

struct MsgEmulatorAttestResp final : ProtoMessage {
    MsgEmulatorAttestResp() : ProtoMessage(MsgKind::EmulatorAttestResp) {}
    EpochId epoch = 0;
    BgId bg = 0;
    std::vector<NodeId> emulators;
    Signature sig;
};

struct MsgSlAnnounce final : ProtoMessage {
    MsgSlAnnounce() : ProtoMessage(MsgKind::SlAnnounce) {}
    SlId sl = 0;
};

struct MsgBgJoinRequest final : ProtoMessage {
    MsgBgJoinRequest() : ProtoMessage(MsgKind::BgJoinRequest) {}
    BgId bg = 0;
    bool rejoin = false;
    Cycle since_cycle = 0;
};

struct MsgSyncRequest final : ProtoMessage {
    MsgSyncRequest() : ProtoMessage(MsgKind::SyncRequest) {}
    BgId requester_bg = 0;
    EpochId since_epoch = 0;
};

struct MsgSyncResponse final : ProtoMessage {
    MsgSyncResponse() : ProtoMessage(MsgKind::SyncResponse) {}
    std::vector<std::shared_ptr<const MembershipView>> missed_epochs;
    std::vector<CertifiedDecision> recent_decisions;  // peer BG's own decisions
};

// ---- convergence module ----

struct MsgCmBgReport final : ProtoMessage {
    MsgCmBgReport() : ProtoMessage(MsgKind::CmBgReport) {}
    BgReport report;
    bool is_assist_request = false;
};

struct MsgCmReportQuery final : ProtoMessage {
    MsgCmReportQuery() : ProtoMessage(MsgKind::CmReportQuery) {}
    Cycle cycle = 0;
};

struct MsgCmSuspect final : ProtoMessage {
    MsgCmSuspect() : ProtoMessage(MsgKind::CmSuspect) {}
    BgId suspect = 0;
    Cycle cycle = 0;
    Signature sig;  // over FailureCertificate::signed_message(suspect, cycle)
};

struct MsgCmReportForward final : ProtoMessage {
    MsgCmReportForward() : ProtoMessage(MsgKind::CmReportForward) {}
    BgReport report;
};

struct MsgCmReplyMsg final : ProtoMessage {
    MsgCmReplyMsg() : ProtoMessage(MsgKind::CmReplyMsg) {}
    CmReplyPtr reply;
};

struct MsgCmDenyMsg final : ProtoMessage {
    MsgCmDenyMsg() : ProtoMessage(MsgKind::CmDenyMsg) {}
    CmDenyPtr deny;
};

struct MsgCmOutcomeQuery final : ProtoMessage {
    MsgCmOutcomeQuery() : ProtoMessage(MsgKind::CmOutcomeQuery) {}
    Cycle cycle = 0;
};

struct MsgCmOutcomeReply final : ProtoMessage {
    MsgCmOutcomeReply() : ProtoMessage(MsgKind::CmOutcomeReply) {}
    Cycle cycle = 0;
    bool assisted = false;
    bool pending = false;  // outcome not settled yet
    CmReplyPtr reply;      // when assisted
    CmDenyPtr deny;        // when settled unassisted
};

struct MsgCmValiditySign final : ProtoMessage {
    MsgCmValiditySign() : ProtoMessage(MsgKind::CmValiditySign) {}
    Cycle cycle = 0;
    Digest command_digest;
    std::uint64_t decision_index = 0;
    Signature sig;
};

struct MsgCmPing final : ProtoMessage {
    MsgCmPing() : ProtoMessage(MsgKind::CmPing) {}
};

struct MsgCmPong final : ProtoMessage {
    MsgCmPong() : ProtoMessage(MsgKind::CmPong) {}
};

}  // namespace rcsim
