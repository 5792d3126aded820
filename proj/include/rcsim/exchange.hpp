// Per-cycle pipeline slot: what this node has fetched, what it still needs,
// and the commit gate. Completion and commit decisions live in the node; the
// structures here keep the bookkeeping in one place.
#pragma once

#include <map>
#include <optional>
#include <set>

#include "rcsim/types.hpp"

namespace rcsim {

enum class CyclePhase : std::uint8_t { Exchanging, Complete, Stalled };

struct FetchState {
    std::uint32_t attempt = 0;
    std::set<NodeId> contacted;
    std::uint64_t timer_token = 0;
    bool resolved = false;
    bool stalled = false;
};

struct CycleState {
    Cycle cycle = 0;
    std::optional<CertifiedDecision> own;
    std::map<BgId, CertifiedDecision> fetched;
    CyclePhase phase = CyclePhase::Exchanging;
    Tick completed_at = 0;
    bool committed = false;
    // representative-side fetch machinery
    std::map<BgId, FetchState> fetches;
    // emulators answering Null owe a push when the decision lands
    std::vector<NodeId> pending_pushes;
};

enum class CycleOutcome : std::uint8_t { Unassisted, Assisted, Unknown };

struct Classification {
    CycleOutcome outcome = CycleOutcome::Unknown;
    CmReplyPtr reply;  // set when Assisted
};

}  // namespace rcsim
