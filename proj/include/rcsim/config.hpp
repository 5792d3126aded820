// Topology and run configuration. Node ids are dense: protocol nodes first,
// then one CM replica per BG, then clients.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcsim/engine.hpp"
#include "rcsim/types.hpp"

namespace rcsim {

struct Topology {
    std::uint32_t bgs = 3;
    std::uint32_t sls_per_bg = 4;
    std::uint32_t nodes_per_sl = 3;
    std::uint32_t f = 1;    // intra-SL crash tolerance (liveness needs nodes_per_sl > 2f)
    std::uint32_t f_i = 1;  // Byzantine SLs tolerated per BG (needs sls_per_bg > 3*f_i)
    std::uint32_t f_g = 0;  // Byzantine BG leaders tolerated (needs bgs > 3*f_g)

    std::uint32_t protocol_nodes() const { return bgs * sls_per_bg * nodes_per_sl; }

    NodeId node_id(std::uint32_t bg, std::uint32_t sl, std::uint32_t node) const {
        return (bg * sls_per_bg + sl) * nodes_per_sl + node;
    }
    bool is_protocol_node(NodeId id) const { return id < protocol_nodes(); }
    BgId bg_of(NodeId id) const { return id / (sls_per_bg * nodes_per_sl); }
    SlId sl_of(NodeId id) const { return id / nodes_per_sl; }          // global SL index
    SlId sl_index(BgId bg, std::uint32_t local_sl) const { return bg * sls_per_bg + local_sl; }
    BgId bg_of_sl(SlId sl) const { return sl / sls_per_bg; }

    std::vector<NodeId> nodes_of_sl(SlId sl) const {
        std::vector<NodeId> v;
        for (std::uint32_t n = 0; n < nodes_per_sl; ++n) v.push_back(sl * nodes_per_sl + n);
        return v;
    }
    std::vector<NodeId> nodes_of_bg(BgId bg) const {
        std::vector<NodeId> v;
        for (std::uint32_t s = 0; s < sls_per_bg; ++s)
            for (NodeId n : nodes_of_sl(sl_index(bg, s))) v.push_back(n);
        return v;
    }
    std::vector<SlId> sls_of_bg(BgId bg) const {
        std::vector<SlId> v;
        for (std::uint32_t s = 0; s < sls_per_bg; ++s) v.push_back(sl_index(bg, s));
        return v;
    }

    NodeId cm_node_id(BgId bg) const { return protocol_nodes() + bg; }
    bool is_cm_node(NodeId id) const {
        return id >= protocol_nodes() && id < protocol_nodes() + bgs;
    }
    NodeId client_id(std::uint32_t i) const { return protocol_nodes() + bgs + i; }

    /// Intra-SL quorum: majority of the configured membership.
    std::uint32_t sl_quorum() const { return nodes_per_sl / 2 + 1; }
    /// Intra-BG quorum: 2*f_i + 1 monitor signatures.
    std::uint32_t bg_quorum() const { return 2 * f_i + 1; }
    /// Leader-tier quorum. 2*f_g+1 alone admits split-brain at small BG
    /// counts (f_g = 0), so partitions additionally require a majority.
    std::uint32_t leader_quorum() const {
        return std::max(2 * f_g + 1, bgs / 2 + 1);
    }

    void validate() const {
        if (bgs == 0 || sls_per_bg == 0 || nodes_per_sl == 0)
            throw std::invalid_argument("topology: empty tier");
        if (sls_per_bg <= 3 * f_i)
            throw std::invalid_argument("topology: need sls_per_bg > 3*f_i");
        if (bgs <= 3 * f_g) throw std::invalid_argument("topology: need bgs > 3*f_g");
        if (nodes_per_sl <= 2 * f)
            throw std::invalid_argument("topology: need nodes_per_sl > 2*f");
    }
};

struct Timing {
    Tick delta = 5;            // intra-SL synchrony bound (A3)
    Tick delta_net_max = 100;  // inter-SL delay draw ceiling
    Tick big_delta = 500;      // timeout Delta (A4): silence past this means dead/partitioned
    Tick batch = 1000;         // batch time b; cycles start every b ticks
    std::uint32_t pipeline_k = 2;      // pipeline depth; commit delay = max(1, k)
    std::uint32_t epoch_cycles = 32;   // resynchronization period E
    std::uint32_t horizon = 8;         // exclusion horizon h for long partitions
    std::uint32_t dedup_window = 8;    // nonce dedup retention W, in cycles
    std::uint32_t representatives = 2; // k representatives per SL
    Tick heartbeat = 25;               // intra-SL heartbeat period
    std::uint32_t heartbeat_misses = 3;

    Tick cycle_start(Cycle c) const { return c * batch; }
    Cycle commit_delay() const { return std::max<std::uint32_t>(1, pipeline_k); }
    Tick client_timeout() const { return 3 * (batch + big_delta); }
};

enum class RunMode { Cm, Global };
enum class AnalysisPolicy { Full, Replication };
enum class CmSubmitMode { Leader, All };

struct Policy {
    RunMode mode = RunMode::Cm;
    AnalysisPolicy analysis = AnalysisPolicy::Full;
    std::uint32_t replication_r = 2;
    CmSubmitMode submit = CmSubmitMode::Leader;
};

struct ClientSpec {
    std::uint32_t count = 6;
    Tick mean_gap = 400;  // mean ticks between submissions per client
    std::uint32_t payload_bytes = 32;
};

/// CM sizing. With B BGs hosting one replica each, the report-ingestion rule
/// is "wait for all but cm_f reports, then failure certificates for the
/// rest"; cm_f+1 corroborating suspicions make a failure certificate.
struct CmParams {
    std::uint32_t cm_f = 1;

    static CmParams defaults_for(std::uint32_t bgs) {
        CmParams p;
        p.cm_f = std::max<std::uint32_t>(1, (bgs - 1) / 3);
        if (p.cm_f >= bgs) p.cm_f = bgs - 1;
        return p;
    }
    std::uint32_t rsm_quorum(std::uint32_t replicas) const { return replicas / 2 + 1; }
    std::uint32_t validity_quorum() const { return cm_f + 1; }
    std::uint32_t failcert_quorum() const { return cm_f + 1; }
};

}  // namespace rcsim
