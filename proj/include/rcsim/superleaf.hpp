// Intra-SL building blocks: heartbeat-based liveness and the atomic
// broadcast primitive. Under A3 the rack is synchronous, so a
// leader-sequenced broadcast with reliable channels gives Validity,
// Agreement, Integrity and Total order; the leader is always the lowest
// live, non-excluded member.
#pragma once

#include <functional>
#include <map>
#include <set>
#include <vector>

#include "rcsim/engine.hpp"
#include "rcsim/messages.hpp"

namespace rcsim {

class LivenessTracker {
public:
    void heard(NodeId n, Tick at) {
        auto& t = last_heard_[n];
        if (at > t) t = at;
    }

    bool fresh(NodeId n, Tick now, Tick window) const {
        auto it = last_heard_.find(n);
        return it != last_heard_.end() && now <= it->second + window;
    }

private:
    std::map<NodeId, Tick> last_heard_;
};

/// Per-member SLBroadcast endpoint. The owner wires delivery of raw messages
/// (Forward/Deliver) in and gets ordered (origin, inner) deliveries out.
/// Total order is by (leader id, sequence); leader ids only grow across
/// leader changes because crashed nodes never return without a rejoin.
class SlBroadcast {
public:
    using DeliverFn = std::function<void(NodeId origin, const MessagePtr& inner)>;
    using SendFn = std::function<void(NodeId dst, MessagePtr msg)>;
    using LeaderFn = std::function<NodeId()>;
    using MembersFn = std::function<std::vector<NodeId>()>;  // live, non-excluded members

    NodeId self = 0;
    DeliverFn deliver;
    SendFn send;
    LeaderFn current_leader;
    MembersFn live_members;

    /// Validity: a live sender's message reaches the leader and is sequenced;
    /// the owner retries via `resend_pending` if the leader changed.
    void broadcast(MessagePtr inner) {
        auto fwd = std::make_shared<MsgSlbForward>();
        fwd->origin = self;
        fwd->origin_seq = ++my_seq_;
        fwd->inner = std::move(inner);
        pending_[fwd->origin_seq] = fwd;
        send(current_leader(), fwd);
    }

    void resend_pending() {
        for (auto& [seq, fwd] : pending_) send(current_leader(), fwd);
    }

    bool has_pending() const { return !pending_.empty(); }

    void on_forward(const MsgSlbForward& fwd) {
        // leader role: sequence and atomically multicast to all live members
        if (current_leader() != self) return;
        auto key = std::make_pair(fwd.origin, fwd.origin_seq);
        if (sequenced_.count(key)) return;  // duplicate retry
        sequenced_.insert(key);
        auto del = std::make_shared<MsgSlbDeliver>();
        del->leader = self;
        del->seq = ++lead_seq_;
        del->origin = fwd.origin;
        del->origin_seq = fwd.origin_seq;
        del->inner = fwd.inner;
        for (NodeId m : live_members()) send(m, del);
    }

    void on_deliver(const MsgSlbDeliver& d) {
        if (d.leader < high_leader_) return;  // stale leader epoch
        if (d.leader > high_leader_) {
            high_leader_ = d.leader;
            expected_seq_ = 1;
        }
        buffer_[d.seq] = std::make_shared<MsgSlbDeliver>(d);
        while (true) {
            auto it = buffer_.find(expected_seq_);
            if (it == buffer_.end()) break;
            auto msg = it->second;
            buffer_.erase(it);
            ++expected_seq_;
            if (msg->origin == self) pending_.erase(msg->origin_seq);
            deliver(msg->origin, msg->inner);
        }
    }

private:
    std::uint64_t my_seq_ = 0;
    std::uint64_t lead_seq_ = 0;
    NodeId high_leader_ = 0;
    std::uint64_t expected_seq_ = 1;
    std::map<std::uint64_t, std::shared_ptr<const MsgSlbDeliver>> buffer_;
    std::map<std::uint64_t, std::shared_ptr<MsgSlbForward>> pending_;
    std::set<std::pair<NodeId, std::uint64_t>> sequenced_;
};

}  // namespace rcsim
