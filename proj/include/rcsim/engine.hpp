// Deterministic discrete-event engine: virtual time, seeded delays, FIFO
// per-pair delivery, timers, partitions and crash faults. One event is
// dispatched at a time; (scenario, seed) -> event sequence is a pure function.
#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <vector>

#include "rcsim/rng.hpp"

namespace rcsim {

using Tick = std::uint64_t;
using NodeId = std::uint32_t;

constexpr Tick kTickForever = std::numeric_limits<Tick>::max();

/// Base class for all simulated message payloads.
struct Message {
    virtual ~Message() = default;
};

using MessagePtr = std::shared_ptr<const Message>;

struct Envelope {
    NodeId src = 0;
    NodeId dst = 0;
    Tick send_time = 0;
    Tick deliver_time = 0;
    MessagePtr payload;
};

struct Timer {
    NodeId owner = 0;
    Tick fire_time = 0;
    std::uint64_t token = 0;
    int kind = 0;
    std::uint64_t a = 0, b = 0, c = 0;  // small payload fields
};

class SimEngine;

class Actor {
public:
    virtual ~Actor() = default;
    virtual void on_message(const Envelope& env) = 0;
    virtual void on_timer(const Timer& t) = 0;
};

class SimEngine {
public:
    explicit SimEngine(std::uint64_t seed) : rng_(seed) {}

    Tick now() const { return now_; }
    Rng& rng() { return rng_; }

    void register_actor(NodeId id, Actor* a) { actors_[id] = a; }

    // ---- liveness ----

    void kill(NodeId id) { dead_.insert(id); }
    bool is_dead(NodeId id) const { return dead_.count(id) != 0; }

    // ---- messages ----

    /// Schedules delivery at an explicit tick. Per-(src,dst) FIFO is enforced
    /// by clamping the delivery tick to never precede an earlier send's.
    void schedule_message(NodeId src, NodeId dst, MessagePtr msg, Tick deliver_time) {
        if (deliver_time < now_) throw std::logic_error("schedule_message: delivery in the past");
        auto key = std::make_pair(src, dst);
        auto it = last_delivery_.find(key);
        if (it != last_delivery_.end() && deliver_time < it->second) deliver_time = it->second;
        last_delivery_[key] = deliver_time;
        Event ev;
        ev.time = deliver_time;
        ev.seq = next_seq_++;
        ev.is_timer = false;
        ev.env = Envelope{src, dst, now_, deliver_time, std::move(msg)};
        queue_.push(std::move(ev));
    }

    // ---- timers ----

    std::uint64_t schedule_timer(NodeId owner, Tick fire_time, int kind, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
        if (fire_time < now_) throw std::logic_error("schedule_timer: firing in the past");
        Event ev;
        ev.time = fire_time;
        ev.seq = next_seq_++;
        ev.is_timer = true;
        ev.timer = Timer{owner, fire_time, ev.seq, kind, a, b, c};
        std::uint64_t token = ev.seq;
        queue_.push(std::move(ev));
        return token;
    }

    void cancel_timer(std::uint64_t token) { cancelled_.insert(token); }

    // ---- partitions ----

    struct PartitionHandle {
        std::uint64_t id = 0;
    };

    /// From `from`, messages crossing the given components are withheld and
    /// dropped; a message whose delivery tick lands at or after `until` is
    /// unaffected (the partition healed first). Nodes not listed in any
    /// component share one implicit component.
    PartitionHandle set_partition(const std::vector<std::vector<NodeId>>& components, Tick from,
                                  Tick until = kTickForever) {
        Partition p;
        p.from = from;
        p.until = until;
        std::uint32_t group = 1;
        for (const auto& comp : components) {
            for (NodeId n : comp) {
                if (p.group.count(n)) throw std::invalid_argument("set_partition: overlapping components");
                p.group[n] = group;
            }
            ++group;
        }
        p.id = next_partition_id_++;
        partitions_.push_back(std::move(p));
        return PartitionHandle{partitions_.back().id};
    }

    /// Heals a partition early (e.g. scenario-driven recovery action).
    void heal_partition(PartitionHandle h, Tick at) {
        for (auto& p : partitions_)
            if (p.id == h.id && at < p.until) p.until = at;
    }

    bool blocked(NodeId src, NodeId dst, Tick at) const {
        for (const auto& p : partitions_) {
            if (at < p.from || at >= p.until) continue;
            auto ga = p.group.find(src);
            auto gb = p.group.find(dst);
            std::uint32_t a = ga == p.group.end() ? 0 : ga->second;
            std::uint32_t b = gb == p.group.end() ? 0 : gb->second;
            if (a != b) return true;
        }
        return false;
    }

    // ---- stepping ----

    enum class StepKind { Idle, Delivered, TimerFired, Dropped, Skipped };

    struct StepResult {
        StepKind kind = StepKind::Idle;
        Tick time = 0;
    };

    /// Pops exactly one event. Cancelled timers and deliveries to dead nodes
    /// consume their slot as Skipped so callers can re-check time bounds.
    StepResult step() {
        if (queue_.empty()) return {StepKind::Idle, now_};
        Event ev = queue_.top();
        queue_.pop();
        now_ = ev.time;
        if (ev.is_timer) {
            if (cancelled_.count(ev.timer.token)) {
                cancelled_.erase(ev.timer.token);
                return {StepKind::Skipped, now_};
            }
            if (dead_.count(ev.timer.owner)) return {StepKind::Skipped, now_};
            auto it = actors_.find(ev.timer.owner);
            if (it == actors_.end()) return {StepKind::Skipped, now_};
            it->second->on_timer(ev.timer);
            return {StepKind::TimerFired, now_};
        }
        // message delivery: the partition check happens at delivery time,
        // so a transiently partitioned message either arrives after heal
        // (its delivery tick was late enough) or never
        if (blocked(ev.env.src, ev.env.dst, ev.time)) {
            ++dropped_by_partition_;
            return {StepKind::Dropped, now_};
        }
        // in-flight messages survive sender death (reliable channels)
        if (dead_.count(ev.env.dst)) return {StepKind::Skipped, now_};
        auto it = actors_.find(ev.env.dst);
        if (it == actors_.end()) return {StepKind::Skipped, now_};
        it->second->on_message(ev.env);
        return {StepKind::Delivered, now_};
    }

    /// Runs until the queue drains or virtual time passes `until`.
    void run_until(Tick until) {
        while (!queue_.empty() && queue_.top().time <= until) {
            step();
            if (++dispatched_ > max_events_) throw std::runtime_error("event budget exceeded");
        }
        if (now_ < until) now_ = until;
    }

    bool idle() const { return queue_.empty(); }
    std::uint64_t dropped_by_partition() const { return dropped_by_partition_; }
    void set_event_budget(std::uint64_t n) { max_events_ = n; }

private:
    struct Event {
        Tick time = 0;
        std::uint64_t seq = 0;
        bool is_timer = false;
        Envelope env;
        Timer timer;
    };

    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    struct Partition {
        std::uint64_t id = 0;
        Tick from = 0;
        Tick until = kTickForever;
        std::map<NodeId, std::uint32_t> group;
    };

    Tick now_ = 0;
    std::uint64_t next_seq_ = 1;
    std::uint64_t next_partition_id_ = 1;
    std::uint64_t dispatched_ = 0;
    std::uint64_t max_events_ = 200'000'000;
    std::uint64_t dropped_by_partition_ = 0;
    Rng rng_;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::set<std::uint64_t> cancelled_;
    std::set<NodeId> dead_;
    std::map<std::pair<NodeId, NodeId>, Tick> last_delivery_;
    std::map<NodeId, Actor*> actors_;
    std::vector<Partition> partitions_;
};

/// Seeded message delays: intra-SL links are synchronous (bounded by delta),
/// anything wider draws from [10, delta_net_max].
struct DelayModel {
    Tick delta = 5;          // intra-SL bound (A3)
    Tick delta_net_max = 100;  // inter-SL draw ceiling, well under the timeout

    Tick intra_sl(Rng& rng) const { return rng.uniform(1, delta); }
    Tick remote(Rng& rng) const { return rng.uniform(10, delta_net_max); }
};

}  // namespace rcsim
