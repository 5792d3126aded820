// Protocol node: SL member, potential monitor/representative, emulator for
// its BG, and potential BG leader. One actor class carries all roles; role
// checks derive from the live membership view so promotion needs no extra
// coordination messages.
#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rcsim/bg_consensus.hpp"
#include "rcsim/bft.hpp"
#include "rcsim/exchange.hpp"
#include "rcsim/global_service.hpp"
#include "rcsim/superleaf.hpp"
#include "rcsim/world.hpp"

namespace rcsim {

// a re-listed BG is expected to contribute again this many cycles after the
// epoch boundary, covering announcement latency
constexpr Cycle kResumeGrace = 2;

enum TimerKind : int {
    THeartbeat = 1,
    TCycleShare,
    TCycleSeal,
    TCycleBegin,
    TBft,
    TFetchRetry,       // a=cycle, b=bg
    TRepSweep,
    TTierPing,
    TProbe,            // a=probe id
    TRemovalWindow,    // a=suspect node
    TStatusWindow,     // a=suspect bg, b=cycle
    TExclusionWindow,  // a=suspect bg
    TEpochKick,        // a=epoch id
    TAttestKick,       // a=epoch id
    TAssistRetry,      // a=cycle
    TOutcomeRetry,     // a=cycle
    TStallRecheck,
    TClientGen,
    TClientTimeout,    // a=tx id
};

class Node : public Actor {
public:
    Node(World& world, NodeId id)
        : w(world), self(id), bg(w.topo.bg_of(id)), sl(w.topo.sl_of(id)),
          dedup(w.timing.dedup_window) {
        sl_members = w.topo.nodes_of_sl(sl);
        bg_sls = w.topo.sls_of_bg(bg);
        boot_time = 0;
        slb.self = self;
        slb.deliver = [this](NodeId origin, const MessagePtr& inner) { on_slb(origin, inner); };
        slb.send = [this](NodeId dst, MessagePtr msg) { send(dst, std::move(msg)); };
        slb.current_leader = [this] { return sl_monitor(); };
        slb.live_members = [this] { return sl_alive_members(); };
        auto v = std::make_shared<MembershipView>();
        v->epoch = 0;
        v->first_cycle = 0;
        for (BgId b = 0; b < w.topo.bgs; ++b) {
            if (w.dormant_bgs.count(b)) continue;
            v->bgs.push_back(b);
            v->emulators[b] = w.topo.nodes_of_bg(b);
            v->quorum_sizes[b] = w.topo.bg_quorum();
        }
        epochs.push_back(v);
    }

    void boot() {
        if (w.dormant_bgs.count(bg)) return;  // joins at a later resync
        active = true;
        boot_time = w.engine.now();
        arm(THeartbeat, w.engine.now() + 1);
        arm(TTierPing, w.engine.now() + 2);
        arm(TRepSweep, w.engine.now() + 2 * w.timing.big_delta + (self % 7));
        arm(TStallRecheck, w.engine.now() + 3 * w.timing.big_delta + (self % 11));
        schedule_cycle_timers_for(current_cycle());
        Cycle boundary = ((current_cycle() / w.timing.epoch_cycles) + 1) * w.timing.epoch_cycles;
        EpochId next_epoch = boundary / w.timing.epoch_cycles;
        arm(TAttestKick, w.timing.cycle_start(boundary) - 2 * w.timing.big_delta, next_epoch);
        arm(TEpochKick, w.timing.cycle_start(boundary), next_epoch);
    }

    // ------------------------------------------------------------------
    // identity and role derivation

    World& w;
    const NodeId self;
    const BgId bg;
    const SlId sl;
    bool active = false;
    Tick boot_time = 0;

    std::vector<NodeId> sl_members;
    std::vector<SlId> bg_sls;

    LivenessTracker sl_live;
    std::set<NodeId> sl_excluded;
    std::set<NodeId> heard_once;
    bool i_am_excluded = false;   // suspecting we were excluded; cleared by readmission
    bool sl_stalled = false;      // intra-SL quorum lost
    bool global_stalled = false;  // stalled by the membership service (partition)

    Tick hb_window() const {
        return w.timing.heartbeat * w.timing.heartbeat_misses + 2 * w.timing.delta;
    }
    const ByzFlags& byz() const { return w.flags(self); }

    bool in_grace() const { return w.engine.now() < boot_time + hb_window(); }
    bool tier_grace() const { return w.engine.now() < boot_time + 2 * w.timing.big_delta; }

    bool peer_fresh(NodeId m) const {
        return sl_live.fresh(m, w.engine.now(), hb_window()) || (in_grace() && !heard_once.count(m));
    }

    std::vector<NodeId> sl_alive_members() const {
        std::vector<NodeId> v;
        for (NodeId m : sl_members) {
            if (m == self) {
                if (!i_am_excluded) v.push_back(m);
            } else if (!sl_excluded.count(m) && peer_fresh(m)) {
                v.push_back(m);
            }
        }
        return v;
    }

    bool sl_has_quorum() const { return sl_alive_members().size() >= w.topo.sl_quorum(); }

    NodeId sl_monitor() const {
        auto v = sl_alive_members();
        return v.empty() ? self : v.front();
    }
    bool i_am_monitor() const { return active && !i_am_excluded && sl_monitor() == self; }

    std::vector<NodeId> representatives() const {
        auto v = sl_alive_members();
        if (v.size() > w.timing.representatives) v.resize(w.timing.representatives);
        return v;
    }
    bool i_am_rep() const {
        auto v = representatives();
        return std::find(v.begin(), v.end(), self) != v.end();
    }

    std::map<SlId, std::pair<NodeId, Tick>> monitor_seen;
    std::map<BgId, std::pair<NodeId, Tick>> leader_seen;

    NodeId monitor_of(SlId s) const {
        if (s == sl) return sl_monitor();
        auto it = monitor_seen.find(s);
        return it != monitor_seen.end() ? it->second.first : w.topo.nodes_of_sl(s).front();
    }

    bool sl_fresh(SlId s) const {
        if (s == sl) return sl_has_quorum();
        auto it = monitor_seen.find(s);
        if (it != monitor_seen.end() && w.engine.now() <= it->second.second + 2 * w.timing.big_delta)
            return true;
        return tier_grace();
    }

    SlId leader_sl() const {
        for (SlId s : bg_sls)
            if (sl_fresh(s)) return s;
        return sl;
    }
    bool i_am_leader() const { return i_am_monitor() && leader_sl() == sl; }

    NodeId leader_of(BgId b) const {
        if (b == bg) return monitor_of(leader_sl());
        auto it = leader_seen.find(b);
        return it != leader_seen.end() ? it->second.first : w.topo.node_id(b, 0, 0);
    }

    bool leader_fresh(BgId b) const {
        if (b == bg) return true;
        auto it = leader_seen.find(b);
        if (it != leader_seen.end() && w.engine.now() <= it->second.second + 2 * w.timing.big_delta)
            return true;
        return tier_grace();
    }

    std::uint32_t reachable_leader_count() const {
        std::uint32_t n = 0;
        for (BgId b : view()->bgs)
            if (leader_fresh(b)) ++n;
        return n;
    }

    // ------------------------------------------------------------------
    // membership views and exclusion history

    std::vector<std::shared_ptr<const MembershipView>> epochs;  // ascending first_cycle
    struct ExclusionInterval {
        Cycle from = 0;
        Cycle to = kCycleNone;  // closed at the epoch that re-lists the BG
    };
    std::map<BgId, std::vector<ExclusionInterval>> exclusion_history;
    std::vector<ExclusionRecord> exclusion_records;
    std::set<NodeId> removed_emulators;

    std::shared_ptr<const MembershipView> view() const { return epochs.back(); }

    std::shared_ptr<const MembershipView> view_for(Cycle c) const {
        for (auto it = epochs.rbegin(); it != epochs.rend(); ++it)
            if ((*it)->first_cycle <= c) return *it;
        return epochs.front();
    }

    bool bg_excluded_at(BgId b, Cycle c) const {
        auto it = exclusion_history.find(b);
        if (it == exclusion_history.end()) return false;
        for (const auto& iv : it->second)
            if (c >= iv.from && c < iv.to) return true;
        return false;
    }

    bool window_excluded(BgId b, Cycle c) const {
        for (const auto& [cyc, reply] : replies) {
            if (reply->exclusion_horizon == 0 || !reply->fn.count(b)) continue;
            Cycle from = cyc + w.timing.pipeline_k;
            Cycle to = from + reply->exclusion_horizon;
            if (c >= from && c < to) return true;
        }
        return false;
    }

    std::set<BgId> required_bgs(Cycle c) const {
        std::set<BgId> req;
        auto v = view_for(c);
        auto rit = replies.find(c);
        if (w.policy.mode == RunMode::Cm && rit != replies.end()) {
            for (const auto& [b, h] : rit->second->committed)
                if (b != bg) req.insert(b);
            return req;
        }
        for (BgId b : v->bgs) {
            if (b == bg) continue;
            if (w.policy.mode == RunMode::Cm && window_excluded(b, c)) continue;
            if (w.policy.mode == RunMode::Global && bg_excluded_at(b, c)) continue;
            req.insert(b);
        }
        return req;
    }

    // ------------------------------------------------------------------
    // client transactions

    std::vector<ClientTx> pending_txs;
    std::map<DedupKey, Digest> client_tx_seen;
    std::map<DedupKey, ClientTx> tx_store;
    std::map<DedupKey, Cycle> shared_in;
    std::set<PrincipalId> malicious_clients;
    struct Owed {
        PrincipalId client;
        Digest tx_digest;
    };
    std::map<DedupKey, Owed> owed;
    std::map<DedupKey, std::pair<CommitProof, Cycle>> answered;

    // ------------------------------------------------------------------
    // cycle machinery

    SlBroadcast slb;
    std::vector<TransactionBlock> unsealed_tbs;
    std::map<Cycle, SlContribution> sealed;
    std::map<Cycle, CertifiedDecision> own_decisions;
    DedupBuffer dedup;
    std::set<Cycle> declared_seeks;
    std::map<Cycle, Cycle> declared_in;  // seek cycle -> decision cycle carrying it
    Cycle decision_resume_floor = kCycleNone;  // first cycle decidable after a gap

    /// Decision sequencing gate: cycle c may be built/signed once c-1 is
    /// decided, or when c starts a fresh run after a stall gap (the BG
    /// provably decided nothing in between).
    bool can_sequence(Cycle c) const {
        if (c == 0 || own_decisions.count(c - 1)) return true;
        return decision_resume_floor != kCycleNone && c >= decision_resume_floor &&
               own_decisions.lower_bound(decision_resume_floor) == own_decisions.end();
    }

    std::map<Cycle, CycleState> cycles;
    Cycle next_commit = 0;
    std::map<Cycle, std::set<BgId>> committed_included;
    std::map<Cycle, CmReplyPtr> replies;
    std::map<Cycle, CmDenyPtr> denies;
    std::map<Cycle, Classification> classifications;
    std::map<Cycle, std::set<NodeId>> pending_pushes;
    std::map<std::pair<Cycle, BgId>, std::set<NodeId>> rep_stalls;
    std::set<std::pair<BgId, Cycle>> status_consensus_done;
    std::map<std::pair<Cycle, BgId>, Tick> fetch_sent_at;
    Tick ema_response = 0;

    std::map<std::string, std::unique_ptr<BftInstance>> instances;
    std::map<std::uint64_t, std::string> bft_timers;
    std::map<Cycle, std::vector<std::pair<MsgBftSignReq, PrincipalId>>> deferred_signs;
    std::set<Cycle> scheduled_cycles_;

    // leader-tier state
    std::map<EpochId, std::map<BgId, std::shared_ptr<const EmulatorAttestation>>> attests;
    std::map<NodeId, std::map<SlId, Signature>> removal_votes;
    std::map<NodeId, QuorumCertificate> removal_certs;
    std::map<BgId, std::map<SlId, Signature>> status_votes;
    std::map<BgId, std::map<SlId, Cycle>> status_stall_cycles;
    std::map<BgId, QuorumCertificate> internal_unreach_qc;
    struct ExclusionDrive {
        BgId suspect = 0;
        QuorumCertificate internal_qc;
        std::map<BgId, Cycle> reports;
        std::map<BgId, Signature> sigs;
        Cycle effective = 0;
        bool sign_phase = false;
        bool done = false;
    };
    std::map<BgId, ExclusionDrive> exclusion_drives;
    std::set<BgId> join_queue;
    std::map<BgId, Cycle> join_since;
    bool rejoin_sent = false;
    bool got_refused = false;
    std::map<Cycle, std::uint64_t> assist_timers;
    std::map<Cycle, std::uint64_t> outcome_timers;
    std::map<Cycle, std::uint32_t> assist_attempts;
    std::map<Cycle, std::uint32_t> outcome_attempts;
    std::uint64_t probe_counter = 0;
    std::map<std::uint64_t, NodeId> probes_out;
    std::map<NodeId, std::set<SlId>> probe_returns;

    // ------------------------------------------------------------------
    // plumbing

    void send(NodeId dst, MessagePtr msg) { w.send(self, dst, std::move(msg)); }

    std::uint64_t arm(int kind, Tick at, std::uint64_t a = 0, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
        if (at <= w.engine.now()) at = w.engine.now() + 1;
        return w.engine.schedule_timer(self, at, kind, a, b, c);
    }

    void emit(const std::string& kind, ordered_json fields = {}) {
        w.emit(kind, self, std::move(fields));
    }

    Cycle current_cycle() const { return w.engine.now() / w.timing.batch; }

    // ==================================================================
    // dispatch

    void on_message(const Envelope& env) override {
        const auto* pm = dynamic_cast<const ProtoMessage*>(env.payload.get());
        if (!pm || !active) return;
        if (w.topo.is_protocol_node(env.src) && w.topo.sl_of(env.src) == sl &&
            sl_excluded.count(env.src) && pm->kind != MsgKind::RejoinRequest &&
            pm->kind != MsgKind::SlReset)
            return;
        switch (pm->kind) {
            case MsgKind::Heartbeat:
                sl_live.heard(env.src, w.engine.now());
                heard_once.insert(env.src);
                break;
            case MsgKind::SlbForward: slb.on_forward(as<MsgSlbForward>(env)); break;
            case MsgKind::SlbDeliver: slb.on_deliver(as<MsgSlbDeliver>(env)); break;
            case MsgKind::ClientSubmit: on_client_submit(env); break;
            case MsgKind::BftInput: on_bft_input(env); break;
            case MsgKind::BftSignReq: on_bft_sign_req(env); break;
            case MsgKind::BftSignResp:
            case MsgKind::BftDecide:
            case MsgKind::BftNewView: on_bft_generic(env); break;
            case MsgKind::StateRequest: on_state_request(env); break;
            case MsgKind::StateResponse: on_state_response(env); break;
            case MsgKind::RelayQuery: on_relay_query(env); break;
            case MsgKind::RelayResponse: on_relay_response(env); break;
            case MsgKind::MembershipQuery: on_membership_query(env); break;
            case MsgKind::MembershipReply: on_membership_reply(env); break;
            case MsgKind::LeaderPing: on_tier_ping(env); break;
            case MsgKind::ProbeReq: on_probe_req(env); break;
            case MsgKind::ProbeResp: on_probe_resp(env); break;
            case MsgKind::RemovalProposal: on_removal_proposal(env); break;
            case MsgKind::RemovalVote: on_removal_vote(env); break;
            case MsgKind::BgStatusQuery: on_bg_status_query(env); break;
            case MsgKind::BgStatusReply: on_bg_status_reply(env); break;
            case MsgKind::ExclusionPoll: on_exclusion_poll(env); break;
            case MsgKind::ExclusionCycleReport: on_exclusion_cycle_report(env); break;
            case MsgKind::ExclusionSignReq: on_exclusion_sign_req(env); break;
            case MsgKind::ExclusionSignResp: on_exclusion_sign_resp(env); break;
            case MsgKind::ExclusionAnnounce: on_exclusion_announce(env); break;
            case MsgKind::EpochAnnounce: on_epoch_announce(env); break;
            case MsgKind::EmulatorAttestReq: on_attest_req(env); break;
            case MsgKind::EmulatorAttestResp: on_attest_resp(env); break;
            case MsgKind::SlAnnounce: on_sl_announce(env); break;
            case MsgKind::BgJoinRequest: on_bg_join_request(env); break;
            case MsgKind::SyncWrapper: on_sync_wrapper(env); break;
            case MsgKind::RejoinRequest: on_rejoin_request(env); break;
            case MsgKind::RejoinGrant: on_rejoin_grant(env); break;
            case MsgKind::SlReset: on_sl_reset(env); break;
            case MsgKind::CmReplyMsg: on_cm_reply(env); break;
            case MsgKind::CmDenyMsg: on_cm_deny(env); break;
            case MsgKind::CmOutcomeReply: on_cm_outcome_reply(env); break;
            case MsgKind::CmReportQuery: on_cm_report_query(env); break;
            default: break;
        }
    }

    void on_timer(const Timer& t) override {
        if (!active) return;
        switch (t.kind) {
            case THeartbeat: do_heartbeat(); break;
            case TCycleShare: do_cycle_share(t.a); break;
            case TCycleSeal: do_cycle_seal(t.a); break;
            case TCycleBegin: do_cycle_begin(t.a); break;
            case TBft: {
                auto it = bft_timers.find(t.token);
                if (it == bft_timers.end()) break;
                auto scope = it->second;
                bft_timers.erase(it);
                auto ii = instances.find(scope);
                if (ii != instances.end()) ii->second->on_timer(t.token);
                break;
            }
            case TFetchRetry: on_fetch_retry(t.a, static_cast<BgId>(t.b), t.token); break;
            case TRepSweep: do_rep_sweep(); break;
            case TTierPing: do_tier_ping(); break;
            case TProbe: on_probe_timeout(t.a); break;
            case TRemovalWindow: on_removal_window(static_cast<NodeId>(t.a)); break;
            case TStatusWindow: on_status_window(static_cast<BgId>(t.a), t.b); break;
            case TExclusionWindow: on_exclusion_window(static_cast<BgId>(t.a)); break;
            case TEpochKick: do_epoch_kick(t.a); break;
            case TAttestKick: do_attest_kick(t.a); break;
            case TAssistRetry: do_assist_request(t.a, true); break;
            case TOutcomeRetry: do_outcome_query(t.a, true); break;
            case TStallRecheck: do_stall_recheck(); break;
            default: break;
        }
    }

    // ==================================================================
    // heartbeats, liveness, roles

    void do_heartbeat() {
        arm(THeartbeat, w.engine.now() + w.timing.heartbeat);
        auto hb = std::make_shared<MsgHeartbeat>();
        for (NodeId m : sl_members)
            if (m != self) send(m, hb);
        scan_liveness();
    }

    bool raw_quorum() const {
        std::uint32_t n = 1;
        for (NodeId m : sl_members)
            if (m != self && sl_live.fresh(m, w.engine.now(), hb_window())) ++n;
        return n >= w.topo.sl_quorum();
    }

    NodeId raw_lowest_fresh() const {
        for (NodeId m : sl_members)
            if (m == self || sl_live.fresh(m, w.engine.now(), hb_window())) return m;
        return self;
    }

    void scan_liveness() {
        bool was_monitor = i_am_monitor();
        for (NodeId m : sl_members) {
            if (m == self || sl_excluded.count(m)) continue;
            if (heard_once.count(m) && !sl_live.fresh(m, w.engine.now(), hb_window())) {
                sl_excluded.insert(m);
                emit("sl_exclude", {{"node", w.actor_name(m)}});
                if (i_am_monitor() && sl_has_quorum()) start_removal_vote(m);
            }
        }
        if (!sl_has_quorum() && !sl_stalled && !in_grace()) {
            sl_stalled = true;
            emit("sl_stalled", {{"sl", sl}});
        }
        if (!was_monitor && i_am_monitor() && !sl_stalled) {
            emit("monitor_elect", {{"sl", sl}});
            slb.resend_pending();
        }
    }

    void do_tier_ping() {
        arm(TTierPing, w.engine.now() + w.timing.big_delta / 2);
        if (i_am_excluded || sl_stalled) return;
        auto ping = std::make_shared<MsgLeaderPing>();
        ping->is_monitor = i_am_monitor();
        ping->is_leader = i_am_leader();
        if (ping->is_monitor) {
            for (SlId s : bg_sls)
                if (s != sl)
                    for (NodeId m : w.topo.nodes_of_sl(s)) send(m, ping);
        }
        if (ping->is_leader) {
            for (BgId b = 0; b < w.topo.bgs; ++b) {
                if (b == bg) continue;
                for (NodeId m : w.topo.nodes_of_bg(b)) send(m, ping);
            }
        }
    }

    void on_tier_ping(const Envelope& env) {
        const auto& ping = as<MsgLeaderPing>(env);
        if (!w.topo.is_protocol_node(env.src)) return;
        SlId src_sl = w.topo.sl_of(env.src);
        BgId src_bg = w.topo.bg_of(env.src);
        if (ping.is_monitor && src_bg == bg) monitor_seen[src_sl] = {env.src, w.engine.now()};
        if (ping.is_leader) leader_seen[src_bg] = {env.src, w.engine.now()};
    }

    // ==================================================================
    // cycle schedule and intra-SL broadcast

    void schedule_cycle_timers_for(Cycle c) {
        if (!scheduled_cycles_.insert(c).second) return;
        Tick start = w.timing.cycle_start(c);
        arm(TCycleBegin, start + 1, c);
        arm(TCycleShare, start + w.timing.batch, c);
        arm(TCycleSeal, start + 2 * w.timing.batch - 3 * w.timing.delta, c);
    }

    void do_cycle_begin(Cycle c) {
        schedule_cycle_timers_for(c + 1);
        if (i_am_excluded || sl_stalled) return;
        if (i_am_monitor()) {
            auto q = std::make_shared<MsgMembershipQuery>();
            q->cycle = c;
            NodeId ldr = leader_of(bg);
            if (ldr == self) {
                answer_membership(self, c);
            } else {
                send(ldr, q);
            }
        }
        // retention follows commit progress: while commits are stalled the
        // buffer keeps every pending nonce, so late client retries stay exact
        dedup.evict_before(next_commit);
        (void)c;
    }

    void do_cycle_share(Cycle c) {
        if (i_am_excluded || sl_stalled || global_stalled) return;
        if (pending_txs.empty()) return;
        TransactionBlock tb;
        tb.origin_node = self;
        tb.cycle = c;
        tb.txs = std::move(pending_txs);
        pending_txs.clear();
        for (const auto& tx : tb.txs) shared_in[tx.dedup_key()] = c;
        auto share = std::make_shared<SlbTbShare>();
        share->tb = std::move(tb);
        slb.broadcast(share);
    }

    void do_cycle_seal(Cycle c) {
        if (i_am_excluded || sl_stalled || global_stalled) return;
        if (!i_am_monitor()) return;
        auto seal = std::make_shared<SlbSeal>();
        seal->cycle = c;
        slb.broadcast(seal);
    }

    void on_slb(NodeId origin, const MessagePtr& inner) {
        if (auto tb = std::dynamic_pointer_cast<const SlbTbShare>(inner)) {
            unsealed_tbs.push_back(tb->tb);
        } else if (auto seal = std::dynamic_pointer_cast<const SlbSeal>(inner)) {
            handle_seal(seal->cycle);
        } else if (auto fs = std::dynamic_pointer_cast<const SlbFetchedState>(inner)) {
            handle_fetched_state(fs->bg, fs->cycle, fs->state);
        } else if (auto rs = std::dynamic_pointer_cast<const SlbRepStalled>(inner)) {
            handle_rep_stalled(*rs);
        } else if (auto ds = std::dynamic_pointer_cast<const SlbDecisionShare>(inner)) {
            handle_own_decision(ds->decision);
        } else if (auto rp = std::dynamic_pointer_cast<const SlbReplyShare>(inner)) {
            handle_cm_reply(rp->reply);
        } else if (auto dn = std::dynamic_pointer_cast<const SlbDenyShare>(inner)) {
            handle_cm_deny(dn->deny);
        } else if (auto rd = std::dynamic_pointer_cast<const SlbReadmit>(inner)) {
            sl_excluded.erase(rd->node);
        } else if (auto ex = std::dynamic_pointer_cast<const SlbExclusionShare>(inner)) {
            apply_exclusion(ex->record, false);
        } else if (auto st = std::dynamic_pointer_cast<const SlbStallMarker>(inner)) {
            if (st->stalled != global_stalled) {
                global_stalled = st->stalled;
                if (!global_stalled) {
                    Cycle cc = current_cycle();
                    decision_resume_floor =
                        w.engine.now() <= w.timing.cycle_start(cc) + w.timing.batch ? cc : cc + 1;
                    resume_backlog();
                }
            }
        } else if (auto ep = std::dynamic_pointer_cast<const SlbEpochShare>(inner)) {
            apply_epoch(ep->view);
        } else if (auto sp = std::dynamic_pointer_cast<const SyncPackage>(inner)) {
            adopt_sync(*sp);
        }
        (void)origin;
    }

    void handle_seal(Cycle c) {
        SlContribution contrib;
        contrib.sl_id = sl;
        for (auto& tb : unsealed_tbs)
            if (!tb.txs.empty()) contrib.tbs.push_back(tb);
        unsealed_tbs.clear();
        sealed[c] = contrib;
        emit("seal", {{"cycle", c}, {"blocks", contrib.tbs.size()}});
        if (i_am_monitor()) start_decision_instance(c);
    }

    // ==================================================================
    // BG consensus (cycle decision instances)

    static std::string decision_scope(BgId b, Cycle c) {
        return "d/" + std::to_string(b) + "/" + std::to_string(c);
    }

    static bool parse_decision_scope(const std::string& scope, BgId& b, Cycle& c) {
        if (scope.rfind("d/", 0) != 0) return false;
        auto slash = scope.find('/', 2);
        if (slash == std::string::npos) return false;
        b = static_cast<BgId>(std::stoul(scope.substr(2, slash - 2)));
        c = std::stoull(scope.substr(slash + 1));
        return true;
    }

    BftInstance& ensure_decision_instance(Cycle c) {
        std::string scope = decision_scope(bg, c);
        auto it = instances.find(scope);
        if (it != instances.end()) return *it->second;
        auto inst = std::make_unique<BftInstance>();
        inst->cfg.scope = scope;
        inst->cfg.cert_scope = bg;
        inst->cfg.cert_cycle = c;
        inst->cfg.slots.assign(bg_sls.begin(), bg_sls.end());
        inst->cfg.my_slot = sl;
        inst->cfg.quorum = w.topo.bg_quorum();
        inst->cfg.rotation_base = static_cast<std::uint32_t>(c % bg_sls.size());
        inst->cfg.view_timeout = 2 * w.timing.big_delta;
        inst->cfg.aggregation = true;
        inst->cfg.input_window = w.timing.big_delta;
        inst->self_principal_ = self;
        wire_instance(*inst, /*cycle_instance=*/true);
        inst->build = [this, c](const auto& inputs) { return build_aggregate(c, inputs); };
        inst->validate = [this, c](const BftPayload& p) { return validate_decision(c, p); };
        inst->on_decide = [this, c](BftPayloadPtr p, const QuorumCertificate& qc) {
            auto dp = std::dynamic_pointer_cast<const DecisionPayload>(p);
            if (!dp) return;
            decided_cycle(c, CertifiedDecision{dp->decision, qc});
        };
        if (byz().equivocate_state) {
            inst->byz_equivocate = true;
            inst->byz_sign_everything = true;
            inst->byz_mutate = [](const BftPayload& p) -> BftPayloadPtr {
                const auto* dp = dynamic_cast<const DecisionPayload*>(&p);
                if (!dp) return nullptr;
                auto d2 = std::make_shared<BgDecision>(*dp->decision);
                for (auto ci = d2->contributions.rbegin(); ci != d2->contributions.rend(); ++ci) {
                    if (ci->tbs.empty()) continue;
                    auto& tb = ci->tbs.back();
                    tb.txs.pop_back();
                    if (tb.txs.empty()) ci->tbs.pop_back();
                    auto alt = std::make_shared<DecisionPayload>();
                    alt->decision = d2;
                    return alt;
                }
                return nullptr;
            };
        }
        if (byz().sign_everything) inst->byz_sign_everything = true;
        auto [nit, ok] = instances.emplace(scope, std::move(inst));
        return *nit->second;
    }

    void wire_instance(BftInstance& inst, bool cycle_instance) {
        inst.w.send_to_slot = [this, cycle_instance](std::uint32_t slot,
                                                     std::shared_ptr<ProtoMessage> msg) {
            NodeId dst = cycle_instance ? monitor_of(static_cast<SlId>(slot))
                                        : leader_of(static_cast<BgId>(slot));
            send(dst, std::move(msg));
        };
        inst.w.sign = [this](const Digest& d) { return default_provider().sign(w.key_of(self), d); };
        inst.w.verify = [this](const Signature& s, const Digest& d) {
            return default_provider().verify(w.directory, s, d);
        };
        inst.w.slot_of = [this, cycle_instance](PrincipalId p) -> std::int64_t {
            if (!w.topo.is_protocol_node(static_cast<NodeId>(p))) return -1;
            NodeId n = static_cast<NodeId>(p);
            if (cycle_instance)
                return w.topo.bg_of(n) == bg ? static_cast<std::int64_t>(w.topo.sl_of(n)) : -1;
            return static_cast<std::int64_t>(w.topo.bg_of(n));
        };
        inst.w.now = [this] { return w.engine.now(); };
        std::string scope = inst.cfg.scope;
        inst.w.arm_timer = [this, scope](Tick at) {
            auto token = arm(TBft, at);
            bft_timers[token] = scope;
            return token;
        };
        inst.w.cancel_timer = [this](std::uint64_t token) {
            bft_timers.erase(token);
            w.engine.cancel_timer(token);
        };
    }

    void start_decision_instance(Cycle c) {
        auto& inst = ensure_decision_instance(c);
        auto input = std::make_shared<MsgBftInput>();
        input->scope = inst.cfg.scope;
        input->from_sl = sl;
        auto sit = sealed.find(c);
        if (sit != sealed.end()) input->tbs = sit->second.tbs;
        if (w.policy.mode == RunMode::Cm) {
            for (auto& [key, who] : rep_stalls) {
                auto [cyc, b] = key;
                if (all_reps_stalled(cyc, b) && !replies.count(cyc) && !denies.count(cyc) &&
                    !declared_seeks.count(cyc))
                    input->stalled_cycles.push_back(cyc);
            }
            if (c >= w.timing.pipeline_k) {
                auto meta = resolve_meta(c - w.timing.pipeline_k);
                if (meta) input->metas.push_back(*meta);
            }
        }
        for (SlId s : pending_readmits) input->readmit_sls.push_back(s);
        pending_readmits.clear();
        if (!inst.started()) {
            inst.start(input);
        } else {
            inst.submit_input(input);
        }
    }
    std::vector<SlId> pending_readmits;

    std::optional<BgMeta> resolve_meta(Cycle about) {
        BgMeta m;
        m.about_cycle = about;
        if (declared_seeks.count(about)) {
            auto rit = replies.find(about);
            if (rit != replies.end()) {
                m.flavor = MetaFlavor::Assisted;
                m.reply = rit->second;
                return m;
            }
            auto dit = denies.find(about);
            if (dit != denies.end()) {
                m.flavor = MetaFlavor::Denied;
                m.deny = dit->second;
                return m;
            }
            m.flavor = MetaFlavor::Pending;
            return m;
        }
        auto cit = cycles.find(about);
        if (cit != cycles.end() && cit->second.phase == CyclePhase::Complete) {
            m.flavor = MetaFlavor::NoAsst;
            return m;
        }
        return std::nullopt;  // unresolved; peers fall back to the CM query path
    }

    static int meta_rank(MetaFlavor f) {
        switch (f) {
            case MetaFlavor::Assisted: return 3;
            case MetaFlavor::Denied: return 2;
            case MetaFlavor::NoAsst: return 1;
            case MetaFlavor::Pending: return 0;
        }
        return 0;
    }

    BftPayloadPtr build_aggregate(Cycle c,
                                  const std::vector<std::shared_ptr<const MsgBftInput>>& inputs) {
        if (!can_sequence(c)) return nullptr;  // dedup sequencing
        auto d = std::make_shared<BgDecision>();
        d->bg_id = bg;
        d->cycle = c;
        std::vector<SlContribution> contribs;
        std::set<SlId> seen_sls;
        std::set<Cycle> seeks;
        std::set<SlId> readmits;
        std::map<Cycle, BgMeta> metas;
        for (const auto& in : inputs) {
            if (!seen_sls.insert(in->from_sl).second) continue;
            SlContribution sc;
            sc.sl_id = in->from_sl;
            sc.tbs = in->tbs;
            contribs.push_back(std::move(sc));
            for (Cycle s : in->stalled_cycles)
                if (!replies.count(s) && !denies.count(s)) seeks.insert(s);
            for (SlId s : in->readmit_sls) readmits.insert(s);
            for (const auto& m : in->metas) {
                auto [mit, fresh] = metas.emplace(m.about_cycle, m);
                if (!fresh && meta_rank(m.flavor) > meta_rank(mit->second.flavor)) mit->second = m;
            }
        }
        if (byz().omit_transactions && contribs.size() > 1) {
            std::sort(contribs.begin(), contribs.end(),
                      [](const auto& a, const auto& b) { return a.sl_id < b.sl_id; });
            for (std::size_t i = 0; i < contribs.size(); ++i) {
                if (contribs[i].sl_id != sl) {
                    contribs.erase(contribs.begin() + i);
                    break;
                }
            }
        }
        d->contributions = dedup_contributions(std::move(contribs), dedup);
        for (Cycle s : seeks) d->seek_cycles.push_back(s);
        for (SlId s : readmits) d->readmitted_sls.push_back(s);
        for (auto& [about, m] : metas) d->metas.push_back(m);
        auto payload = std::make_shared<DecisionPayload>();
        payload->decision = d;
        return payload;
    }

    bool validate_decision(Cycle c, const BftPayload& p) {
        if (!can_sequence(c)) return false;
        const auto* dp = dynamic_cast<const DecisionPayload*>(&p);
        if (!dp || !dp->decision) return false;
        const SlContribution* mine = nullptr;
        auto sit = sealed.find(c);
        if (sit != sealed.end()) mine = &sit->second;
        auto chk = validate_aggregate(*dp->decision, bg, c, mine, dedup, w.directory,
                                      declared_seeks, w.timing.pipeline_k);
        return chk.ok;
    }

    void on_bft_input(const Envelope& env) {
        const auto& in = as<MsgBftInput>(env);
        auto* inst = instance_for_scope(in.scope);
        if (!inst) return;
        inst->on_input(std::make_shared<MsgBftInput>(in), env.src);
    }

    void on_bft_sign_req(const Envelope& env) {
        const auto& req = as<MsgBftSignReq>(env);
        BgId sb;
        Cycle sc;
        if (parse_decision_scope(req.scope, sb, sc) && sb == bg && !can_sequence(sc)) {
            deferred_signs[sc].emplace_back(req, env.src);
            return;
        }
        auto* inst = instance_for_scope(req.scope);
        if (!inst) return;
        inst->on_sign_req(req, env.src);
    }

    void on_bft_generic(const Envelope& env) {
        const auto* pm = static_cast<const ProtoMessage*>(env.payload.get());
        std::string scope;
        switch (pm->kind) {
            case MsgKind::BftSignResp: scope = as<MsgBftSignResp>(env).scope; break;
            case MsgKind::BftDecide: scope = as<MsgBftDecide>(env).scope; break;
            case MsgKind::BftNewView: scope = as<MsgBftNewView>(env).scope; break;
            default: return;
        }
        auto* inst = instance_for_scope(scope);
        if (!inst) return;
        switch (pm->kind) {
            case MsgKind::BftSignResp: inst->on_sign_resp(as<MsgBftSignResp>(env), env.src); break;
            case MsgKind::BftDecide: inst->on_decide_msg(as<MsgBftDecide>(env)); break;
            case MsgKind::BftNewView: inst->on_new_view(as<MsgBftNewView>(env), env.src); break;
            default: break;
        }
    }

    BftInstance* instance_for_scope(const std::string& scope) {
        if (i_am_excluded || sl_stalled || global_stalled) return nullptr;
        auto it = instances.find(scope);
        if (it != instances.end()) return it->second.get();
        BgId b;
        Cycle c;
        if (parse_decision_scope(scope, b, c)) {
            if (b != bg || !i_am_monitor()) return nullptr;
            auto& inst = ensure_decision_instance(c);
            if (!inst.started()) inst.start(nullptr);
            return &inst;
        }
        if (scope.rfind("e/", 0) == 0) {
            EpochId e = std::stoull(scope.substr(2));
            if (!i_am_monitor()) return nullptr;
            auto& inst = ensure_epoch_instance(e);
            if (!inst.started()) inst.start(nullptr);
            return &inst;
        }
        return nullptr;
    }

    void decided_cycle(Cycle c, CertifiedDecision cd) {
        emit("bg_decide", {{"bg", bg}, {"cycle", c}, {"root", cd.qc.payload_root.short_hex()}});
        auto share = std::make_shared<SlbDecisionShare>();
        share->decision = cd;
        slb.broadcast(share);
        handle_own_decision(cd);
    }

    void handle_own_decision(const CertifiedDecision& cd) {
        if (!cd.decision) return;
        Cycle c = cd.decision->cycle;
        if (own_decisions.count(c)) return;
        own_decisions[c] = cd;
        for (const auto& contrib : cd.decision->contributions)
            for (const auto& tb : contrib.tbs)
                for (const auto& tx : tb.txs) dedup.remember(tx.dedup_key(), c);
        for (Cycle s : cd.decision->seek_cycles) {
            declared_seeks.insert(s);
            declared_in.emplace(s, c);
            if (i_am_leader()) do_assist_request(s, false);
        }
        for (const auto& m : cd.decision->metas) {
            if (m.flavor == MetaFlavor::Assisted && m.reply) handle_cm_reply(m.reply);
            if (m.flavor == MetaFlavor::Denied && m.deny) handle_cm_deny(m.deny);
        }
        auto pit = pending_pushes.find(c);
        if (pit != pending_pushes.end()) {
            for (NodeId r : pit->second) send_state_response(r, c, cd);
            pending_pushes.erase(pit);
        }
        auto& cs = ensure_cycle(c);
        cs.own = cd;
        if (i_am_rep() && !sl_stalled && !global_stalled) start_fetches(c);
        auto dit = deferred_signs.find(c + 1);
        if (dit != deferred_signs.end()) {
            auto queued = std::move(dit->second);
            deferred_signs.erase(dit);
            for (auto& [req, src] : queued) {
                auto* inst = instance_for_scope(req.scope);
                if (inst) inst->on_sign_req(req, src);
            }
        }
        try_complete(c);
        try_classify_all();
    }

    // ==================================================================
    // state exchange

    CycleState& ensure_cycle(Cycle c) {
        auto it = cycles.find(c);
        if (it == cycles.end()) {
            it = cycles.emplace(c, CycleState{}).first;
            it->second.cycle = c;
        }
        return it->second;
    }

    std::vector<NodeId> emulator_order(Cycle c, BgId b) const {
        auto v = view_for(c);
        std::vector<NodeId> raw;
        auto it = v->emulators.find(b);
        if (it != v->emulators.end()) raw = it->second;
        std::vector<NodeId> ems;
        for (NodeId n : raw)
            if (!removed_emulators.count(n)) ems.push_back(n);
        if (ems.empty()) return ems;
        std::map<SlId, std::vector<NodeId>> by_sl;
        for (NodeId n : ems) by_sl[w.topo.sl_of(n)].push_back(n);
        std::vector<std::vector<NodeId>> groups;
        groups.reserve(by_sl.size());
        for (auto& [s, nodes] : by_sl) groups.push_back(nodes);
        std::uint64_t salt = c * 1000003ull + sl * 7919ull + b * 104729ull;
        std::rotate(groups.begin(), groups.begin() + (salt % groups.size()), groups.end());
        std::vector<NodeId> order;
        for (std::size_t round = 0;; ++round) {
            bool any = false;
            for (auto& g : groups) {
                if (round < g.size()) {
                    order.push_back(g[(round + salt) % g.size()]);
                    any = true;
                }
            }
            if (!any) break;
        }
        std::set<NodeId> seen;
        std::vector<NodeId> out;
        for (NodeId n : order)
            if (seen.insert(n).second) out.push_back(n);
        return out;
    }

    Tick retry_timeout() const {
        if (ema_response == 0) return w.timing.big_delta;
        Tick t = 2 * ema_response;
        return std::min(std::max<Tick>(t, 50), w.timing.big_delta);
    }

    void start_fetches(Cycle c) {
        auto& cs = ensure_cycle(c);
        for (BgId b : required_bgs(c)) {
            if (cs.fetched.count(b)) continue;
            auto& fs = cs.fetches[b];
            if (fs.attempt > 0 || fs.resolved) continue;
            fetch_step(c, b);
        }
    }

    void fetch_step(Cycle c, BgId b) {
        auto& cs = ensure_cycle(c);
        auto& fs = cs.fetches[b];
        if (fs.resolved || sl_stalled || global_stalled || i_am_excluded) return;
        if (!required_bgs(c).count(b)) {
            fs.resolved = true;
            return;
        }
        auto order = emulator_order(c, b);
        std::uint32_t batch = fs.attempt == 0 ? 1 : w.topo.f_i;
        bool sent = false;
        for (std::uint32_t i = 0; i < batch; ++i) {
            if (fs.attempt >= order.size()) break;
            NodeId em = order[fs.attempt++];
            fs.contacted.insert(em);
            auto req = std::make_shared<MsgStateRequest>();
            req->target_bg = b;
            req->cycle = c;
            req->requester_sl = sl;
            req->requester_bg = bg;
            send(em, req);
            emit("state_req", {{"bg", b}, {"cycle", c}, {"emulator", w.actor_name(em)}});
            sent = true;
        }
        if (!sent) {
            mark_rep_stalled(c, b);
            return;
        }
        fs.timer_token = arm(TFetchRetry, w.engine.now() + retry_timeout(), c, b);
        fetch_sent_at[{c, b}] = w.engine.now();
    }

    void on_fetch_retry(Cycle c, BgId b, std::uint64_t token) {
        auto it = cycles.find(c);
        if (it == cycles.end()) return;
        auto& fs = it->second.fetches[b];
        if (fs.resolved || fs.timer_token != token) return;
        fetch_step(c, b);
    }

    void mark_rep_stalled(Cycle c, BgId b) {
        auto& fs = ensure_cycle(c).fetches[b];
        if (fs.stalled) return;
        fs.stalled = true;
        emit("rep_stalled", {{"cycle", c}, {"bg", b}});
        auto msg = std::make_shared<SlbRepStalled>();
        msg->cycle = c;
        msg->bg = b;
        msg->rep = self;
        slb.broadcast(msg);
    }

    void do_rep_sweep() {
        arm(TRepSweep, w.engine.now() + 2 * w.timing.big_delta);
        if (!i_am_rep() || sl_stalled || global_stalled || i_am_excluded) return;
        for (auto& [c, cs] : cycles) {
            if (cs.phase != CyclePhase::Exchanging) continue;
            bool own_needed = !bg_excluded_at(bg, c);
            if (own_needed && !cs.own) continue;
            for (BgId b : required_bgs(c)) {
                if (cs.fetched.count(b)) continue;
                auto& fs = cs.fetches[b];
                if (fs.resolved) continue;
                // revive only exhausted fetches (covers partition heal);
                // in-flight attempts keep their own retry chain
                if (!fs.stalled && fs.attempt > 0) continue;
                fs.attempt = 0;
                fetch_step(c, b);
                // when a certified outcome says the input exists, peers that
                // hold it can relay
                if (replies.count(c) && replies.at(c)->committed.count(b)) {
                    auto rq = std::make_shared<MsgRelayQuery>();
                    rq->about_bg = b;
                    rq->cycle = c;
                    for (BgId ob : view_for(c)->bgs)
                        if (ob != bg && ob != b) send(leader_of(ob), rq);
                }
            }
        }
    }

    void on_state_request(const Envelope& env) {
        const auto& req = as<MsgStateRequest>(env);
        if (req.target_bg != bg) return;
        if (sl_stalled || global_stalled || i_am_excluded) return;
        if (byz().silent_emulator) return;
        if (w.policy.mode == RunMode::Global && bg_excluded_at(req.requester_bg, current_cycle())) {
            auto resp = std::make_shared<MsgStateResponse>();
            resp->rkind = MsgStateResponse::Kind::Refuse;
            resp->target_bg = bg;
            resp->cycle = req.cycle;
            send(env.src, resp);
            return;
        }
        auto dit = own_decisions.find(req.cycle);
        if (dit == own_decisions.end()) {
            auto resp = std::make_shared<MsgStateResponse>();
            resp->rkind = MsgStateResponse::Kind::Null;
            resp->target_bg = bg;
            resp->cycle = req.cycle;
            send(env.src, resp);
            pending_pushes[req.cycle].insert(env.src);
            emit("state_resp",
                 {{"cycle", req.cycle}, {"to", w.actor_name(env.src)}, {"kind", "null"}});
            return;
        }
        send_state_response(env.src, req.cycle, dit->second);
    }

    void send_state_response(NodeId dst, Cycle c, const CertifiedDecision& cd) {
        auto resp = std::make_shared<MsgStateResponse>();
        resp->rkind = MsgStateResponse::Kind::Full;
        resp->target_bg = bg;
        resp->cycle = c;
        if (byz().lie_in_response) {
            auto lie = std::make_shared<BgDecision>(*cd.decision);
            lie->readmitted_sls.push_back(9999);  // payload no longer matches the certificate
            resp->state = CertifiedDecision{lie, cd.qc};
        } else {
            resp->state = cd;
        }
        send(dst, resp);
        emit("state_resp", {{"cycle", c}, {"to", w.actor_name(dst)}, {"kind", "full"}});
    }

    void on_state_response(const Envelope& env) {
        const auto& resp = as<MsgStateResponse>(env);
        if (sl_stalled || global_stalled || i_am_excluded) return;
        auto it = cycles.find(resp.cycle);
        if (it == cycles.end()) return;
        auto& cs = it->second;
        auto fit = cs.fetches.find(resp.target_bg);
        if (fit != cs.fetches.end() && !fit->second.resolved) {
            auto sit = fetch_sent_at.find({resp.cycle, resp.target_bg});
            if (sit != fetch_sent_at.end() && w.engine.now() > sit->second) {
                Tick sample = w.engine.now() - sit->second;
                ema_response = ema_response == 0 ? sample : (3 * ema_response + sample) / 4;
            }
        }
        if (resp.rkind == MsgStateResponse::Kind::Refuse && !got_refused) {
            // peers certified our exclusion; the BG must formally rejoin
            got_refused = true;
            auto share = std::make_shared<SlbStallMarker>();
            share->stalled = true;
            slb.broadcast(share);
            enter_global_stall();
        }
        if (resp.rkind != MsgStateResponse::Kind::Full || !resp.state) return;
        if (cs.fetched.count(resp.target_bg)) return;
        if (!verify_remote_state(resp.target_bg, resp.cycle, *resp.state)) {
            emit("state_rejected", {{"cycle", resp.cycle}, {"bg", resp.target_bg}});
            return;  // counts as no response; retries continue
        }
        auto share = std::make_shared<SlbFetchedState>();
        share->bg = resp.target_bg;
        share->cycle = resp.cycle;
        share->state = *resp.state;
        slb.broadcast(share);
        if (fit != cs.fetches.end()) {
            fit->second.resolved = true;
            if (fit->second.timer_token) w.engine.cancel_timer(fit->second.timer_token);
        }
        handle_fetched_state(resp.target_bg, resp.cycle, *resp.state);
    }

    bool verify_remote_state(BgId b, Cycle c, const CertifiedDecision& cd) const {
        if (!cd.decision || cd.decision->bg_id != b || cd.decision->cycle != c) return false;
        if (cd.decision->payload_root() != cd.qc.payload_root) return false;
        auto v = view_for(c);
        auto qit = v->quorum_sizes.find(b);
        std::uint32_t quorum = qit != v->quorum_sizes.end() ? qit->second : w.topo.bg_quorum();
        return verify_bg_qc(cd.qc, b, c, quorum, w.directory, w.topo);
    }

    void handle_fetched_state(BgId b, Cycle c, const CertifiedDecision& cd) {
        auto& cs = ensure_cycle(c);
        if (cs.fetched.count(b)) return;
        if (!verify_remote_state(b, c, cd)) return;
        cs.fetched[b] = cd;
        auto fit = cs.fetches.find(b);
        if (fit != cs.fetches.end()) {
            fit->second.resolved = true;
            if (fit->second.timer_token) w.engine.cancel_timer(fit->second.timer_token);
        }
        for (const auto& m : cd.decision->metas) {
            if (m.flavor == MetaFlavor::Assisted && m.reply) handle_cm_reply(m.reply);
            if (m.flavor == MetaFlavor::Denied && m.deny) handle_cm_deny(m.deny);
        }
        try_complete(c);
        try_classify_all();
    }

    void on_relay_query(const Envelope& env) {
        const auto& q = as<MsgRelayQuery>(env);
        if (sl_stalled || global_stalled || i_am_excluded) return;
        auto resp = std::make_shared<MsgRelayResponse>();
        resp->about_bg = q.about_bg;
        resp->cycle = q.cycle;
        if (q.about_bg == bg) {
            auto dit = own_decisions.find(q.cycle);
            if (dit != own_decisions.end()) resp->state = dit->second;
        } else {
            auto it = cycles.find(q.cycle);
            if (it != cycles.end()) {
                auto fit = it->second.fetched.find(q.about_bg);
                if (fit != it->second.fetched.end()) resp->state = fit->second;
            }
        }
        send(env.src, resp);
    }

    void on_relay_response(const Envelope& env) {
        const auto& r = as<MsgRelayResponse>(env);
        if (!r.state) return;
        handle_fetched_state(r.about_bg, r.cycle, *r.state);
    }

    void handle_rep_stalled(const SlbRepStalled& rs) {
        rep_stalls[{rs.cycle, rs.bg}].insert(rs.rep);
        if (!i_am_monitor() || sl_stalled) return;
        if (!all_reps_stalled(rs.cycle, rs.bg)) return;
        if (w.policy.mode == RunMode::Global &&
            !status_consensus_done.count({rs.bg, rs.cycle}) && !bg_excluded_at(rs.bg, rs.cycle)) {
            start_bg_status_vote(rs.bg, rs.cycle);
        }
    }

    bool all_reps_stalled(Cycle c, BgId b) const {
        auto it = rep_stalls.find({c, b});
        if (it == rep_stalls.end()) return false;
        auto reps = representatives();
        if (reps.empty()) return false;
        for (NodeId r : reps)
            if (!it->second.count(r)) return false;
        return true;
    }

    // ==================================================================
    // completion, classification, commitment

    void try_complete(Cycle c) {
        auto& cs = ensure_cycle(c);
        if (cs.phase == CyclePhase::Complete) return;
        if (global_stalled || sl_stalled || i_am_excluded) return;
        bool own_needed = !bg_excluded_at(bg, c);
        if (own_needed && !cs.own) return;
        if (w.policy.mode == RunMode::Cm && declared_seeks.count(c) && !replies.count(c) &&
            !denies.count(c))
            return;
        for (BgId b : required_bgs(c))
            if (!cs.fetched.count(b)) return;
        cs.phase = CyclePhase::Complete;
        cs.completed_at = w.engine.now();
        emit("complete", {{"cycle", c}});
        if (w.on_bg_complete) w.on_bg_complete(bg, c);
        try_classify_all();
        try_commits();
    }

    void try_classify_all() {
        if (w.policy.mode != RunMode::Cm) {
            try_commits();
            return;
        }
        Cycle k = w.timing.pipeline_k;
        for (auto& [c, cs] : cycles) {
            if (cs.phase != CyclePhase::Complete || c < k) continue;
            Cycle about = c - k;
            if (classifications.count(about)) continue;
            classify(about, c);
        }
        try_commits();
    }

    void classify(Cycle about, Cycle carrier) {
        auto rit = replies.find(about);
        if (rit != replies.end()) {
            settle_classification(about, Classification{CycleOutcome::Assisted, rit->second});
            return;
        }
        if (denies.count(about)) {
            settle_classification(about, Classification{CycleOutcome::Unassisted, nullptr});
            return;
        }
        auto& cs = cycles.at(carrier);
        std::map<BgId, const BgMeta*> metas;
        auto scan = [&](const BgDecision& d) {
            for (const auto& m : d.metas)
                if (m.about_cycle == about) metas[d.bg_id] = &m;
        };
        if (cs.own) scan(*cs.own->decision);
        for (auto& [b, cd] : cs.fetched) scan(*cd.decision);
        for (auto& [b, m] : metas) {
            if (m->flavor == MetaFlavor::Assisted && m->reply) {
                handle_cm_reply(m->reply);
                return;  // handle_cm_reply settles via the replies map
            }
        }
        bool all_present = true;
        for (BgId b : view_for(about)->bgs) {
            if (window_excluded(b, about)) continue;
            auto it = metas.find(b);
            if (it == metas.end() || it->second->flavor == MetaFlavor::Pending) {
                all_present = false;
                break;
            }
        }
        if (all_present) {
            settle_classification(about, Classification{CycleOutcome::Unassisted, nullptr});
            return;
        }
        if (i_am_monitor()) do_outcome_query(about, false);
    }

    void settle_classification(Cycle about, Classification cls) {
        if (classifications.count(about)) return;
        classifications[about] = cls;
        if (i_am_monitor())
            emit("classify",
                 {{"cycle", about},
                  {"outcome",
                   cls.outcome == CycleOutcome::Assisted ? "CM_ASSISTED" : "UNASSISTED"}});
        auto it = outcome_timers.find(about);
        if (it != outcome_timers.end()) {
            w.engine.cancel_timer(it->second);
            outcome_timers.erase(it);
        }
        try_commits();
    }

    bool can_commit(Cycle c) {
        auto it = cycles.find(c);
        if (it == cycles.end() || it->second.phase != CyclePhase::Complete) return false;
        Cycle k = w.timing.commit_delay();
        auto nit = cycles.find(c + k);
        if (nit == cycles.end() || nit->second.phase != CyclePhase::Complete) return false;
        if (w.policy.mode == RunMode::Cm && !classifications.count(c)) return false;
        return true;
    }

    void try_commits() {
        while (can_commit(next_commit)) {
            Cycle c = next_commit++;
            do_commit(c);
        }
    }

    void do_commit(Cycle c) {
        auto& cs = cycles.at(c);
        cs.committed = true;
        std::map<BgId, const BgDecision*> included;
        auto cit = classifications.find(c);
        if (w.policy.mode == RunMode::Cm && cit != classifications.end() &&
            cit->second.outcome == CycleOutcome::Assisted) {
            const auto& committed = cit->second.reply->committed;
            if (committed.count(bg) && cs.own) included[bg] = cs.own->decision.get();
            for (auto& [b, cd] : cs.fetched)
                if (committed.count(b)) included[b] = cd.decision.get();
        } else {
            auto consider = [&](BgId b, const CertifiedDecision& cd) {
                if (w.policy.mode == RunMode::Global && bg_excluded_at(b, c)) return;
                if (w.policy.mode == RunMode::Cm && window_excluded(b, c)) return;
                included[b] = cd.decision.get();
            };
            if (cs.own) consider(bg, *cs.own);
            for (auto& [b, cd] : cs.fetched) consider(b, cd);
        }
        if (!included.count(bg) && cs.own) {
            for (const auto& contrib : cs.own->decision->contributions)
                for (const auto& tb : contrib.tbs)
                    for (const auto& tx : tb.txs) dedup.forget(tx.dedup_key(), c);
        }
        std::vector<std::pair<Digest, const BgDecision*>> blocks;
        for (auto& [b, d] : included) blocks.emplace_back(d->payload_root(), d);
        emit_commit(c, order_blocks(std::move(blocks)));
        std::set<BgId> inc_set;
        for (auto& [b, d] : included) inc_set.insert(b);
        committed_included[c] = inc_set;
        answer_clients(c, included);
    }

    void emit_commit(Cycle c, const std::vector<std::pair<Digest, const BgDecision*>>& ordered,
                     bool adopted = false) {
        Sha256 h;
        ordered_json bgs_json = ordered_json::object();
        ordered_json roots_json = ordered_json::array();
        std::vector<std::pair<std::string, std::string>> txs_json;
        for (auto& [root, d] : ordered) {
            bgs_json[std::to_string(d->bg_id)] = root.short_hex();
            roots_json.push_back(root.hex());
            for (auto& [tb_root, tb] : d->ordered_tbs()) {
                for (const auto& tx : tb->txs) {
                    auto td = tx.digest();
                    h.update(td.bytes.data(), td.bytes.size());
                    txs_json.emplace_back(std::to_string(tx.client_id),
                                          to_hex(tx.nonce.data(), tx.nonce.size()));
                }
            }
        }
        Digest order_digest{h.finish()};
        if (adopted) {
            emit("commit", {{"cycle", c}, {"order", order_digest.short_hex()}, {"adopted", true}});
        } else {
            emit("commit", {{"cycle", c}, {"order", order_digest.short_hex()}});
        }
        if (w.manifest_needed(c, order_digest)) {
            ordered_json m;
            m["cycle"] = c;
            m["order"] = order_digest.short_hex();
            m["bgs"] = bgs_json;
            m["roots"] = roots_json;
            ordered_json txj = ordered_json::array();
            for (auto& [cl, nn] : txs_json) txj.push_back({{"c", cl}, {"n", nn}});
            m["txs"] = txj;
            emit("manifest", m);
        }
    }

    void answer_clients(Cycle c, const std::map<BgId, const BgDecision*>& included) {
        if (global_stalled || sl_stalled || i_am_excluded) return;
        auto it = included.find(bg);
        if (it == included.end() || owed.empty()) return;
        const BgDecision& d = *it->second;
        auto payload_tree = MerkleTree::build(d.payload_leaves());
        auto ordered = d.ordered_tbs();
        const auto& qc = cycles.at(c).own->qc;
        for (std::size_t ti = 0; ti < ordered.size(); ++ti) {
            const TransactionBlock* tb = ordered[ti].second;
            std::vector<Digest> tx_leaves;
            tx_leaves.reserve(tb->txs.size());
            for (const auto& tx : tb->txs) tx_leaves.push_back(tx.digest());
            std::optional<MerkleTree> tb_tree;
            for (std::size_t xi = 0; xi < tb->txs.size(); ++xi) {
                auto key = tb->txs[xi].dedup_key();
                auto oit = owed.find(key);
                if (oit == owed.end()) continue;
                if (!tb_tree) tb_tree.emplace(MerkleTree::build(tx_leaves));
                CommitProof proof;
                proof.tx_digest = tb->txs[xi].digest();
                proof.tb_branch = tb_tree->prove(xi);
                proof.tb_root = ordered[ti].first;
                proof.payload_branch = payload_tree.prove(ti);
                proof.qc = qc;
                auto msg = std::make_shared<MsgCommitProof>();
                msg->proof = proof;
                msg->cycle = c;
                send(oit->second.client, msg);
                answered[key] = {proof, c};
                owed.erase(oit);
            }
        }
    }

    // ==================================================================
    // clients

    void on_client_submit(const Envelope& env) {
        const auto& msg = as<MsgClientSubmit>(env);
        const auto& tx = msg.tx;
        if (byz().ignore_client) return;
        if (sl_stalled || global_stalled || i_am_excluded) return;
        if (malicious_clients.count(tx.client_id)) return;
        if (!tx.verify(w.directory)) return;
        auto key = tx.dedup_key();
        auto ans = answered.find(key);
        if (ans != answered.end()) {
            auto m = std::make_shared<MsgCommitProof>();
            m->proof = ans->second.first;
            m->cycle = ans->second.second;
            send(env.src, m);
            return;
        }
        auto seen = client_tx_seen.find(key);
        Digest d = tx.digest();
        if (seen == client_tx_seen.end()) {
            client_tx_seen[key] = d;
            tx_store[key] = tx;
            owed[key] = Owed{tx.client_id, d};
            pending_txs.push_back(tx);
            return;
        }
        if (seen->second != d) {
            // same nonce, different payload: the client is equivocating
            malicious_clients.insert(tx.client_id);
            emit("client_flagged", {{"client", tx.client_id}});
            return;
        }
        maybe_requeue(key, tx);
    }

    /// A duplicate of a known, unanswered transaction: requeue it when the
    /// earlier copy demonstrably fell out of the pipeline (deduped away after
    /// another copy committed elsewhere, or dropped with an excluded cycle).
    void maybe_requeue(const DedupKey& key, const ClientTx& tx) {
        auto sit = shared_in.find(key);
        if (sit == shared_in.end()) return;  // still queued locally
        Cycle c = sit->second;
        auto dit = own_decisions.find(c);
        if (dit == own_decisions.end()) return;  // decision in flight
        bool present = false;
        for (const auto& contrib : dit->second.decision->contributions)
            for (const auto& tb : contrib.tbs)
                for (const auto& t : tb.txs)
                    if (t.dedup_key() == key) present = true;
        if (present) {
            auto cc = committed_included.find(c);
            if (cc == committed_included.end()) return;     // not committed yet
            if (cc->second.count(bg)) return;               // committed fine; proof path answers
        } else if (dedup.contains(key)) {
            return;  // deduped against another live copy of the same nonce
        }
        shared_in.erase(key);
        pending_txs.push_back(tx);
    }

    // ==================================================================
    // membership service

    void answer_membership(NodeId dst, Cycle c) {
        auto reply = std::make_shared<MsgMembershipReply>();
        if (w.policy.mode == RunMode::Global &&
            reachable_leader_count() < w.topo.leader_quorum()) {
            reply->loss_of_quorum = true;
            emit("loss_of_quorum", {{"cycle", c}});
        } else {
            reply->view = view();
            reply->exclusions = exclusion_records;
            reply->removed_emulators.assign(removed_emulators.begin(), removed_emulators.end());
        }
        if (dst == self) {
            apply_membership_reply(*reply);
        } else {
            send(dst, reply);
        }
    }

    void on_membership_query(const Envelope& env) {
        const auto& q = as<MsgMembershipQuery>(env);
        if (!i_am_leader() || sl_stalled) return;
        answer_membership(env.src, q.cycle);
    }

    void on_membership_reply(const Envelope& env) {
        apply_membership_reply(as<MsgMembershipReply>(env));
    }

    void apply_membership_reply(const MsgMembershipReply& r) {
        if (!i_am_monitor()) return;
        if (r.loss_of_quorum) {
            enter_global_stall();
            return;
        }
        if (global_stalled) {
            if (r.view && r.view->lists(bg)) {
                exit_global_stall();
            } else if (i_am_leader() && !rejoin_sent) {
                request_bg_rejoin();
            }
        }
        if (r.view) apply_epoch(r.view);
        for (const auto& rec : r.exclusions) apply_exclusion(rec, false);
        bool changed = false;
        for (NodeId n : r.removed_emulators) changed |= removed_emulators.insert(n).second;
        if (changed) share_view_update();
    }

    void share_view_update() {
        if (!i_am_monitor()) return;
        auto share = std::make_shared<SlbEpochShare>();
        share->view = view();
        slb.broadcast(share);
    }

    void enter_global_stall() {
        if (global_stalled) return;
        global_stalled = true;
        emit("global_stall", {});
        auto share = std::make_shared<SlbStallMarker>();
        share->stalled = true;
        slb.broadcast(share);
    }

    void exit_global_stall() {
        if (!global_stalled) return;
        global_stalled = false;
        rejoin_sent = false;
        got_refused = false;
        Cycle cc = current_cycle();
        decision_resume_floor =
            w.engine.now() <= w.timing.cycle_start(cc) + w.timing.batch ? cc : cc + 1;
        emit("global_unstall", {});
        auto share = std::make_shared<SlbStallMarker>();
        share->stalled = false;
        slb.broadcast(share);
        resume_backlog();
    }

    void resume_backlog() {
        if (!i_am_rep()) return;
        for (Cycle c = next_commit; c <= current_cycle(); ++c) {
            ensure_cycle(c);
            start_fetches(c);
            try_complete(c);
        }
    }

    void apply_exclusion(const ExclusionRecord& rec, bool from_leader_tier) {
        if (!verify_exclusion(rec)) return;
        auto& ivs = exclusion_history[rec.excluded];
        bool open_found = false;
        bool changed = false;
        for (auto& iv : ivs) {
            if (iv.to == kCycleNone) {
                open_found = true;
                if (rec.effective_cycle < iv.from) {
                    iv.from = rec.effective_cycle;
                    changed = true;
                }
            }
        }
        if (!open_found) {
            ivs.push_back({rec.effective_cycle, kCycleNone});
            exclusion_records.push_back(rec);
            changed = true;
            emit("exclusion_applied", {{"bg", rec.excluded}, {"effective", rec.effective_cycle}});
        }
        if (!changed) return;
        if (i_am_monitor()) {
            auto share = std::make_shared<SlbExclusionShare>();
            share->record = rec;
            slb.broadcast(share);
        }
        if (rec.excluded == bg) {
            enter_global_stall();
            return;
        }
        for (auto& [c, cs] : cycles)
            if (cs.phase == CyclePhase::Exchanging) try_complete(c);
        (void)from_leader_tier;
    }

    bool verify_exclusion(const ExclusionRecord& rec) const {
        if (rec.cert.signatures.size() < w.topo.leader_quorum()) return false;
        Digest msg = QuorumCertificate::signed_message(
            kGlobalScope, rec.effective_cycle,
            ExclusionRecord::statement_digest(rec.excluded, rec.effective_cycle));
        std::set<BgId> seen;
        for (const auto& sig : rec.cert.signatures) {
            NodeId n = static_cast<NodeId>(sig.signer);
            if (!w.topo.is_protocol_node(n)) return false;
            if (!seen.insert(w.topo.bg_of(n)).second) return false;
            if (!default_provider().verify(w.directory, sig, msg)) return false;
        }
        return seen.size() >= w.topo.leader_quorum();
    }

    void apply_epoch(const std::shared_ptr<const MembershipView>& v) {
        if (!v || v->epoch <= view()->epoch) return;
        if (!verify_view(*v)) return;
        epochs.push_back(v);
        emit("epoch", {{"n", v->epoch},
                       {"bgs", v->bgs},
                       {"first_cycle", v->first_cycle},
                       {"gqc", v->gqc.digest().short_hex()}});
        if (v->lists(bg) && global_stalled) exit_global_stall();
        // whole-BG removals expire when the BG is re-listed, with a short
        // grace window so the rejoiner's first decision lines up
        for (auto& [b, ivs] : exclusion_history) {
            if (!v->lists(b)) continue;
            for (auto& iv : ivs)
                if (iv.to == kCycleNone && v->first_cycle > iv.from)
                    iv.to = v->first_cycle + kResumeGrace;
            clear_exclusion_record(b);
        }
        for (auto& [c, cs] : cycles)
            if (cs.phase == CyclePhase::Exchanging) try_complete(c);
        if (i_am_monitor()) share_view_update();
    }

    void clear_exclusion_record(BgId b) {
        exclusion_records.erase(
            std::remove_if(exclusion_records.begin(), exclusion_records.end(),
                           [&](const ExclusionRecord& r) { return r.excluded == b; }),
            exclusion_records.end());
    }

    bool verify_view(const MembershipView& v) const {
        if (v.qc.signatures.size() < w.topo.leader_quorum()) return false;
        Digest msg =
            QuorumCertificate::signed_message(kGlobalScope, v.epoch, view_content_digest(v));
        std::set<BgId> seen;
        for (const auto& sig : v.qc.signatures) {
            NodeId n = static_cast<NodeId>(sig.signer);
            if (!w.topo.is_protocol_node(n)) return false;
            if (!seen.insert(w.topo.bg_of(n)).second) return false;
            if (!default_provider().verify(w.directory, sig, msg)) return false;
        }
        return seen.size() >= w.topo.leader_quorum();
    }

#include "rcsim/node_leader.inc"
};

}  // namespace rcsim
