// Convergence Module node: an RPC handler plus an RSM replica. Reports come
// in (pushed per cycle in the base protocol, pulled on demand under the
// bypass optimization), failure certificates cover silent BGs, and a graph
// analysis picks the committed set. Decisions go through the replicated log;
// the first state transition per cycle is authoritative and a validity layer
// of f+1 signatures certifies exactly one of CM_REPLY / CM_DENY per cycle.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "rcsim/bft.hpp"
#include "rcsim/certifier.hpp"
#include "rcsim/global_service.hpp"
#include "rcsim/world.hpp"

namespace rcsim {

enum CmTimerKind : int {
    TCmPing = 100,
    TCmSweep,
    TCmSuspect,   // a=cycle, b=suspect bg
    TCmSubmit,    // a=cycle (leader-preferred fallback)
};

// ---------------------------------------------------------------------------
// graph analysis (pure)

struct CommGraph {
    std::vector<BgId> vertices;                  // all BGs expected in the cycle
    std::set<BgId> failed;                       // failcert or conflicting hashes
    std::set<std::pair<BgId, BgId>> edges;       // issuer -> holder
    std::map<BgId, Digest> hashes;               // issuer -> payload hash
};

struct AnalysisResult {
    std::map<BgId, Digest> committed;
    std::set<BgId> fn;  // failed plus unselected live vertices
};

/// FULL: keep the live vertices replicated at every other live BG
/// (out-degree >= N-1 over non-failed vertices). REPLICATION(R): out-degree
/// at least R-1, the issuer's own copy counting as the R-th.
inline AnalysisResult analyze_graph(const CommGraph& g, AnalysisPolicy policy, std::uint32_t r) {
    AnalysisResult res;
    std::vector<BgId> live;
    for (BgId v : g.vertices)
        if (!g.failed.count(v)) live.push_back(v);
    std::size_t n = live.size();
    for (BgId v : live) {
        std::size_t outdeg = 0;
        for (BgId u : live)
            if (u != v && g.edges.count({v, u})) ++outdeg;
        std::size_t need = policy == AnalysisPolicy::Full
                               ? (n == 0 ? 0 : n - 1)
                               : (r == 0 ? 0 : r - 1);
        if (outdeg >= need) {
            auto it = g.hashes.find(v);
            if (it != g.hashes.end()) res.committed[v] = it->second;
        }
    }
    for (BgId v : g.vertices)
        if (!res.committed.count(v)) res.fn.insert(v);
    return res;
}

// ---------------------------------------------------------------------------

struct CmCommandPayload final : BftPayload {
    CmReplyPtr reply;
    CmDenyPtr deny;

    Cycle cycle() const { return reply ? reply->cycle : deny->cycle; }

    Digest digest() const override {
        ByteWriter w;
        w.str("rcsim-cm-cmd");
        w.u8(reply ? 1 : 0);
        if (reply) w.fixed(reply->content_digest().bytes);
        if (deny) w.fixed(deny->content_digest().bytes);
        return hash_bytes(w.bytes());
    }
};

struct CmCommandRequest final : Message {
    explicit CmCommandRequest(std::shared_ptr<const CmCommandPayload> cmd)
        : command(std::move(cmd)) {}
    std::shared_ptr<const CmCommandPayload> command;
};

class CmNode : public Actor {
public:
    CmNode(World& world, BgId host)
        : w(world), host_bg(host), self(world.topo.cm_node_id(host)),
          certifier(world.key_of(world.topo.cm_node_id(host)), &world.directory) {
        for (BgId b = 0; b < w.topo.bgs; ++b)
            if (!w.dormant_bgs.count(b)) cm_peers.push_back(w.topo.cm_node_id(b));
        auto v = std::make_shared<MembershipView>();
        v->epoch = 0;
        v->first_cycle = 0;
        for (BgId b = 0; b < w.topo.bgs; ++b)
            if (!w.dormant_bgs.count(b)) v->bgs.push_back(b);
        epochs.push_back(v);
    }

    void boot() {
        arm(TCmPing, w.engine.now() + 3);
        arm(TCmSweep, w.engine.now() + w.timing.big_delta + (self % 13));
    }

    World& w;
    const BgId host_bg;
    const NodeId self;
    std::vector<NodeId> cm_peers;

    std::vector<std::shared_ptr<const MembershipView>> epochs;
    std::map<NodeId, Tick> peer_seen;

    // per-cycle report ingestion
    struct CycleReports {
        std::map<BgId, BgReport> reports;
        std::map<BgId, Digest> issuer_hash;
        std::set<BgId> conflicted;
        std::map<BgId, std::vector<Signature>> suspicion_sigs;
        std::map<BgId, FailureCertificate> failcerts;
        std::set<BgId> my_suspicions;
        std::set<BgId> suspect_timer_armed;
        bool queried = false;
        bool analysis_proposed = false;
    };
    std::map<Cycle, CycleReports> per_cycle;
    std::set<Cycle> want;  // cycles being ingested/settled

    // RSM
    struct LogEntry {
        std::shared_ptr<const CmCommandPayload> command;
        QuorumCertificate qc;
    };
    std::vector<LogEntry> log;
    struct Outcome {
        bool is_reply = false;
        CmReplyPtr reply;
        CmDenyPtr deny;
        std::uint64_t seq = 0;
        bool certified = false;
    };
    std::map<Cycle, Outcome> outcomes;
    Cycle applied_reply_high = 0;   // highest cycle with an applied REPLY
    bool any_applied_reply = false;

    DecisionCertifier certifier;
    std::map<std::pair<Cycle, std::string>, std::vector<Signature>> validity_collect;
    std::map<std::string, std::unique_ptr<BftInstance>> instances;
    std::map<std::uint64_t, std::string> bft_timers;
    std::vector<std::pair<MsgBftSignReq, PrincipalId>> deferred_signs;
    std::map<Cycle, std::uint64_t> submit_fallback_timers;

    std::map<Cycle, std::set<NodeId>> pending_assists;
    std::map<Cycle, std::set<NodeId>> pending_outcome_queries;

    // ------------------------------------------------------------------

    void send(NodeId dst, MessagePtr msg) { w.send(self, dst, std::move(msg)); }
    std::uint64_t arm(int kind, Tick at, std::uint64_t a = 0, std::uint64_t b = 0) {
        if (at <= w.engine.now()) at = w.engine.now() + 1;
        return w.engine.schedule_timer(self, at, kind, a, b);
    }
    void emit(const std::string& kind, ordered_json fields = {}) {
        w.emit(kind, self, std::move(fields));
    }

    std::shared_ptr<const MembershipView> view_for(Cycle c) const {
        for (auto it = epochs.rbegin(); it != epochs.rend(); ++it)
            if ((*it)->first_cycle <= c) return *it;
        return epochs.front();
    }

    bool window_excluded(BgId b, Cycle c) const {
        for (const auto& [cyc, out] : outcomes) {
            if (!out.is_reply || !out.reply) continue;
            if (out.reply->exclusion_horizon == 0 || !out.reply->fn.count(b)) continue;
            Cycle from = cyc + w.timing.pipeline_k;
            Cycle to = from + out.reply->exclusion_horizon;
            if (c >= from && c < to) return true;
        }
        return false;
    }

    std::vector<BgId> vertices_for(Cycle c) const {
        std::vector<BgId> out;
        for (BgId b : view_for(c)->bgs)
            if (!window_excluded(b, c)) out.push_back(b);
        return out;
    }

    bool cm_peer_fresh(NodeId p) const {
        if (p == self) return true;
        auto it = peer_seen.find(p);
        return (it != peer_seen.end() && w.engine.now() <= it->second + 2 * w.timing.big_delta) ||
               w.engine.now() < 2 * w.timing.big_delta;
    }

    NodeId cm_leader() const {
        for (NodeId p : cm_peers)
            if (cm_peer_fresh(p)) return p;
        return self;
    }

    // ==================================================================

    void on_message(const Envelope& env) override {
        const auto* pm = dynamic_cast<const ProtoMessage*>(env.payload.get());
        if (!pm) return;
        switch (pm->kind) {
            case MsgKind::CmPing: peer_seen[env.src] = w.engine.now(); break;
            case MsgKind::CmBgReport: on_report(env); break;
            case MsgKind::CmSuspect: on_suspect(env); break;
            case MsgKind::CmReportForward: on_forward(env); break;
            case MsgKind::CmOutcomeQuery: on_outcome_query(env); break;
            case MsgKind::CmValiditySign: on_validity_sign(env); break;
            case MsgKind::EpochAnnounce: {
                auto v = as<MsgEpochAnnounce>(env).view;
                if (v && v->epoch > epochs.back()->epoch) epochs.push_back(v);
                break;
            }
            case MsgKind::BftInput: {
                const auto& in = as<MsgBftInput>(env);
                auto* inst = instance_for_scope(in.scope);
                if (inst) inst->on_input(std::make_shared<MsgBftInput>(in), env.src);
                break;
            }
            case MsgKind::BftSignReq: {
                const auto& req = as<MsgBftSignReq>(env);
                std::uint64_t seq;
                if (parse_cm_scope(req.scope, seq) && seq > log.size()) {
                    deferred_signs.emplace_back(req, env.src);
                    break;
                }
                auto* inst = instance_for_scope(req.scope);
                if (inst) inst->on_sign_req(req, env.src);
                break;
            }
            case MsgKind::BftSignResp: {
                auto* inst = instance_for_scope(as<MsgBftSignResp>(env).scope);
                if (inst) inst->on_sign_resp(as<MsgBftSignResp>(env), env.src);
                break;
            }
            case MsgKind::BftDecide: {
                auto* inst = instance_for_scope(as<MsgBftDecide>(env).scope);
                if (inst) inst->on_decide_msg(as<MsgBftDecide>(env));
                break;
            }
            case MsgKind::BftNewView: {
                auto* inst = instance_for_scope(as<MsgBftNewView>(env).scope);
                if (inst) inst->on_new_view(as<MsgBftNewView>(env), env.src);
                break;
            }
            default: break;
        }
    }

    void on_timer(const Timer& t) override {
        switch (t.kind) {
            case TCmPing: {
                arm(TCmPing, w.engine.now() + w.timing.big_delta / 2);
                auto ping = std::make_shared<MsgCmPing>();
                for (NodeId p : cm_peers)
                    if (p != self) send(p, ping);
                break;
            }
            case TCmSweep: do_sweep(); break;
            case TCmSuspect: on_suspect_timeout(t.a, static_cast<BgId>(t.b)); break;
            case TCmSubmit: on_submit_fallback(t.a); break;
            default: {
                auto it = bft_timers.find(t.token);
                if (it == bft_timers.end()) break;
                auto scope = it->second;
                bft_timers.erase(it);
                auto ii = instances.find(scope);
                if (ii != instances.end()) ii->second->on_timer(t.token);
                break;
            }
        }
    }

    // ==================================================================
    // report ingestion

    void record_report(const BgReport& rep, bool assist) {
        auto& pc = per_cycle[rep.cycle];
        if (!w.directory.known(rep.reporter_sig.signer) ||
            !w.topo.is_protocol_node(static_cast<NodeId>(rep.reporter_sig.signer)) ||
            w.topo.bg_of(static_cast<NodeId>(rep.reporter_sig.signer)) != rep.reporter)
            return;
        if (!default_provider().verify(w.directory, rep.reporter_sig, rep.content_digest())) return;
        bool fresh = !pc.reports.count(rep.reporter);
        if (fresh) {
            pc.reports[rep.reporter] = rep;
            emit("cm_report", {{"cycle", rep.cycle},
                               {"reporter", rep.reporter},
                               {"complete", rep.complete},
                               {"assist", assist}});
        }
        auto note_hash = [&](BgId issuer, const Digest& h) {
            auto [it, inserted] = pc.issuer_hash.emplace(issuer, h);
            if (!inserted && it->second != h && !pc.conflicted.count(issuer)) {
                // conflicting signed hashes for one issuer: Byzantine evidence
                pc.conflicted.insert(issuer);
                emit("cm_hash_conflict", {{"cycle", rep.cycle}, {"bg", issuer}});
            }
        };
        note_hash(rep.reporter, rep.own_hash);
        for (const auto& [issuer, h] : rep.received) note_hash(issuer, h);
    }

    void on_report(const Envelope& env) {
        const auto& msg = as<MsgCmBgReport>(env);
        record_report(msg.report, msg.is_assist_request);
        Cycle c = msg.report.cycle;
        if (msg.is_assist_request) {
            // a request must carry the BG's certified seek-assistance decision
            if (!msg.report.commitment ||
                !verify_bg_qc(*msg.report.commitment, msg.report.reporter,
                              msg.report.commitment->cycle, w.topo.bg_quorum(), w.directory,
                              w.topo)) {
                emit("cm_request_rejected", {{"cycle", c}, {"bg", msg.report.reporter}});
                return;
            }
            pending_assists[c].insert(env.src);
            emit("cm_assist_recv", {{"cycle", c}, {"bg", msg.report.reporter}});
            process_assist(c);
        } else if (w.base_cm_mode) {
            want.insert(c);
            try_ingest(c);
        } else {
            // queried report: may settle pending work
            progress_all();
        }
    }

    void on_forward(const Envelope& env) {
        record_report(as<MsgCmReportForward>(env).report, false);
        progress_all();
    }

    void query_reports(Cycle c) {
        auto& pc = per_cycle[c];
        for (BgId b : vertices_for(c)) {
            if (pc.reports.count(b) || pc.failcerts.count(b)) continue;
            auto q = std::make_shared<MsgCmReportQuery>();
            q->cycle = c;
            for (SlId s : w.topo.sls_of_bg(b)) send(w.topo.nodes_of_sl(s).front(), q);
            if (pc.suspect_timer_armed.insert(b).second)
                arm(TCmSuspect, w.engine.now() + w.timing.big_delta, c, b);
        }
        pc.queried = true;
    }

    void on_suspect_timeout(Cycle c, BgId b) {
        auto& pc = per_cycle[c];
        pc.suspect_timer_armed.erase(b);
        if (pc.reports.count(b) || pc.failcerts.count(b) || !want.count(c)) return;
        if (!pc.my_suspicions.insert(b).second) return;
        Signature sig = default_provider().sign(w.key_of(self),
                                                FailureCertificate::signed_message(b, c));
        record_suspicion(c, b, sig);
        auto msg = std::make_shared<MsgCmSuspect>();
        msg->suspect = b;
        msg->cycle = c;
        msg->sig = sig;
        for (NodeId p : cm_peers)
            if (p != self) send(p, msg);
        emit("cm_suspect", {{"cycle", c}, {"suspect", b}});
    }

    void on_suspect(const Envelope& env) {
        const auto& msg = as<MsgCmSuspect>(env);
        auto& pc = per_cycle[msg.cycle];
        auto rit = pc.reports.find(msg.suspect);
        if (rit != pc.reports.end()) {
            // corroboration denied: we hold the report, forward it instead
            auto fwd = std::make_shared<MsgCmReportForward>();
            fwd->report = rit->second;
            send(env.src, fwd);
            return;
        }
        if (!default_provider().verify(w.directory, msg.sig,
                                       FailureCertificate::signed_message(msg.suspect, msg.cycle)))
            return;
        record_suspicion(msg.cycle, msg.suspect, msg.sig);
        // suspicion makes this cycle interesting; check for ourselves too
        if (want.count(msg.cycle) && !pc.my_suspicions.count(msg.suspect) &&
            !pc.suspect_timer_armed.count(msg.suspect)) {
            pc.suspect_timer_armed.insert(msg.suspect);
            arm(TCmSuspect, w.engine.now() + w.timing.big_delta, msg.cycle, msg.suspect);
        }
        progress_all();
    }

    void record_suspicion(Cycle c, BgId b, const Signature& sig) {
        auto& pc = per_cycle[c];
        auto& sigs = pc.suspicion_sigs[b];
        for (const auto& s : sigs)
            if (s.signer == sig.signer) return;
        sigs.push_back(sig);
        if (sigs.size() >= w.cm.failcert_quorum() && !pc.failcerts.count(b)) {
            FailureCertificate fc;
            fc.suspect_bg_id = b;
            fc.cycle = c;
            fc.signatures = sigs;
            pc.failcerts[b] = fc;
            emit("cm_failcert", {{"cycle", c}, {"bg", b}});
            progress_all();
        }
    }

    bool ingest_complete(Cycle c) {
        auto& pc = per_cycle[c];
        auto verts = vertices_for(c);
        std::size_t reports = 0;
        for (BgId b : verts) {
            bool resolved = pc.reports.count(b) || pc.failcerts.count(b) || pc.conflicted.count(b);
            if (!resolved) return false;
            if (pc.reports.count(b)) ++reports;
        }
        std::size_t min_reports =
            verts.size() > w.cm.cm_f ? verts.size() - w.cm.cm_f : 0;
        return reports >= min_reports;
    }

    CommGraph graph_for(Cycle c) {
        auto& pc = per_cycle[c];
        CommGraph g;
        g.vertices = vertices_for(c);
        std::set<BgId> vset(g.vertices.begin(), g.vertices.end());
        for (BgId b : g.vertices)
            if (pc.failcerts.count(b) || pc.conflicted.count(b)) g.failed.insert(b);
        for (const auto& [reporter, rep] : pc.reports) {
            if (!vset.count(reporter)) continue;
            for (const auto& [issuer, h] : rep.received) {
                if (issuer == reporter || !vset.count(issuer)) continue;
                g.edges.insert({issuer, reporter});
            }
        }
        for (const auto& [issuer, h] : pc.issuer_hash)
            if (vset.count(issuer)) g.hashes[issuer] = h;
        return g;
    }

    // ==================================================================
    // settle logic and assistance

    bool settled(Cycle c) {
        auto oit = outcomes.find(c);
        if (oit != outcomes.end()) return true;
        auto& pc = per_cycle[c];
        std::size_t complete_reports = 0;
        auto verts = vertices_for(c);
        for (BgId b : verts) {
            auto rit = pc.reports.find(b);
            if (rit != pc.reports.end() && rit->second.complete) ++complete_reports;
        }
        std::size_t super = verts.size() > w.cm.cm_f ? verts.size() - w.cm.cm_f : verts.size();
        return complete_reports >= super;
    }

    void process_assist(Cycle c) {
        auto oit = outcomes.find(c);
        if (oit != outcomes.end() && oit->second.certified) {
            respond(c);
            return;
        }
        if (any_applied_reply && applied_reply_high >= c + w.timing.pipeline_k) {
            // assist window closed: this cycle settles as denied
            propose_deny(c);
            return;
        }
        // enforce the assist-window invariant: before assisting c, every
        // cycle x <= c-k must have a supermajority of BGs past it (or be
        // assisted itself, ascending)
        advance_settle_floor();
        Cycle k = w.timing.pipeline_k;
        if (settle_floor + k <= c) {
            Cycle x = settle_floor;
            want.insert(x);
            auto& px = per_cycle[x];
            if (!px.queried) query_reports(x);
            bool has_incomplete = false;
            for (const auto& [b, rep] : px.reports)
                if (!rep.complete) has_incomplete = true;
            if (has_incomplete) try_ingest(x);
            want.insert(c);
            return;  // blocked; progress_all retries as reports arrive
        }
        want.insert(c);
        try_ingest(c);
    }

    Cycle settle_floor = 0;
    void advance_settle_floor() {
        while (settled(settle_floor)) {
            want.erase(settle_floor);
            ++settle_floor;
        }
    }

    void try_ingest(Cycle c) {
        auto& pc = per_cycle[c];
        if (pc.analysis_proposed || outcomes.count(c)) return;
        if (!pc.queried) query_reports(c);
        if (!ingest_complete(c)) return;
        auto g = graph_for(c);
        auto res = analyze_graph(g, w.policy.analysis, w.policy.replication_r);
        pc.analysis_proposed = true;
        auto reply = std::make_shared<CmReply>();
        reply->cycle = c;
        reply->committed = res.committed;
        for (BgId b : res.fn) {
            auto fit = pc.failcerts.find(b);
            reply->fn[b] = fit != pc.failcerts.end() ? fit->second : FailureCertificate{b, c, {}};
        }
        reply->exclusion_horizon = reply->fn.empty() ? 0 : w.timing.horizon;
        for (const auto& e : g.edges) reply->edges.push_back(e);
        reply->vertices = g.vertices;
        reply->failed.assign(g.failed.begin(), g.failed.end());
        auto cmd = std::make_shared<CmCommandPayload>();
        cmd->reply = reply;
        ordered_json edges_json = ordered_json::array();
        for (auto& [a, b] : g.edges) edges_json.push_back({a, b});
        ordered_json committed_json = ordered_json::object();
        for (auto& [b, h] : res.committed) committed_json[std::to_string(b)] = h.short_hex();
        emit("cm_analysis", {{"cycle", c},
                             {"vertices", g.vertices},
                             {"failed", std::vector<BgId>(g.failed.begin(), g.failed.end())},
                             {"edges", edges_json},
                             {"committed", committed_json},
                             {"fn", std::vector<BgId>(res.fn.begin(), res.fn.end())}});
        submit_command(cmd);
    }

    void propose_deny(Cycle c) {
        if (outcomes.count(c)) {
            respond(c);
            return;
        }
        auto deny = std::make_shared<CmDeny>();
        deny->cycle = c;
        auto cmd = std::make_shared<CmCommandPayload>();
        cmd->deny = deny;
        submit_command(cmd);
    }

    // ==================================================================
    // the replicated log

    static std::string cm_scope(std::uint64_t seq) { return "cm/" + std::to_string(seq); }

    static bool parse_cm_scope(const std::string& scope, std::uint64_t& seq) {
        if (scope.rfind("cm/", 0) != 0) return false;
        seq = std::stoull(scope.substr(3));
        return true;
    }

    void submit_command(std::shared_ptr<const CmCommandPayload> cmd) {
        if (outcomes.count(cmd->cycle())) return;  // only if not executed
        queued_commands[cmd->cycle()] = cmd;
        std::uint64_t seq = log.size();
        bool am_coordinator = cm_peers[seq % cm_peers.size()] == self;
        if (w.policy.submit == CmSubmitMode::Leader && !am_coordinator) {
            // leader-preferred: give the slot coordinator a head start
            if (!submit_fallback_timers.count(cmd->cycle()))
                submit_fallback_timers[cmd->cycle()] =
                    arm(TCmSubmit, w.engine.now() + 2 * w.timing.big_delta, cmd->cycle());
            return;
        }
        pump_submissions();
    }
    std::map<Cycle, std::shared_ptr<const CmCommandPayload>> queued_commands;

    void on_submit_fallback(Cycle c) {
        submit_fallback_timers.erase(c);
        if (outcomes.count(c)) return;
        pump_submissions();
    }

    void pump_submissions() {
        for (auto it = queued_commands.begin(); it != queued_commands.end();) {
            if (outcomes.count(it->first))
                it = queued_commands.erase(it);
            else
                ++it;
        }
        if (queued_commands.empty()) return;
        std::uint64_t seq = log.size();
        auto& inst = ensure_cm_instance(seq);
        auto in = std::make_shared<MsgBftInput>();
        in->scope = cm_scope(seq);
        in->extra = std::make_shared<CmCommandRequest>(queued_commands.begin()->second);
        if (!inst.started()) {
            inst.start(in);
        } else if (!inst.has_input()) {
            inst.submit_input(in);
        }
    }

    BftInstance* instance_for_scope(const std::string& scope) {
        auto it = instances.find(scope);
        if (it != instances.end()) return it->second.get();
        std::uint64_t seq;
        if (!parse_cm_scope(scope, seq)) return nullptr;
        auto& inst = ensure_cm_instance(seq);
        if (!inst.started()) inst.start(nullptr);
        return &inst;
    }

    BftInstance& ensure_cm_instance(std::uint64_t seq) {
        std::string scope = cm_scope(seq);
        auto it = instances.find(scope);
        if (it != instances.end()) return *it->second;
        auto inst = std::make_unique<BftInstance>();
        inst->cfg.scope = scope;
        inst->cfg.cert_scope = kCmScope;
        inst->cfg.cert_cycle = seq;
        for (NodeId p : cm_peers)
            inst->cfg.slots.push_back(p - w.topo.protocol_nodes());
        inst->cfg.my_slot = host_bg;
        inst->cfg.quorum = w.cm.rsm_quorum(static_cast<std::uint32_t>(cm_peers.size()));
        inst->cfg.rotation_base = static_cast<std::uint32_t>(seq % cm_peers.size());
        inst->cfg.view_timeout = 2 * w.timing.big_delta;
        inst->cfg.aggregation = true;
        inst->cfg.input_window = w.timing.big_delta / 2;
        inst->self_principal_ = self;
        inst->w.send_to_slot = [this](std::uint32_t slot, std::shared_ptr<ProtoMessage> msg) {
            send(w.topo.cm_node_id(static_cast<BgId>(slot)), std::move(msg));
        };
        inst->w.sign = [this](const Digest& d) { return default_provider().sign(w.key_of(self), d); };
        inst->w.verify = [this](const Signature& s, const Digest& d) {
            return default_provider().verify(w.directory, s, d);
        };
        inst->w.slot_of = [this](PrincipalId p) -> std::int64_t {
            NodeId n = static_cast<NodeId>(p);
            if (!w.topo.is_cm_node(n)) return -1;
            return static_cast<std::int64_t>(n - w.topo.protocol_nodes());
        };
        inst->w.now = [this] { return w.engine.now(); };
        inst->w.arm_timer = [this, scope](Tick at) {
            auto token = arm(-1, at);
            bft_timers[token] = scope;
            return token;
        };
        inst->w.cancel_timer = [this](std::uint64_t token) {
            bft_timers.erase(token);
            w.engine.cancel_timer(token);
        };
        inst->build = [this, seq](const auto& inputs) -> BftPayloadPtr {
            if (seq != log.size()) return nullptr;
            std::shared_ptr<const CmCommandPayload> best;
            for (const auto& in : inputs) {
                auto req = std::dynamic_pointer_cast<const CmCommandRequest>(in->extra);
                if (!req || !req->command) continue;
                if (outcomes.count(req->command->cycle())) continue;
                if (!best || req->command->cycle() < best->cycle()) best = req->command;
            }
            if (!best) return nullptr;
            return best;
        };
        inst->validate = [this, seq](const BftPayload& p) {
            if (seq != log.size()) return false;
            const auto* cmd = dynamic_cast<const CmCommandPayload*>(&p);
            if (!cmd || (!cmd->reply && !cmd->deny)) return false;
            return command_valid(*cmd);
        };
        inst->on_decide = [this, seq](BftPayloadPtr p, const QuorumCertificate& qc) {
            auto cmd = std::dynamic_pointer_cast<const CmCommandPayload>(p);
            if (!cmd) return;
            apply_entry(seq, cmd, qc);
        };
        auto [nit, ok] = instances.emplace(scope, std::move(inst));
        return *nit->second;
    }

    bool command_valid(const CmCommandPayload& cmd) const {
        if (cmd.reply) {
            const auto& r = *cmd.reply;
            // the window invariant: no assistance for a cycle once a later
            // cycle at distance >= k was assisted
            if (any_applied_reply && applied_reply_high >= r.cycle + w.timing.pipeline_k)
                return false;
            auto pit = per_cycle.find(r.cycle);
            for (const auto& [b, h] : r.committed) {
                if (pit == per_cycle.end()) break;
                auto hit = pit->second.issuer_hash.find(b);
                if (hit != pit->second.issuer_hash.end() && hit->second != h) return false;
            }
            return true;
        }
        if (cmd.deny) {
            if (outcomes.count(cmd.deny->cycle)) {
                // duplicate; apply() ignores it, signing is harmless only if
                // it matches the existing outcome's kind
                return !outcomes.at(cmd.deny->cycle).is_reply;
            }
            return any_applied_reply && applied_reply_high >= cmd.deny->cycle + w.timing.pipeline_k;
        }
        return false;
    }

    std::map<std::uint64_t, LogEntry> pending_applies_;
    bool applying_ = false;

    void apply_entry(std::uint64_t seq, std::shared_ptr<const CmCommandPayload> cmd,
                     const QuorumCertificate& qc) {
        pending_applies_[seq] = LogEntry{cmd, qc};
        if (applying_) return;  // an outer drain loop is running
        applying_ = true;
        while (true) {
            auto it = pending_applies_.find(log.size());
            if (it == pending_applies_.end()) break;
            LogEntry entry = it->second;
            pending_applies_.erase(it);
            apply_in_order(log.size(), entry.command, entry.qc);
        }
        applying_ = false;
    }

    void apply_in_order(std::uint64_t seq, std::shared_ptr<const CmCommandPayload> cmd,
                        const QuorumCertificate& qc) {
        log.push_back(LogEntry{cmd, qc});
        Cycle c = cmd->cycle();
        emit("cm_command", {{"seq", seq}, {"cycle", c}, {"kind", cmd->reply ? "reply" : "deny"}});
        // the first VALID state transition per cycle is authoritative;
        // malformed commands never become outcomes and stay uncertified
        if (!outcomes.count(c) && command_valid_at_apply(*cmd)) {
            Outcome out;
            out.is_reply = cmd->reply != nullptr;
            out.reply = cmd->reply;
            out.deny = cmd->deny;
            out.seq = seq;
            outcomes[c] = out;
            if (out.is_reply && (!any_applied_reply || c > applied_reply_high)) {
                applied_reply_high = c;
                any_applied_reply = true;
            }
            validity_todo_.push_back(seq);
        }
        advance_validity();
        // unblock deferred sign requests for the next slot
        auto queued = std::move(deferred_signs);
        deferred_signs.clear();
        for (auto& [req, src] : queued) {
            std::uint64_t s2;
            if (parse_cm_scope(req.scope, s2) && s2 > log.size()) {
                deferred_signs.emplace_back(req, src);
                continue;
            }
            auto* inst = instance_for_scope(req.scope);
            if (inst) inst->on_sign_req(req, src);
        }
        pump_submissions();
        progress_all();
    }

    std::vector<std::uint64_t> validity_todo_;
    std::set<std::uint64_t> validity_sent_;
    bool advancing_validity_ = false;

    /// Certifications complete strictly in log order, so a certified reply
    /// for a later cycle can never precede one for an earlier cycle in the
    /// trace (the assist-window invariant holds tick-wise).
    void advance_validity() {
        if (advancing_validity_) return;  // re-entered via record_validity
        advancing_validity_ = true;
        while (!validity_todo_.empty()) {
            std::uint64_t seq = validity_todo_.front();
            LogEntry entry = log.at(seq);
            Cycle c = entry.command->cycle();
            auto oit = outcomes.find(c);
            if (oit == outcomes.end() || oit->second.seq != seq) {
                validity_todo_.erase(validity_todo_.begin());
                continue;
            }
            if (!validity_sent_.count(seq)) {
                validity_sent_.insert(seq);
                auto res = certifier.certify_for("cm", c, entry.command->digest(), entry.qc,
                                                 entry.qc.quorum_size);
                if (std::holds_alternative<ValidityCertificate>(res)) {
                    Digest content = content_digest(*entry.command);
                    Signature mine = default_provider().sign(
                        w.key_of(self), ValidityCertificate::signed_message(content, seq));
                    record_validity(c, content, seq, mine, entry.qc);
                    auto msg = std::make_shared<MsgCmValiditySign>();
                    msg->cycle = c;
                    msg->command_digest = content;
                    msg->decision_index = seq;
                    msg->sig = mine;
                    for (NodeId p : cm_peers)
                        if (p != self) send(p, msg);
                }
            }
            oit = outcomes.find(c);
            if (oit != outcomes.end() && oit->second.certified) {
                validity_todo_.erase(validity_todo_.begin());
                continue;
            }
            break;
        }
        advancing_validity_ = false;
    }

    static Digest content_digest(const CmCommandPayload& cmd) {
        return cmd.reply ? cmd.reply->content_digest() : cmd.deny->content_digest();
    }

    bool command_valid_at_apply(const CmCommandPayload& cmd) const {
        if (cmd.reply)
            return !(any_applied_reply &&
                     applied_reply_high >= cmd.reply->cycle + w.timing.pipeline_k);
        if (cmd.deny) return !outcomes.count(cmd.deny->cycle);
        return false;
    }

    void on_validity_sign(const Envelope& env) {
        const auto& msg = as<MsgCmValiditySign>(env);
        if (!w.topo.is_cm_node(env.src)) return;
        if (!default_provider().verify(
                w.directory, msg.sig,
                ValidityCertificate::signed_message(msg.command_digest, msg.decision_index)))
            return;
        // only the first applied command per cycle can gather certification
        auto oit = outcomes.find(msg.cycle);
        if (oit == outcomes.end() || oit->second.seq != msg.decision_index) {
            pending_validity_[{msg.cycle, msg.decision_index}].push_back(msg.sig);
            return;
        }
        record_validity(msg.cycle, msg.command_digest, msg.decision_index, msg.sig,
                        log[msg.decision_index].qc);
    }
    std::map<std::pair<Cycle, std::uint64_t>, std::vector<Signature>> pending_validity_;

    void record_validity(Cycle c, const Digest& content, std::uint64_t seq, const Signature& sig,
                         const QuorumCertificate& qc) {
        auto key = std::make_pair(c, content.hex());
        auto& sigs = validity_collect[key];
        for (const auto& s : sigs)
            if (s.signer == sig.signer) return;
        sigs.push_back(sig);
        auto pend = pending_validity_.find({c, seq});
        if (pend != pending_validity_.end()) {
            auto extra = pend->second;
            pending_validity_.erase(pend);
            for (const auto& s : extra) record_validity(c, content, seq, s, qc);
        }
        auto oit = outcomes.find(c);
        if (oit == outcomes.end() || oit->second.certified) return;
        if (sigs.size() < w.cm.validity_quorum()) return;
        // certification complete
        ValidityCertificate vc;
        vc.inner = qc;
        vc.decision_index = seq;
        vc.validity_signatures = sigs;
        auto& out = oit->second;
        out.certified = true;
        (void)0;
        if (out.is_reply) {
            auto certified = std::make_shared<CmReply>(*out.reply);
            certified->certification = vc;
            out.reply = certified;
            ordered_json committed_json = ordered_json::object();
            for (auto& [b, h] : certified->committed) committed_json[std::to_string(b)] = h.short_hex();
            std::vector<BgId> fn_list;
            for (auto& [b, fc] : certified->fn) fn_list.push_back(b);
            emit("cm_reply", {{"cycle", c},
                              {"committed", committed_json},
                              {"fn", fn_list},
                              {"horizon", certified->exclusion_horizon},
                              {"seq", seq}});
        } else {
            auto certified = std::make_shared<CmDeny>(*out.deny);
            certified->certification = vc;
            out.deny = certified;
            emit("cm_deny", {{"cycle", c}, {"seq", seq}});
        }
        respond(c);
        advance_validity();
        progress_all();
    }

    // ==================================================================

    void respond(Cycle c) {
        auto oit = outcomes.find(c);
        if (oit == outcomes.end() || !oit->second.certified) return;
        auto reply_to = [&](NodeId dst) {
            if (oit->second.is_reply) {
                auto m = std::make_shared<MsgCmReplyMsg>();
                m->reply = oit->second.reply;
                send(dst, m);
            } else {
                auto m = std::make_shared<MsgCmDenyMsg>();
                m->deny = oit->second.deny;
                send(dst, m);
            }
        };
        auto pit = pending_assists.find(c);
        if (pit != pending_assists.end()) {
            for (NodeId dst : pit->second) reply_to(dst);
            pending_assists.erase(pit);
        }
        auto qit = pending_outcome_queries.find(c);
        if (qit != pending_outcome_queries.end()) {
            for (NodeId dst : qit->second) {
                auto m = std::make_shared<MsgCmOutcomeReply>();
                m->cycle = c;
                m->assisted = oit->second.is_reply;
                m->reply = oit->second.reply;
                m->deny = oit->second.deny;
                send(dst, m);
            }
            pending_outcome_queries.erase(qit);
        }
    }

    void on_outcome_query(const Envelope& env) {
        Cycle c = as<MsgCmOutcomeQuery>(env).cycle;
        auto oit = outcomes.find(c);
        if (oit != outcomes.end() && oit->second.certified) {
            auto m = std::make_shared<MsgCmOutcomeReply>();
            m->cycle = c;
            m->assisted = oit->second.is_reply;
            m->reply = oit->second.reply;
            m->deny = oit->second.deny;
            send(env.src, m);
            return;
        }
        if (any_applied_reply && applied_reply_high >= c + w.timing.pipeline_k) {
            pending_outcome_queries[c].insert(env.src);
            propose_deny(c);
            return;
        }
        // not settled here yet
        auto m = std::make_shared<MsgCmOutcomeReply>();
        m->cycle = c;
        m->pending = true;
        send(env.src, m);
        pending_outcome_queries[c].insert(env.src);
    }

    void do_sweep() {
        arm(TCmSweep, w.engine.now() + 2 * w.timing.big_delta);
        progress_all();
        for (Cycle c : want) {
            if (outcomes.count(c)) continue;
            auto& pc = per_cycle[c];
            pc.queried = false;  // renew queries for still-missing reports
            query_reports(c);
        }
    }

    void progress_all() {
        // retry ingestion for wanted cycles and re-examine pending assists
        std::vector<Cycle> wanted(want.begin(), want.end());
        for (Cycle c : wanted) {
            if (outcomes.count(c)) {
                want.erase(c);
                continue;
            }
            if (w.base_cm_mode || has_assist_trigger(c)) try_ingest(c);
        }
        std::vector<Cycle> pend;
        pend.reserve(pending_assists.size());
        for (auto& [c, who] : pending_assists) pend.push_back(c);
        for (Cycle c : pend) process_assist(c);
    }

    bool has_assist_trigger(Cycle c) {
        if (pending_assists.count(c)) return true;
        auto pit = per_cycle.find(c);
        if (pit == per_cycle.end()) return false;
        for (const auto& [b, rep] : pit->second.reports)
            if (!rep.complete) return true;
        return false;
    }
};

}  // namespace rcsim
