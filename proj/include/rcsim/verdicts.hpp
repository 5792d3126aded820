// Invariant checking against the trace. The oracle re-derives, per cycle,
// the expected inclusion set and ordering from certified records in the
// trace, and re-runs every graph analysis by brute-force subset search. It
// shares no code with the protocol path it audits.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rcsim/trace.hpp"
#include "rcsim/types.hpp"

namespace rcsim {

struct Verdict {
    std::string id;
    bool pass = true;
    std::string witness;
};

struct VerdictParams {
    bool cm_mode = true;
    std::uint32_t pipeline_k = 2;
    std::uint32_t horizon = 8;
    Cycle measured_cycles = 40;
    std::uint32_t liveness_threshold = 30;
    bool expect_liveness = true;
    bool check_liveness = true;
    bool assumption_breach = false;
    std::set<std::string> byz_actors;
    std::set<std::string> minority_actors;
    std::set<std::string> dead_actors;
    std::set<std::string> must_commit_actors;  // honest, live, majority side
    std::vector<std::pair<Tick, Tick>> stall_windows;  // minority must not commit inside
    std::uint32_t replication_r = 2;
    bool analysis_full = true;
    std::vector<BgId> initial_bgs;
    Cycle resume_grace = 2;  // cycles after a re-listing epoch before inclusion resumes
};

// ---------------------------------------------------------------------------
// brute-force graph oracle (independent of the CM implementation)

struct OracleGraph {
    std::vector<BgId> vertices;
    std::set<BgId> failed;
    std::set<std::pair<BgId, BgId>> edges;
};

/// Enumerates every subset of non-failed vertices and returns the largest one
/// in which each member's out-degree over the non-failed graph meets the
/// policy threshold.
inline std::set<BgId> brute_force_committed(const OracleGraph& g, bool full, std::uint32_t r) {
    std::vector<BgId> live;
    for (BgId v : g.vertices)
        if (!g.failed.count(v)) live.push_back(v);
    std::size_t n = live.size();
    std::map<BgId, std::size_t> outdeg;
    for (BgId v : live) {
        std::size_t d = 0;
        for (BgId u : live)
            if (u != v && g.edges.count({v, u})) ++d;
        outdeg[v] = d;
    }
    std::size_t need = full ? (n == 0 ? 0 : n - 1) : (r == 0 ? 0 : r - 1);
    std::set<BgId> best;
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        std::set<BgId> s;
        bool ok = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(mask & (1ull << i))) continue;
            if (outdeg[live[i]] < need) {
                ok = false;
                break;
            }
            s.insert(live[i]);
        }
        if (ok && s.size() > best.size()) best = s;
    }
    return best;
}

// ---------------------------------------------------------------------------

class TraceAuditor {
public:
    TraceAuditor(const std::vector<TraceEvent>& events, VerdictParams params)
        : ev_(events), p_(std::move(params)) {}

    std::vector<Verdict> run() {
        collect();
        check_safety();
        check_prefix();
        check_dedup();
        check_commit_delay();
        check_decide_agreement();
        if (p_.cm_mode) {
            check_classification_agreement();
            check_reply_deny_exclusive();
            check_assist_window();
            check_graph_analysis();
        }
        check_inclusion_oracle();
        if (p_.check_liveness) check_liveness();
        return verdicts_;
    }

private:
    const std::vector<TraceEvent>& ev_;
    VerdictParams p_;
    std::vector<Verdict> verdicts_;

    struct CommitRec {
        Tick tick;
        Cycle cycle;
        std::string order;
        bool adopted = false;
    };
    struct ManifestRec {
        Cycle cycle;
        std::string order;
        std::map<BgId, std::string> bgs;   // included bg -> payload root
        std::vector<std::string> roots;    // committed order of roots
        std::vector<std::pair<std::string, std::string>> txs;  // (client, nonce)
    };
    struct ReplyRec {
        Tick tick;
        Cycle cycle;
        std::map<BgId, std::string> committed;
        std::vector<BgId> fn;
        std::uint32_t horizon = 0;
    };
    struct AnalysisRec {
        Cycle cycle;
        OracleGraph graph;
        std::set<BgId> committed;
        std::set<BgId> fn;
    };

    std::map<std::string, std::vector<CommitRec>> commits_;  // actor -> commits
    std::map<std::pair<Cycle, std::string>, ManifestRec> manifests_;
    std::map<std::string, std::map<Cycle, Tick>> completes_;
    std::map<Cycle, ReplyRec> replies_;
    std::set<Cycle> denies_;
    std::vector<AnalysisRec> analyses_;
    std::map<Cycle, std::map<std::string, std::string>> classifications_;  // cycle -> actor -> outcome
    std::map<std::pair<BgId, Cycle>, std::map<std::string, std::string>> decides_;
    std::map<BgId, Cycle> exclusions_;  // min effective per bg (global mode)
    std::map<Cycle, std::pair<BgId, std::string>> decide_roots_;  // helper
    std::vector<std::pair<Tick, Cycle>> reply_sequence_;
    std::map<EpochId, std::pair<Cycle, std::vector<BgId>>> epochs_;

    bool honest(const std::string& actor) const { return !p_.byz_actors.count(actor); }

    void fail(const std::string& id, const std::string& witness) {
        for (auto& v : verdicts_)
            if (v.id == id) {
                if (v.pass) {
                    v.pass = false;
                    v.witness = witness;
                }
                return;
            }
        verdicts_.push_back({id, false, witness});
    }

    void ok(const std::string& id) {
        for (auto& v : verdicts_)
            if (v.id == id) return;
        verdicts_.push_back({id, true, ""});
    }

    void collect() {
        for (const auto& e : ev_) {
            if (e.kind == "commit") {
                CommitRec r;
                r.tick = e.tick;
                r.cycle = e.fields.at("cycle").get<Cycle>();
                r.order = e.fields.at("order").get<std::string>();
                r.adopted = e.fields.value("adopted", false);
                commits_[e.actor].push_back(r);
            } else if (e.kind == "manifest") {
                ManifestRec m;
                m.cycle = e.fields.at("cycle").get<Cycle>();
                m.order = e.fields.at("order").get<std::string>();
                for (auto& [k, v] : e.fields.at("bgs").items())
                    m.bgs[static_cast<BgId>(std::stoul(k))] = v.get<std::string>();
                if (e.fields.contains("roots"))
                    m.roots = e.fields.at("roots").get<std::vector<std::string>>();
                if (e.fields.contains("txs"))
                    for (auto& t : e.fields.at("txs"))
                        m.txs.emplace_back(t.at("c").get<std::string>(), t.at("n").get<std::string>());
                manifests_[{m.cycle, m.order}] = std::move(m);
            } else if (e.kind == "complete") {
                completes_[e.actor][e.fields.at("cycle").get<Cycle>()] = e.tick;
            } else if (e.kind == "cm_reply") {
                ReplyRec r;
                r.tick = e.tick;
                r.cycle = e.fields.at("cycle").get<Cycle>();
                for (auto& [k, v] : e.fields.at("committed").items())
                    r.committed[static_cast<BgId>(std::stoul(k))] = v.get<std::string>();
                r.fn = e.fields.at("fn").get<std::vector<BgId>>();
                r.horizon = e.fields.at("horizon").get<std::uint32_t>();
                if (!replies_.count(r.cycle)) replies_[r.cycle] = r;
                reply_sequence_.emplace_back(e.tick, r.cycle);
            } else if (e.kind == "cm_deny") {
                denies_.insert(e.fields.at("cycle").get<Cycle>());
            } else if (e.kind == "cm_analysis") {
                AnalysisRec a;
                a.cycle = e.fields.at("cycle").get<Cycle>();
                a.graph.vertices = e.fields.at("vertices").get<std::vector<BgId>>();
                for (BgId b : e.fields.at("failed").get<std::vector<BgId>>())
                    a.graph.failed.insert(b);
                for (auto& edge : e.fields.at("edges"))
                    a.graph.edges.insert({edge.at(0).get<BgId>(), edge.at(1).get<BgId>()});
                for (auto& [k, v] : e.fields.at("committed").items())
                    a.committed.insert(static_cast<BgId>(std::stoul(k)));
                for (BgId b : e.fields.at("fn").get<std::vector<BgId>>()) a.fn.insert(b);
                analyses_.push_back(std::move(a));
            } else if (e.kind == "classify") {
                classifications_[e.fields.at("cycle").get<Cycle>()][e.actor] =
                    e.fields.at("outcome").get<std::string>();
            } else if (e.kind == "bg_decide") {
                decides_[{e.fields.at("bg").get<BgId>(), e.fields.at("cycle").get<Cycle>()}]
                        [e.actor] = e.fields.at("root").get<std::string>();
            } else if (e.kind == "exclusion" || e.kind == "exclusion_applied") {
                BgId b = e.fields.at("bg").get<BgId>();
                Cycle eff = e.fields.at("effective").get<Cycle>();
                auto it = exclusions_.find(b);
                if (it == exclusions_.end() || eff < it->second) exclusions_[b] = eff;
            } else if (e.kind == "epoch") {
                epochs_[e.fields.at("n").get<EpochId>()] = {
                    e.fields.at("first_cycle").get<Cycle>(),
                    e.fields.at("bgs").get<std::vector<BgId>>()};
            }
        }
    }

    void check_safety() {
        // Theorem 1 safety: all honest nodes that commit a cycle commit the
        // identical order
        std::map<Cycle, std::set<std::string>> orders;
        for (const auto& [actor, list] : commits_) {
            if (!honest(actor)) continue;
            for (const auto& c : list) orders[c.cycle].insert(c.order);
        }
        for (const auto& [cycle, digests] : orders) {
            if (digests.size() > 1) {
                fail("safety_order_equality",
                     "cycle " + std::to_string(cycle) + " committed with " +
                         std::to_string(digests.size()) + " distinct orders");
                return;
            }
        }
        ok("safety_order_equality");
    }

    void check_prefix() {
        for (const auto& [actor, list] : commits_) {
            if (!honest(actor)) continue;
            for (std::size_t i = 1; i < list.size(); ++i) {
                if (list[i].cycle != list[i - 1].cycle + 1) {
                    fail("commit_prefix", actor + " committed cycle " +
                                              std::to_string(list[i].cycle) + " after " +
                                              std::to_string(list[i - 1].cycle));
                    return;
                }
            }
            if (!list.empty() && list.front().cycle != 0) {
                fail("commit_prefix",
                     actor + " first commit is cycle " + std::to_string(list.front().cycle));
                return;
            }
        }
        ok("commit_prefix");
    }

    void check_dedup() {
        for (const auto& [actor, list] : commits_) {
            if (!honest(actor)) continue;
            std::set<std::pair<std::string, std::string>> seen;
            for (const auto& c : list) {
                auto mit = manifests_.find({c.cycle, c.order});
                if (mit == manifests_.end()) continue;
                for (const auto& tx : mit->second.txs) {
                    if (!seen.insert(tx).second) {
                        fail("dedup", actor + " committed (client " + tx.first + ", nonce " +
                                          tx.second + ") twice by cycle " +
                                          std::to_string(c.cycle));
                        return;
                    }
                }
            }
        }
        ok("dedup");
    }

    void check_commit_delay() {
        Cycle k = std::max<std::uint32_t>(1, p_.pipeline_k);
        for (const auto& [actor, list] : commits_) {
            if (!honest(actor)) continue;
            auto cit = completes_.find(actor);
            for (const auto& c : list) {
                if (c.adopted) continue;  // replayed history from a state transfer
                if (cit == completes_.end()) continue;
                auto nxt = cit->second.find(c.cycle + k);
                if (nxt == cit->second.end() || c.tick < nxt->second) {
                    fail("commit_delay", actor + " committed cycle " + std::to_string(c.cycle) +
                                             " before completing cycle " +
                                             std::to_string(c.cycle + k));
                    return;
                }
            }
        }
        ok("commit_delay");
    }

    void check_decide_agreement() {
        for (const auto& [key, roots] : decides_) {
            std::set<std::string> distinct;
            for (const auto& [actor, root] : roots)
                if (honest(actor)) distinct.insert(root);
            if (distinct.size() > 1) {
                fail("bg_decide_agreement", "bg " + std::to_string(key.first) + " cycle " +
                                                std::to_string(key.second) + " decided " +
                                                std::to_string(distinct.size()) + " ways");
                return;
            }
        }
        ok("bg_decide_agreement");
    }

    void check_classification_agreement() {
        for (const auto& [cycle, byactor] : classifications_) {
            std::set<std::string> outcomes;
            for (const auto& [actor, outcome] : byactor)
                if (honest(actor)) outcomes.insert(outcome);
            if (outcomes.size() > 1) {
                fail("classification_agreement",
                     "cycle " + std::to_string(cycle) + " classified both ways");
                return;
            }
        }
        ok("classification_agreement");
    }

    void check_reply_deny_exclusive() {
        for (const auto& [cycle, r] : replies_) {
            if (denies_.count(cycle)) {
                fail("reply_deny_exclusive",
                     "cycle " + std::to_string(cycle) + " has both CM_REPLY and CM_DENY");
                return;
            }
        }
        ok("reply_deny_exclusive");
    }

    void check_assist_window() {
        Cycle k = p_.pipeline_k;
        Cycle max_seen = 0;
        bool any = false;
        for (const auto& [tick, cycle] : reply_sequence_) {
            if (any && max_seen >= cycle + k) {
                fail("assist_window", "CM_REPLY for cycle " + std::to_string(cycle) +
                                          " after a reply for cycle " + std::to_string(max_seen));
                return;
            }
            max_seen = std::max(max_seen, cycle);
            any = true;
        }
        ok("assist_window");
    }

    void check_graph_analysis() {
        for (const auto& a : analyses_) {
            auto expect = brute_force_committed(a.graph, p_.analysis_full, p_.replication_r);
            if (expect != a.committed) {
                fail("graph_analysis_oracle",
                     "cycle " + std::to_string(a.cycle) + " analysis mismatch vs brute force");
                return;
            }
            // FN must be exactly the complement of committed over all vertices
            std::set<BgId> expect_fn;
            for (BgId v : a.graph.vertices)
                if (!expect.count(v)) expect_fn.insert(v);
            if (expect_fn != a.fn) {
                fail("graph_analysis_oracle",
                     "cycle " + std::to_string(a.cycle) + " FN mismatch vs brute force");
                return;
            }
        }
        ok("graph_analysis_oracle");
    }

    std::vector<BgId> view_bgs_at(Cycle c) const {
        std::vector<BgId> best = p_.initial_bgs;
        Cycle best_fc = 0;
        for (const auto& [epoch, rec] : epochs_) {
            if (rec.first <= c && rec.first >= best_fc) {
                best_fc = rec.first;
                best = rec.second;
            }
        }
        return best;
    }

    /// Certified removal of a BG spans [effective, re-listing epoch's
    /// first cycle + grace).
    bool oracle_record_excluded(BgId b, Cycle c) const {
        auto xit = exclusions_.find(b);
        if (xit == exclusions_.end() || c < xit->second) return false;
        Cycle close = kCycleNone;
        for (const auto& [epoch, rec] : epochs_) {
            if (rec.first <= xit->second) continue;
            bool listed = std::find(rec.second.begin(), rec.second.end(), b) != rec.second.end();
            if (listed) close = std::min(close, rec.first + p_.resume_grace);
        }
        return c < close;
    }

    bool oracle_window_excluded(BgId b, Cycle c) const {
        for (const auto& [cyc, r] : replies_) {
            if (r.horizon == 0) continue;
            bool in_fn = std::find(r.fn.begin(), r.fn.end(), b) != r.fn.end();
            if (!in_fn) continue;
            Cycle from = cyc + p_.pipeline_k;
            if (c >= from && c < from + r.horizon) return true;
        }
        return false;
    }

    void check_inclusion_oracle() {
        // recompute the expected inclusion set per committed cycle and check
        // each manifest lists exactly it, ordered by root
        for (const auto& [key, m] : manifests_) {
            Cycle c = key.first;
            std::set<BgId> expect;
            auto rit = replies_.find(c);
            if (p_.cm_mode && rit != replies_.end()) {
                for (const auto& [b, h] : rit->second.committed) expect.insert(b);
            } else {
                for (BgId b : view_bgs_at(c)) {
                    if (p_.cm_mode && oracle_window_excluded(b, c)) continue;
                    if (!p_.cm_mode && oracle_record_excluded(b, c)) continue;
                    // a BG that decided nothing for the cycle (dead) never
                    // shows up; inclusion is capped by decided payloads
                    if (!decides_.count({b, c})) continue;
                    expect.insert(b);
                }
            }
            std::set<BgId> got;
            for (const auto& [b, root] : m.bgs) got.insert(b);
            if (got != expect) {
                std::string w = "cycle " + std::to_string(c) + " manifest includes {";
                for (BgId b : got) w += std::to_string(b) + ",";
                w += "} expected {";
                for (BgId b : expect) w += std::to_string(b) + ",";
                w += "}";
                fail("inclusion_oracle", w);
                return;
            }
            // ordering: the manifest's root list must be the sorted root set
            auto sorted = m.roots;
            std::sort(sorted.begin(), sorted.end());
            if (sorted != m.roots) {
                fail("inclusion_oracle",
                     "cycle " + std::to_string(c) + " manifest order not sorted by root");
                return;
            }
        }
        ok("inclusion_oracle");
    }

    void check_liveness() {
        // majority-side honest nodes commit enough of the measured window;
        // minority-side nodes commit nothing inside stall windows
        if (p_.expect_liveness) {
            std::map<std::string, std::uint32_t> counted;
            for (const auto& [actor, list] : commits_)
                for (const auto& c : list)
                    if (c.cycle < p_.measured_cycles) counted[actor]++;
            bool any_fail = false;
            std::string witness;
            for (const auto& actor : p_.must_commit_actors) {
                std::uint32_t n = counted.count(actor) ? counted[actor] : 0;
                if (n < p_.liveness_threshold) {
                    any_fail = true;
                    witness = actor + " committed only " + std::to_string(n) + " of " +
                              std::to_string(p_.measured_cycles) + " cycles";
                    break;
                }
            }
            if (any_fail) {
                fail("liveness", witness);
            } else {
                ok("liveness");
            }
        }
        // minority stalls
        bool stall_fail = false;
        std::string witness;
        for (const auto& actor : p_.minority_actors) {
            auto it = commits_.find(actor);
            if (it == commits_.end()) continue;
            for (const auto& c : it->second) {
                if (c.adopted) continue;
                for (const auto& [from, to] : p_.stall_windows) {
                    if (c.tick >= from + 1 && c.tick < to) {
                        stall_fail = true;
                        witness = actor + " committed cycle " + std::to_string(c.cycle) +
                                  " at tick " + std::to_string(c.tick) + " inside a stall window";
                        break;
                    }
                }
                if (stall_fail) break;
            }
            if (stall_fail) break;
        }
        if (stall_fail) {
            fail("minority_stall", witness);
        } else {
            ok("minority_stall");
        }
    }
};

inline std::vector<Verdict> evaluate_trace(const std::vector<TraceEvent>& events,
                                           const VerdictParams& params) {
    TraceAuditor auditor(events, params);
    return auditor.run();
}

}  // namespace rcsim
