// Modeled single-shot Byzantine agreement with explicit quorum collection
// (PROPOSE/SIGN/COLLECT) and coordinator rotation. Participants sign at most
// one payload per view and lock what they sign; a new view's sign request
// must justify itself with a quorum of signed lock summaries whose highest
// lock (if any) matches the proposal. Any certified payload is therefore
// unique per instance while at most f slots are Byzantine.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rcsim/certificates.hpp"
#include "rcsim/messages.hpp"

namespace rcsim {

struct BftWiring {
    // send a protocol message to the acting principal of a slot
    std::function<void(std::uint32_t slot, std::shared_ptr<ProtoMessage>)> send_to_slot;
    std::function<Signature(const Digest&)> sign;
    std::function<bool(const Signature&, const Digest&)> verify;
    // slot of a principal, or -1 if it may not act for this instance
    std::function<std::int64_t(PrincipalId)> slot_of;
    std::function<Tick()> now;
    std::function<std::uint64_t(Tick fire_at)> arm_timer;    // returns token
    std::function<void(std::uint64_t token)> cancel_timer;
};

class BftInstance {
public:
    struct Config {
        std::string scope;
        BgId cert_scope = 0;   // stamped into the QC's bg field
        Cycle cert_cycle = 0;  // stamped into the QC's cycle field
        std::vector<std::uint32_t> slots;  // participant slots (SL ids, BG ids, ...)
        std::uint32_t my_slot = 0;
        std::uint32_t quorum = 0;
        std::uint32_t rotation_base = 0;  // coordinator(view) = slots[(base+view) % n]
        Tick view_timeout = 1000;
        bool aggregation = false;  // inputs collected before proposing
        Tick input_window = 500;   // coordinator waits this long for inputs
    };

    using BuildFn =
        std::function<BftPayloadPtr(const std::vector<std::shared_ptr<const MsgBftInput>>&)>;
    using ValidateFn = std::function<bool(const BftPayload&)>;
    using DecideFn = std::function<void(BftPayloadPtr, const QuorumCertificate&)>;

    Config cfg;
    BftWiring w;
    BuildFn build;
    ValidateFn validate;
    DecideFn on_decide;

    // Byzantine knobs (driven by fault injection)
    bool byz_sign_everything = false;
    bool byz_equivocate = false;
    bool byz_omit = false;
    std::function<BftPayloadPtr(const BftPayload&)> byz_mutate;  // second payload for equivocation

    void start(std::shared_ptr<const MsgBftInput> my_input) {
        if (started_) return;
        started_ = true;
        my_input_ = std::move(my_input);
        if (cfg.aggregation && my_input_) send_input(0);
        if (is_coordinator(0)) {
            if (cfg.aggregation) {
                input_deadline_token_ = w.arm_timer(w.now() + cfg.input_window);
            } else {
                propose(0);
            }
        }
        arm_view_timer();
    }

    bool started() const { return started_; }
    bool decided() const { return decided_; }
    std::uint32_t view() const { return view_; }
    bool has_input() const { return my_input_ != nullptr; }

    /// Late input for an instance started by an incoming message.
    void submit_input(std::shared_ptr<const MsgBftInput> in) {
        if (my_input_ || decided_) return;
        my_input_ = std::move(in);
        if (cfg.aggregation) {
            inputs_.emplace(cfg.my_slot, my_input_);
            if (!is_coordinator(view_)) send_input(view_);
        }
    }

    // ---- message handlers (owner dispatches by scope) ----

    void on_input(const std::shared_ptr<const MsgBftInput>& in, PrincipalId from) {
        if (decided_) return;
        auto slot = w.slot_of(from);
        if (slot < 0) return;
        inputs_.emplace(static_cast<std::uint32_t>(slot), in);  // first per slot wins
    }

    void on_sign_req(const MsgBftSignReq& req, PrincipalId from) {
        if (decided_) {
            reply_decide(from);
            return;
        }
        auto slot = w.slot_of(from);
        if (slot < 0 || coordinator(req.view) != static_cast<std::uint32_t>(slot)) return;
        if (req.view < view_) return;
        if (req.view > view_) fast_forward(req.view);
        if (!req.payload) return;
        Digest d = req.payload->digest();
        if (!byz_sign_everything) {
            if (req.view > 0) {
                // a later view's proposal must carry a quorum of signed lock
                // reports whose strongest lock it adopts; signers then relock
                auto just = justification_choice(req);
                if (!just.valid) return;
                if (just.has_lock && !(just.digest == d)) return;
                if (lock_ && lock_->view > just.max_view) return;
            } else if (lock_ && lock_->digest != d) {
                return;  // same-view equivocation
            }
            if (!validate(*req.payload)) return;
        }
        lock_ = Lock{static_cast<std::int64_t>(req.view), d, req.payload};
        auto resp = std::make_shared<MsgBftSignResp>();
        resp->scope = cfg.scope;
        resp->view = req.view;
        resp->payload_digest = d;
        resp->sig = w.sign(QuorumCertificate::signed_message(cfg.cert_scope, cfg.cert_cycle, d));
        w.send_to_slot(static_cast<std::uint32_t>(slot), resp);
    }

    void on_sign_resp(const MsgBftSignResp& resp, PrincipalId from) {
        if (decided_ || !proposal_ || resp.view != view_) return;
        if (!is_coordinator(view_)) return;
        Digest d = proposal_->digest();
        if (resp.payload_digest != d) {
            if (!byz_proposal_b_ || byz_proposal_b_->digest() != resp.payload_digest) return;
            // equivocating coordinator collects for its second payload too
            collect(byz_sigs_b_, resp, d, from, byz_proposal_b_);
            return;
        }
        collect(sigs_, resp, d, from, proposal_);
    }

    void on_decide_msg(const MsgBftDecide& msg) {
        if (decided_ || !msg.payload) return;
        Digest d = msg.payload->digest();
        if (msg.qc.payload_root != d) return;
        if (msg.qc.bg_id != cfg.cert_scope || msg.qc.cycle != cfg.cert_cycle) return;
        if (!verify_quorum(msg.qc)) return;
        deliver_decision(msg.payload, msg.qc);
    }

    void on_new_view(const MsgBftNewView& msg, PrincipalId from) {
        if (decided_) {
            reply_decide(from);
            return;
        }
        auto slot = w.slot_of(from);
        if (slot < 0) return;
        if (msg.input) inputs_.emplace(static_cast<std::uint32_t>(slot), msg.input);
        if (msg.view < view_) return;
        auto& bucket = new_views_[msg.view];
        bucket.emplace(static_cast<std::uint32_t>(slot), std::make_shared<MsgBftNewView>(msg));
        maybe_propose_from_new_views(msg.view);
    }

    void on_timer(std::uint64_t token) {
        if (decided_) return;
        if (token == input_deadline_token_) {
            input_deadline_token_ = 0;
            if (is_coordinator(view_)) propose(view_);
            return;
        }
        if (token != view_timer_token_) return;
        view_timer_token_ = 0;
        advance_view();
    }

    const std::map<std::uint32_t, std::shared_ptr<const MsgBftInput>>& inputs() const {
        return inputs_;
    }

private:
    struct Lock {
        std::int64_t view = -1;
        Digest digest;
        BftPayloadPtr payload;
    };

    std::uint32_t coordinator(std::uint32_t v) const {
        return cfg.slots[(cfg.rotation_base + v) % cfg.slots.size()];
    }
    bool is_coordinator(std::uint32_t v) const { return coordinator(v) == cfg.my_slot; }

    void send_input(std::uint32_t v) {
        if (!my_input_) return;
        w.send_to_slot(coordinator(v), std::make_shared<MsgBftInput>(*my_input_));
    }

    void arm_view_timer() {
        if (view_timer_token_) w.cancel_timer(view_timer_token_);
        view_timer_token_ = w.arm_timer(w.now() + cfg.view_timeout * (view_ + 1));
    }

    void fast_forward(std::uint32_t v) {
        view_ = v;
        arm_view_timer();
    }

    void advance_view() {
        ++view_;
        arm_view_timer();
        auto nv = std::make_shared<MsgBftNewView>();
        nv->scope = cfg.scope;
        nv->view = view_;
        if (lock_) {
            nv->locked_view = lock_->view;
            nv->locked_digest = lock_->digest;
            nv->locked_payload = lock_->payload;
        }
        nv->lock_sig = w.sign(new_view_digest(cfg.scope, view_, nv->locked_view, nv->locked_digest));
        if (cfg.aggregation && my_input_) nv->input = my_input_;
        if (is_coordinator(view_)) {
            new_views_[view_][cfg.my_slot] = nv;
            maybe_propose_from_new_views(view_);
        } else {
            w.send_to_slot(coordinator(view_), nv);
        }
    }

    static Digest new_view_digest(const std::string& scope, std::uint32_t view,
                                  std::int64_t locked_view, const Digest& locked_digest) {
        ByteWriter bw;
        bw.str("rcsim-newview");
        bw.str(scope);
        bw.u32(view);
        bw.u64(static_cast<std::uint64_t>(locked_view + 1));
        bw.fixed(locked_digest.bytes);
        return hash_bytes(bw.bytes());
    }

    void maybe_propose_from_new_views(std::uint32_t v) {
        if (decided_ || v != view_ || !is_coordinator(v) || proposal_view_ == static_cast<std::int64_t>(v))
            return;
        auto& bucket = new_views_[v];
        if (bucket.size() < cfg.quorum) return;
        // adopt the strongest lock: highest view, ties broken by popularity
        // then digest, so an equivocating coordinator's split heals
        std::int64_t max_view = -1;
        for (auto& [slot, nv] : bucket) max_view = std::max(max_view, nv->locked_view);
        std::shared_ptr<const MsgBftNewView> best;
        if (max_view >= 0) {
            std::map<std::string, std::uint32_t> popularity;
            for (auto& [slot, nv] : bucket)
                if (nv->locked_view == max_view) popularity[nv->locked_digest.hex()]++;
            std::string chosen;
            std::uint32_t chosen_count = 0;
            for (auto& [digest_hex, count] : popularity) {
                if (count > chosen_count || (count == chosen_count && digest_hex < chosen)) {
                    chosen = digest_hex;
                    chosen_count = count;
                }
            }
            for (auto& [slot, nv] : bucket)
                if (nv->locked_view == max_view && nv->locked_digest.hex() == chosen &&
                    nv->locked_payload)
                    best = nv;
        }
        justification_.clear();
        for (auto& [slot, nv] : bucket) {
            MsgBftSignReq::LockInfo li;
            li.who = nv->lock_sig.signer;
            li.locked_view = nv->locked_view;
            li.locked_digest = nv->locked_digest;
            li.sig = nv->lock_sig;
            justification_.push_back(li);
        }
        if (best) {
            propose_payload(v, best->locked_payload);
        } else {
            propose(v);
        }
    }

    void propose(std::uint32_t v) {
        std::vector<std::shared_ptr<const MsgBftInput>> ins;
        if (my_input_) inputs_.emplace(cfg.my_slot, my_input_);
        for (auto& [slot, in] : inputs_) ins.push_back(in);
        BftPayloadPtr p = build(ins);
        if (!p) return;
        propose_payload(v, p);
    }

    void propose_payload(std::uint32_t v, BftPayloadPtr p) {
        proposal_ = p;
        proposal_view_ = v;
        sigs_.clear();
        byz_sigs_b_.clear();
        BftPayloadPtr alt;
        if (byz_equivocate && byz_mutate) {
            alt = byz_mutate(*p);
            byz_proposal_b_ = alt;
        }
        int i = 0;
        for (auto slot : cfg.slots) {
            auto req = std::make_shared<MsgBftSignReq>();
            req->scope = cfg.scope;
            req->view = v;
            req->payload = (alt && (i % 2 == 1)) ? alt : p;
            req->justification = justification_;
            if (slot == cfg.my_slot) {
                on_sign_req(*req, self_principal_);
            } else {
                w.send_to_slot(slot, req);
            }
            ++i;
        }
    }

    struct JustificationChoice {
        bool valid = false;
        bool has_lock = false;
        std::int64_t max_view = -1;
        Digest digest;
    };

    JustificationChoice justification_choice(const MsgBftSignReq& req) const {
        JustificationChoice out;
        if (req.justification.size() < cfg.quorum) return out;
        std::set<std::int64_t> seen_slots;
        std::int64_t max_view = -1;
        for (const auto& li : req.justification) {
            auto slot = w.slot_of(li.who);
            if (slot < 0 || !seen_slots.insert(slot).second) return out;
            if (!w.verify(li.sig,
                          new_view_digest(cfg.scope, req.view, li.locked_view, li.locked_digest)))
                return out;
            max_view = std::max(max_view, li.locked_view);
        }
        if (seen_slots.size() < cfg.quorum) return out;
        out.valid = true;
        out.max_view = max_view;
        if (max_view < 0) return out;
        out.has_lock = true;
        std::map<std::string, std::uint32_t> popularity;
        std::map<std::string, Digest> by_hex;
        for (const auto& li : req.justification) {
            if (li.locked_view != max_view) continue;
            popularity[li.locked_digest.hex()]++;
            by_hex[li.locked_digest.hex()] = li.locked_digest;
        }
        std::string chosen;
        std::uint32_t chosen_count = 0;
        for (auto& [digest_hex, count] : popularity) {
            if (count > chosen_count || (count == chosen_count && digest_hex < chosen)) {
                chosen = digest_hex;
                chosen_count = count;
            }
        }
        out.digest = by_hex[chosen];
        return out;
    }

    void collect(std::map<std::uint32_t, Signature>& sink, const MsgBftSignResp& resp,
                 const Digest&, PrincipalId from, const BftPayloadPtr& payload) {
        auto slot = w.slot_of(from);
        if (slot < 0) return;
        if (!w.verify(resp.sig, QuorumCertificate::signed_message(cfg.cert_scope, cfg.cert_cycle,
                                                                  resp.payload_digest)))
            return;
        sink.emplace(static_cast<std::uint32_t>(slot), resp.sig);
        if (sink.size() < cfg.quorum) return;
        QuorumCertificate qc;
        qc.bg_id = cfg.cert_scope;
        qc.cycle = cfg.cert_cycle;
        qc.payload_root = resp.payload_digest;
        qc.quorum_size = cfg.quorum;
        for (auto& [s, sig] : sink) qc.signatures.push_back(sig);
        auto dec = std::make_shared<MsgBftDecide>();
        dec->scope = cfg.scope;
        dec->payload = payload;
        dec->qc = qc;
        for (auto slot2 : cfg.slots)
            if (slot2 != cfg.my_slot) w.send_to_slot(slot2, dec);
        deliver_decision(payload, qc);
    }

    bool verify_quorum(const QuorumCertificate& qc) const {
        if (qc.signatures.size() < cfg.quorum) return false;
        Digest msg = QuorumCertificate::signed_message(qc.bg_id, qc.cycle, qc.payload_root);
        std::set<std::int64_t> slots;
        for (const auto& sig : qc.signatures) {
            auto slot = w.slot_of(sig.signer);
            if (slot < 0 || !slots.insert(slot).second) return false;
            if (!w.verify(sig, msg)) return false;
        }
        return slots.size() >= cfg.quorum;
    }

    void deliver_decision(BftPayloadPtr p, const QuorumCertificate& qc) {
        if (decided_) return;
        decided_ = true;
        if (view_timer_token_) w.cancel_timer(view_timer_token_);
        if (input_deadline_token_) w.cancel_timer(input_deadline_token_);
        decision_ = p;
        decision_qc_ = qc;
        on_decide(p, qc);
    }

    void reply_decide(PrincipalId to) {
        auto slot = w.slot_of(to);
        if (slot < 0 || !decision_) return;
        auto dec = std::make_shared<MsgBftDecide>();
        dec->scope = cfg.scope;
        dec->payload = decision_;
        dec->qc = decision_qc_;
        w.send_to_slot(static_cast<std::uint32_t>(slot), dec);
    }

public:
    PrincipalId self_principal_ = 0;  // set by owner; used for self-delivery

private:
    bool started_ = false;
    bool decided_ = false;
    std::uint32_t view_ = 0;
    std::int64_t proposal_view_ = -1;
    std::shared_ptr<const MsgBftInput> my_input_;
    std::map<std::uint32_t, std::shared_ptr<const MsgBftInput>> inputs_;
    std::optional<Lock> lock_;
    BftPayloadPtr proposal_;
    BftPayloadPtr byz_proposal_b_;
    std::map<std::uint32_t, Signature> sigs_;
    std::map<std::uint32_t, Signature> byz_sigs_b_;
    std::vector<MsgBftSignReq::LockInfo> justification_;
    std::map<std::uint32_t, std::map<std::uint32_t, std::shared_ptr<const MsgBftNewView>>> new_views_;
    BftPayloadPtr decision_;
    QuorumCertificate decision_qc_;
    std::uint64_t view_timer_token_ = 0;
    std::uint64_t input_deadline_token_ = 0;
};

}  // namespace rcsim
