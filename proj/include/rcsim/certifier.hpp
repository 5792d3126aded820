// Decision certification: an honest signer aware of all prior decisions signs
// only the first valid decision per scope, so at most one validity
// certificate can exist per (scope, cycle) even if the underlying consensus
// black box commits duplicates.
#pragma once

#include <map>
#include <string>
#include <variant>

#include "rcsim/certificates.hpp"

namespace rcsim {

enum class CertifyError { DuplicateDecision, InvalidDecision };

struct CertifyRejected {
    CertifyError reason;
};

using CertifyResult = std::variant<ValidityCertificate, CertifyRejected>;

/// One honest node's view of the decision log. `scope` names the consensus
/// instance (e.g. "bg1/cycle" or "cm/outcome"); decisions are keyed by
/// (scope, cycle).
class DecisionCertifier {
public:
    DecisionCertifier(KeyPair key, const KeyDirectory* dir,
                      const SignatureProvider* prov = &default_provider())
        : key_(std::move(key)), dir_(dir), prov_(prov) {}

    CertifyResult certify(const std::string& scope, const Digest& decision_digest,
                          const QuorumCertificate& qc, std::uint32_t expected_quorum) {
        return certify_for(scope, qc.cycle, decision_digest, qc, expected_quorum);
    }

    /// For decision logs whose certificates are stamped with a log position
    /// rather than the protocol cycle the decision is about.
    CertifyResult certify_for(const std::string& scope, Cycle logical_cycle,
                              const Digest& decision_digest, const QuorumCertificate& qc,
                              std::uint32_t expected_quorum) {
        if (!qc_verify(qc, expected_quorum, *dir_, qc.bg_id, qc.cycle, *prov_))
            return CertifyRejected{CertifyError::InvalidDecision};
        auto key = std::make_pair(scope, logical_cycle);
        auto it = first_.find(key);
        if (it != first_.end()) {
            if (it->second.digest == decision_digest) return it->second.cert;  // idempotent
            return CertifyRejected{CertifyError::DuplicateDecision};
        }
        ValidityCertificate vc;
        vc.inner = qc;
        vc.decision_index = next_index_++;
        vc.validity_signatures.push_back(
            prov_->sign(key_, ValidityCertificate::signed_message(decision_digest, vc.decision_index)));
        first_.emplace(key, Entry{decision_digest, vc});
        return vc;
    }

    /// Count of distinct certified decisions (for enumeration checks).
    std::size_t certified_count() const { return first_.size(); }

private:
    struct Entry {
        Digest digest;
        ValidityCertificate cert;
    };

    KeyPair key_;
    const KeyDirectory* dir_;
    const SignatureProvider* prov_;
    std::map<std::pair<std::string, Cycle>, Entry> first_;
    std::uint64_t next_index_ = 0;
};

}  // namespace rcsim
