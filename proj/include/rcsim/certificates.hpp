// The three certificate species that carry all inter-tier trust, plus the
// validity certificate used by the decision-certification layer. All of them
// serialize to a canonical length-prefixed layout so digests over
// certificates are stable across runs.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "rcsim/digest.hpp"
#include "rcsim/signature.hpp"

namespace rcsim {

using BgId = std::uint32_t;
using Cycle = std::uint64_t;
using EpochId = std::uint64_t;

/// Certifies one BG decision: 2f_i+1 monitor signatures over
/// (bg_id, cycle, payload_root). The embedded cycle number doubles as
/// replay protection.
struct QuorumCertificate {
    BgId bg_id = 0;
    Cycle cycle = 0;
    Digest payload_root;
    std::vector<Signature> signatures;
    std::uint32_t quorum_size = 0;

    static Digest signed_message(BgId bg, Cycle cycle, const Digest& root) {
        ByteWriter w;
        w.str("rcsim-qc");
        w.u32(bg);
        w.u64(cycle);
        w.fixed(root.bytes);
        return hash_bytes(w.bytes());
    }

    Bytes serialize() const {
        ByteWriter w;
        w.u32(bg_id);
        w.u64(cycle);
        w.fixed(payload_root.bytes);
        w.u32(static_cast<std::uint32_t>(signatures.size()));
        for (const auto& s : signatures) {
            w.u64(s.signer);
            w.fixed(s.mac.bytes);
        }
        w.u32(quorum_size);
        return w.take();
    }

    Digest digest() const { return hash_bytes(serialize()); }
};

enum class QcError { None, TooFewSignatures, DuplicateSigner, UnknownSigner, BadSignature, WrongContext };

struct QcVerifyResult {
    bool ok = false;
    QcError error = QcError::None;
    operator bool() const { return ok; }
};

/// Checks a quorum certificate against the verification context. All signers
/// must be distinct, known to the directory, and the bg/cycle fields must
/// match the context (replay protection).
inline QcVerifyResult qc_verify(const QuorumCertificate& cert, std::uint32_t expected_quorum,
                                const KeyDirectory& dir, BgId expected_bg, Cycle expected_cycle,
                                const SignatureProvider& prov = default_provider()) {
    if (cert.bg_id != expected_bg || cert.cycle != expected_cycle)
        return {false, QcError::WrongContext};
    if (cert.signatures.size() < expected_quorum) return {false, QcError::TooFewSignatures};
    Digest msg = QuorumCertificate::signed_message(cert.bg_id, cert.cycle, cert.payload_root);
    std::set<PrincipalId> seen;
    for (const auto& sig : cert.signatures) {
        if (!seen.insert(sig.signer).second) return {false, QcError::DuplicateSigner};
        if (!dir.known(sig.signer)) return {false, QcError::UnknownSigner};
        if (!prov.verify(dir, sig, msg)) return {false, QcError::BadSignature};
    }
    return {true, QcError::None};
}

/// f+1 distinct CM-node signatures attesting a BG was unreachable in a cycle.
struct FailureCertificate {
    BgId suspect_bg_id = 0;
    Cycle cycle = 0;
    std::vector<Signature> signatures;

    static Digest signed_message(BgId suspect, Cycle cycle) {
        ByteWriter w;
        w.str("rcsim-failcert");
        w.u32(suspect);
        w.u64(cycle);
        return hash_bytes(w.bytes());
    }

    bool verify(std::uint32_t min_signers, const KeyDirectory& dir,
                const SignatureProvider& prov = default_provider()) const {
        if (signatures.size() < min_signers) return false;
        Digest msg = signed_message(suspect_bg_id, cycle);
        std::set<PrincipalId> seen;
        for (const auto& s : signatures) {
            if (!seen.insert(s.signer).second) return false;
            if (!prov.verify(dir, s, msg)) return false;
        }
        return true;
    }

    Bytes serialize() const {
        ByteWriter w;
        w.u32(suspect_bg_id);
        w.u64(cycle);
        w.u32(static_cast<std::uint32_t>(signatures.size()));
        for (const auto& s : signatures) {
            w.u64(s.signer);
            w.fixed(s.mac.bytes);
        }
        return w.take();
    }
};

/// Certifies one epoch: the participating BGs, their quorum sizes and the
/// committed cycle range, signed by a quorum of BG leaders.
struct GlobalQuorumCertificate {
    EpochId epoch = 0;
    std::vector<BgId> participating_bgs;        // sorted ascending
    Cycle first_cycle = 0;
    Cycle last_cycle = 0;                       // committed cycle range [first, last]
    std::map<BgId, std::uint32_t> quorum_sizes; // per-BG quorum sizes
    std::vector<Signature> signatures;          // BG-leader signatures

    Bytes content_bytes() const {
        ByteWriter w;
        w.str("rcsim-gqc");
        w.u64(epoch);
        w.u32(static_cast<std::uint32_t>(participating_bgs.size()));
        for (auto bg : participating_bgs) w.u32(bg);
        w.u64(first_cycle);
        w.u64(last_cycle);
        w.u32(static_cast<std::uint32_t>(quorum_sizes.size()));
        for (const auto& [bg, q] : quorum_sizes) {
            w.u32(bg);
            w.u32(q);
        }
        return w.take();
    }

    Digest signed_message() const { return hash_bytes(content_bytes()); }

    bool verify(std::uint32_t min_signers, const KeyDirectory& dir,
                const SignatureProvider& prov = default_provider()) const {
        if (signatures.size() < min_signers) return false;
        Digest msg = signed_message();
        std::set<PrincipalId> seen;
        for (const auto& s : signatures) {
            if (!seen.insert(s.signer).second) return false;
            if (!prov.verify(dir, s, msg)) return false;
        }
        return true;
    }

    Bytes serialize() const {
        ByteWriter w;
        Bytes content = content_bytes();
        w.blob(content);
        w.u32(static_cast<std::uint32_t>(signatures.size()));
        for (const auto& s : signatures) {
            w.u64(s.signer);
            w.fixed(s.mac.bytes);
        }
        return w.take();
    }

    Digest digest() const { return hash_bytes(serialize()); }
};

/// Additional f+1 signatures on top of a quorum certificate attesting that
/// the decision is the first valid one for its scope (see certifier.hpp).
struct ValidityCertificate {
    QuorumCertificate inner;
    std::vector<Signature> validity_signatures;
    std::uint64_t decision_index = 0;  // position in the underlying decision log

    static Digest signed_message(const Digest& decision_digest, std::uint64_t index) {
        ByteWriter w;
        w.str("rcsim-validity");
        w.fixed(decision_digest.bytes);
        w.u64(index);
        return hash_bytes(w.bytes());
    }

    bool verify(std::uint32_t min_signers, const KeyDirectory& dir, const Digest& decision_digest,
                const SignatureProvider& prov = default_provider()) const {
        if (validity_signatures.size() < min_signers) return false;
        Digest msg = signed_message(decision_digest, decision_index);
        std::set<PrincipalId> seen;
        for (const auto& s : validity_signatures) {
            if (!seen.insert(s.signer).second) return false;
            if (!prov.verify(dir, s, msg)) return false;
        }
        return true;
    }
};

}  // namespace rcsim
