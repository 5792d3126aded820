// Principals, key pairs and the pluggable signature provider. The default
// provider is a deterministic keyed hash: sig = H(secret || message digest).
// Forgery is outside the threat model, so verification consults a trusted
// key directory instead of doing public-key math.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>

#include "rcsim/digest.hpp"

namespace rcsim {

using PrincipalId = std::uint64_t;

struct KeyPair {
    PrincipalId public_id = 0;
    Digest secret;  // signing seed, never shared between principals
};

struct Signature {
    PrincipalId signer = 0;
    Digest mac;

    auto operator<=>(const Signature&) const = default;
};

inline KeyPair derive_keypair(PrincipalId id, std::uint64_t world_seed) {
    ByteWriter w;
    w.str("rcsim-key");
    w.u64(world_seed);
    w.u64(id);
    return KeyPair{id, hash_bytes(w.bytes())};
}

class KeyDirectory {
public:
    void add(const KeyPair& kp) { keys_[kp.public_id] = kp.secret; }

    bool known(PrincipalId id) const { return keys_.count(id) != 0; }

    std::optional<Digest> secret_of(PrincipalId id) const {
        auto it = keys_.find(id);
        if (it == keys_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<PrincipalId, Digest> keys_;
};

class SignatureProvider {
public:
    virtual ~SignatureProvider() = default;
    virtual Signature sign(const KeyPair& kp, const Digest& msg) const = 0;
    virtual bool verify(const KeyDirectory& dir, const Signature& sig, const Digest& msg) const = 0;
};

class KeyedHashProvider final : public SignatureProvider {
public:
    Signature sign(const KeyPair& kp, const Digest& msg) const override {
        return Signature{kp.public_id, mac(kp.secret, kp.public_id, msg)};
    }

    bool verify(const KeyDirectory& dir, const Signature& sig, const Digest& msg) const override {
        auto secret = dir.secret_of(sig.signer);
        if (!secret) return false;
        return sig.mac == mac(*secret, sig.signer, msg);
    }

private:
    static Digest mac(const Digest& secret, PrincipalId signer, const Digest& msg) {
        ByteWriter w;
        w.fixed(secret.bytes);
        w.u64(signer);
        w.fixed(msg.bytes);
        return hash_bytes(w.bytes());
    }
};

inline const SignatureProvider& default_provider() {
    static const KeyedHashProvider p;
    return p;
}

}  // namespace rcsim
