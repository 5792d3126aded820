#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "rcsim/certifier.hpp"
#include "rcsim/certificates.hpp"
#include "rcsim/merkle.hpp"
#include "rcsim/rng.hpp"

using namespace rcsim;

namespace {

Digest d_of(std::uint8_t fill) {
    Digest d;
    d.bytes.fill(fill);
    return d;
}

Digest rand_digest(Rng& rng) {
    Digest d;
    for (auto& b : d.bytes) b = static_cast<std::uint8_t>(rng.uniform(0, 255));
    return d;
}

// Reference hasher: straight-line recomputation of the padded tree, written
// independently of MerkleTree. Pads each level by duplicating the last node.
Digest reference_root(std::vector<Digest> leaves) {
    std::vector<Digest> level;
    for (const auto& l : leaves) level.push_back(merkle_leaf(l));
    while (level.size() > 1) {
        if (level.size() % 2 == 1) level.push_back(level.back());
        std::vector<Digest> up;
        for (std::size_t i = 0; i + 1 < level.size(); i += 2)
            up.push_back(merkle_node(level[i], level[i + 1]));
        level = up;
    }
    return level[0];
}

struct TestWorld {
    KeyDirectory dir;
    std::map<PrincipalId, KeyPair> keys;

    explicit TestWorld(std::size_t n, std::uint64_t seed = 7) {
        for (PrincipalId id = 1; id <= n; ++id) {
            auto kp = derive_keypair(id, seed);
            keys[id] = kp;
            dir.add(kp);
        }
    }

    QuorumCertificate make_qc(BgId bg, Cycle cycle, const Digest& root,
                              std::vector<PrincipalId> signers, std::uint32_t quorum) {
        QuorumCertificate qc;
        qc.bg_id = bg;
        qc.cycle = cycle;
        qc.payload_root = root;
        qc.quorum_size = quorum;
        Digest msg = QuorumCertificate::signed_message(bg, cycle, root);
        for (auto id : signers) qc.signatures.push_back(default_provider().sign(keys.at(id), msg));
        return qc;
    }
};

}  // namespace

TEST_CASE("sha256 matches standard test vectors") {
    CHECK(hash_string("abc").hex() ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(hash_string("").hex() ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(hash_string("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").hex() ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // and a multi-block input
    std::string million(1000000, 'a');
    CHECK(hash_string(million).hex() ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("merkle_build single leaf") {
    auto d1 = d_of(0x11);
    auto tree = MerkleTree::build({d1});
    CHECK(tree.root() == merkle_leaf(d1));
    // empty path verifies the single-leaf root
    CHECK(merkle_verify(tree.root(), d1, tree.prove(0)));
    CHECK(tree.prove(0).path.empty());
}

TEST_CASE("merkle_build two leaves is definitional") {
    auto d1 = d_of(0x11), d2 = d_of(0x22);
    auto tree = MerkleTree::build({d1, d2});
    CHECK(tree.root() == merkle_node(merkle_leaf(d1), merkle_leaf(d2)));

    auto proof = tree.prove(0);
    REQUIRE(proof.path.size() == 1);
    CHECK(proof.path[0].first == merkle_leaf(d2));
    CHECK(proof.path[0].second == true);  // sibling on the right
    CHECK(merkle_verify(tree.root(), d1, proof));
}

TEST_CASE("merkle_build five leaves equals reference hasher") {
    Rng rng(2024);
    std::vector<Digest> leaves;
    for (int i = 0; i < 5; ++i) leaves.push_back(rand_digest(rng));
    CHECK(MerkleTree::build(leaves).root() == reference_root(leaves));
}

TEST_CASE("merkle_build rejects empty input") {
    CHECK_THROWS_AS(MerkleTree::build({}), std::invalid_argument);
}

TEST_CASE("merkle proofs verify for all leaves and sizes, mutations fail") {
    Rng rng(99);
    for (std::size_t n = 1; n <= 17; ++n) {
        std::vector<Digest> leaves;
        for (std::size_t i = 0; i < n; ++i) leaves.push_back(rand_digest(rng));
        auto tree = MerkleTree::build(leaves);
        CHECK(tree.root() == reference_root(leaves));
        for (std::size_t i = 0; i < n; ++i) {
            auto proof = tree.prove(i);
            REQUIRE(merkle_verify(tree.root(), leaves[i], proof));
            if (!proof.path.empty()) {
                // flip one sibling bit
                auto bad = proof;
                bad.path[rng.uniform(0, bad.path.size() - 1)].first.bytes[0] ^= 0x01;
                CHECK_FALSE(merkle_verify(tree.root(), leaves[i], bad));
            }
        }
        // path length is ceil(log2 n) after padding
        std::size_t depth = 0, cap = 1;
        while (cap < n) cap *= 2, ++depth;
        CHECK(tree.prove(0).path.size() == depth);
    }
}

TEST_CASE("order_blocks basic cases") {
    using Block = std::pair<Digest, std::string>;
    CHECK(order_blocks<std::string>({}).empty());

    Block a{d_of(0x0A), "A"}, b{d_of(0x03), "B"};
    auto out = order_blocks<std::string>({a, b});
    REQUIRE(out.size() == 2);
    CHECK(out[0].second == "B");
    CHECK(out[1].second == "A");
}

TEST_CASE("order_blocks matches an independent comparison sort") {
    Rng rng(5);
    std::vector<std::pair<Digest, int>> blocks;
    for (int i = 0; i < 20; ++i) blocks.push_back({rand_digest(rng), i});

    // oracle: selection sort on a copy, no dedup needed (roots distinct whp)
    auto oracle = blocks;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        std::size_t best = i;
        for (std::size_t j = i + 1; j < oracle.size(); ++j)
            if (oracle[j].first < oracle[best].first) best = j;
        std::swap(oracle[i], oracle[best]);
    }

    auto got = order_blocks<int>(blocks);
    REQUIRE(got.size() == oracle.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].first == oracle[i].first);
}

TEST_CASE("order_blocks is permutation-invariant and dedups equal roots") {
    Rng rng(6);
    std::vector<std::pair<Digest, int>> blocks;
    for (int i = 0; i < 10; ++i) blocks.push_back({rand_digest(rng), i});
    blocks.push_back({blocks[3].first, 3});  // duplicate root, identical content

    auto base = order_blocks<int>(blocks);
    CHECK(base.size() == 10);
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = blocks;
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.uniform(0, i - 1)]);
        auto out = order_blocks<int>(shuffled);
        REQUIRE(out.size() == base.size());
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].first == base[i].first);
    }
}

TEST_CASE("qc_verify accepts a full quorum and rejects a short one") {
    TestWorld w(5);
    auto root = d_of(0x42);
    auto good = w.make_qc(1, 7, root, {1, 2, 3}, 3);
    CHECK(qc_verify(good, 3, w.dir, 1, 7));

    auto short_qc = w.make_qc(1, 7, root, {1, 2}, 3);
    auto r = qc_verify(short_qc, 3, w.dir, 1, 7);
    CHECK_FALSE(r);
    CHECK(r.error == QcError::TooFewSignatures);
}

TEST_CASE("qc_verify rejects wrong cycle context (replay)") {
    TestWorld w(5);
    auto qc = w.make_qc(1, 7, d_of(0x42), {1, 2, 3}, 3);
    auto r = qc_verify(qc, 3, w.dir, 1, 8);
    CHECK_FALSE(r);
    CHECK(r.error == QcError::WrongContext);
}

TEST_CASE("qc_verify flags unknown signer and duplicate signer") {
    TestWorld w(3);
    auto root = d_of(0x42);
    auto qc = w.make_qc(1, 7, root, {1, 2, 3}, 3);
    qc.signatures[2].signer = 77;  // not in the directory
    auto r = qc_verify(qc, 3, w.dir, 1, 7);
    CHECK_FALSE(r);
    CHECK(r.error == QcError::UnknownSigner);

    auto dup = w.make_qc(1, 7, root, {1, 2, 2}, 3);
    r = qc_verify(dup, 3, w.dir, 1, 7);
    CHECK_FALSE(r);
    CHECK(r.error == QcError::DuplicateSigner);
}

TEST_CASE("qc_verify is monotone in signatures") {
    TestWorld w(6);
    Rng rng(11);
    auto root = rand_digest(rng);
    auto qc = w.make_qc(2, 3, root, {1, 2, 3, 4, 5}, 3);
    REQUIRE(qc_verify(qc, 3, w.dir, 2, 3));
    // removing any signature never flips false -> true; here we additionally
    // check a valid cert only becomes invalid once below quorum
    for (std::size_t drop = 0; drop < 5; ++drop) {
        auto fewer = qc;
        fewer.signatures.erase(fewer.signatures.begin() + drop);
        CHECK(qc_verify(fewer, 3, w.dir, 2, 3).ok == (fewer.signatures.size() >= 3));
    }
    auto invalid = w.make_qc(2, 3, root, {1, 2}, 3);
    REQUIRE_FALSE(qc_verify(invalid, 3, w.dir, 2, 3));
    invalid.signatures.pop_back();
    CHECK_FALSE(qc_verify(invalid, 3, w.dir, 2, 3));
}

TEST_CASE("certify_decision signs first valid decision only") {
    TestWorld w(4);
    DecisionCertifier cert(w.keys.at(4), &w.dir);

    auto s = d_of(0x51);
    auto qc_s = w.make_qc(1, 9, s, {1, 2, 3}, 3);
    auto first = cert.certify("bg1", s, qc_s, 3);
    REQUIRE(std::holds_alternative<ValidityCertificate>(first));
    auto vc = std::get<ValidityCertificate>(first);
    CHECK(vc.verify(1, w.dir, s));

    // conflicting S' for the same cycle is refused
    auto s2 = d_of(0x52);
    auto qc_s2 = w.make_qc(1, 9, s2, {1, 2, 3}, 3);
    auto second = cert.certify("bg1", s2, qc_s2, 3);
    REQUIRE(std::holds_alternative<CertifyRejected>(second));
    CHECK(std::get<CertifyRejected>(second).reason == CertifyError::DuplicateDecision);
}

TEST_CASE("certify_decision rejects a decision whose qc fails") {
    TestWorld w(4);
    DecisionCertifier cert(w.keys.at(4), &w.dir);
    auto s = d_of(0x51);
    auto bad_qc = w.make_qc(1, 9, s, {1, 2}, 3);  // below quorum
    auto res = cert.certify("bg1", s, bad_qc, 3);
    REQUIRE(std::holds_alternative<CertifyRejected>(res));
    CHECK(std::get<CertifyRejected>(res).reason == CertifyError::InvalidDecision);
}

TEST_CASE("at most one certificate per scope and cycle across interleavings") {
    TestWorld w(6);
    // enumerate all orders of three proposals (two conflicting for cycle 1, one for cycle 2)
    struct Proposal {
        std::string scope;
        Digest digest;
        Cycle cycle;
    };
    std::vector<Proposal> props = {{"s", d_of(1), 1}, {"s", d_of(2), 1}, {"s", d_of(3), 2}};
    std::vector<int> idx = {0, 1, 2};
    std::sort(idx.begin(), idx.end());
    do {
        DecisionCertifier cert(w.keys.at(6), &w.dir);
        std::map<Cycle, int> granted;
        for (int i : idx) {
            const auto& p = props[i];
            auto qc = w.make_qc(1, p.cycle, p.digest, {1, 2, 3}, 3);
            auto res = cert.certify(p.scope, p.digest, qc, 3);
            if (std::holds_alternative<ValidityCertificate>(res)) granted[p.cycle]++;
        }
        CHECK(granted[1] == 1);
        CHECK(granted[2] == 1);
        CHECK(cert.certified_count() == 2);
    } while (std::next_permutation(idx.begin(), idx.end()));
}

TEST_CASE("failure and global certificates verify and reject forgeries") {
    TestWorld w(7);
    FailureCertificate fc;
    fc.suspect_bg_id = 2;
    fc.cycle = 4;
    Digest msg = FailureCertificate::signed_message(2, 4);
    fc.signatures.push_back(default_provider().sign(w.keys.at(1), msg));
    fc.signatures.push_back(default_provider().sign(w.keys.at(2), msg));
    CHECK(fc.verify(2, w.dir));
    CHECK_FALSE(fc.verify(3, w.dir));
    auto tampered = fc;
    tampered.cycle = 5;  // signature no longer covers (suspect, cycle)
    CHECK_FALSE(tampered.verify(2, w.dir));

    GlobalQuorumCertificate gqc;
    gqc.epoch = 3;
    gqc.participating_bgs = {0, 1, 2};
    gqc.first_cycle = 96;
    gqc.last_cycle = 127;
    gqc.quorum_sizes = {{0, 3}, {1, 3}, {2, 3}};
    auto gmsg = gqc.signed_message();
    for (PrincipalId id : {1, 2, 3}) gqc.signatures.push_back(default_provider().sign(w.keys.at(id), gmsg));
    CHECK(gqc.verify(3, w.dir));
    gqc.participating_bgs = {0, 1};
    CHECK_FALSE(gqc.verify(3, w.dir));  // content changed under the signatures
}

TEST_CASE("certificate serialization is canonical and stable") {
    TestWorld w(3);
    auto qc1 = w.make_qc(1, 7, d_of(0x42), {1, 2, 3}, 3);
    auto qc2 = w.make_qc(1, 7, d_of(0x42), {1, 2, 3}, 3);
    CHECK(qc1.digest() == qc2.digest());
    CHECK(qc1.serialize() == qc2.serialize());
    auto other = w.make_qc(1, 8, d_of(0x42), {1, 2, 3}, 3);
    CHECK(qc1.digest() != other.digest());
}
