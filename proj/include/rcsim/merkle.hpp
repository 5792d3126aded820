// Merkle trees with leaf/node domain separation (0x00/0x01 tags) and
// duplicate-last padding on odd levels. Block ordering sorts by root bytes.
#pragma once

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rcsim/digest.hpp"

namespace rcsim {

inline Digest merkle_leaf(const Digest& d) {
    std::uint8_t buf[33];
    buf[0] = 0x00;
    std::copy(d.bytes.begin(), d.bytes.end(), buf + 1);
    return hash_bytes(buf, sizeof buf);
}

inline Digest merkle_node(const Digest& left, const Digest& right) {
    std::uint8_t buf[65];
    buf[0] = 0x01;
    std::copy(left.bytes.begin(), left.bytes.end(), buf + 1);
    std::copy(right.bytes.begin(), right.bytes.end(), buf + 33);
    return hash_bytes(buf, sizeof buf);
}

struct MerkleProof {
    std::size_t leaf_index = 0;
    /// (sibling digest, sibling is on the right)
    std::vector<std::pair<Digest, bool>> path;
};

class MerkleTree {
public:
    static MerkleTree build(const std::vector<Digest>& leaves) {
        if (leaves.empty()) throw std::invalid_argument("merkle_build: empty leaf list");
        MerkleTree t;
        std::vector<Digest> level;
        level.reserve(leaves.size());
        for (const auto& l : leaves) level.push_back(merkle_leaf(l));
        t.levels_.push_back(level);
        while (level.size() > 1) {
            if (level.size() % 2 == 1) level.push_back(level.back());
            std::vector<Digest> next;
            next.reserve(level.size() / 2);
            for (std::size_t i = 0; i < level.size(); i += 2)
                next.push_back(merkle_node(level[i], level[i + 1]));
            t.levels_.push_back(next);
            level = std::move(next);
        }
        return t;
    }

    const Digest& root() const { return levels_.back().front(); }
    std::size_t leaf_count() const { return levels_.front().size(); }

    MerkleProof prove(std::size_t index) const {
        if (index >= leaf_count()) throw std::out_of_range("merkle prove: bad leaf index");
        MerkleProof p;
        p.leaf_index = index;
        std::size_t i = index;
        for (std::size_t lvl = 0; lvl + 1 < levels_.size(); ++lvl) {
            const auto& nodes = levels_[lvl];
            std::size_t sib = i ^ 1;
            // odd level: the last node pairs with itself
            if (sib >= nodes.size()) sib = i;
            p.path.emplace_back(nodes[sib], (i % 2) == 0);
            i /= 2;
        }
        return p;
    }

private:
    std::vector<std::vector<Digest>> levels_;
};

inline Digest merkle_root(const std::vector<Digest>& leaves) { return MerkleTree::build(leaves).root(); }

/// True iff folding `leaf` through the proof path reproduces `root`.
inline bool merkle_verify(const Digest& root, const Digest& leaf, const MerkleProof& proof) {
    Digest acc = merkle_leaf(leaf);
    for (const auto& [sibling, sibling_right] : proof.path)
        acc = sibling_right ? merkle_node(acc, sibling) : merkle_node(sibling, acc);
    return acc == root;
}

/// Sorts blocks ascending by root digest; identical roots collapse to one
/// entry (same root means same content under collision-freeness).
template <typename Payload>
std::vector<std::pair<Digest, Payload>> order_blocks(std::vector<std::pair<Digest, Payload>> blocks) {
    std::sort(blocks.begin(), blocks.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    blocks.erase(std::unique(blocks.begin(), blocks.end(),
                             [](const auto& a, const auto& b) { return a.first == b.first; }),
                 blocks.end());
    return blocks;
}

}  // namespace rcsim
