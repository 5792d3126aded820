// Canonical byte serialization. Certificates and trace digests hash these
// encodings, so the layout must be identical across runs: little-endian
// fixed-width integers, u32 length prefixes, fields in declaration order.
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rcsim {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void raw(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + len);
    }

    void blob(const Bytes& b) {
        u32(static_cast<std::uint32_t>(b.size()));
        raw(b.data(), b.size());
    }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    template <typename T, std::size_t N>
    void fixed(const std::array<T, N>& a) {
        static_assert(sizeof(T) == 1);
        raw(a.data(), N);
    }

    const Bytes& bytes() const { return out_; }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(const Bytes& b) : data_(b.data()), size_(b.size()) {}

    std::uint8_t u8() { return *need(1); }

    std::uint32_t u32() {
        const auto* p = need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        const auto* p = need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
        return v;
    }

    Bytes blob() {
        std::uint32_t n = u32();
        const auto* p = need(n);
        return Bytes(p, p + n);
    }

    std::string str() {
        std::uint32_t n = u32();
        const auto* p = need(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    template <typename T, std::size_t N>
    std::array<T, N> fixed() {
        static_assert(sizeof(T) == 1);
        const auto* p = need(N);
        std::array<T, N> a{};
        std::memcpy(a.data(), p, N);
        return a;
    }

    bool done() const { return pos_ == size_; }

private:
    const std::uint8_t* need(std::size_t n) {
        if (pos_ + n > size_) throw std::out_of_range("ByteReader: truncated input");
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::string to_hex(const std::uint8_t* p, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(digits[p[i] >> 4]);
        s.push_back(digits[p[i] & 0xf]);
    }
    return s;
}

}  // namespace rcsim
