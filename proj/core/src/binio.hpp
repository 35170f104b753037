#pragma once

// Little-endian byte encoding shared by the checkpoint, feature-map and
// index file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xret/errors.hpp"

namespace xret::binio {

class Writer {
public:
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void magic(std::string_view m) { out_.insert(out_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    template <typename U>
    void put_le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    void expect_magic(std::string_view m) {
        const std::size_t at = pos_;
        need(m.size(), "magic");
        if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
            throw ParseError("bad magic, expected \"" + std::string(m) + "\"", at);
        }
        pos_ += m.size();
    }
    std::uint8_t u8() {
        need(1, "u8");
        return data_[pos_++];
    }
    std::uint32_t u32() { return get_le<std::uint32_t>("u32"); }
    std::uint64_t u64() { return get_le<std::uint64_t>("u64"); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>("f32")); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>("f64")); }
    std::string str(std::size_t max_len = 1 << 16) {
        const std::size_t at = pos_;
        const std::uint32_t n = u32();
        if (n > max_len) throw ParseError("string length " + std::to_string(n) + " exceeds limit", at);
        need(n, "string payload");
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n, "bytes");
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw ParseError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                                 std::to_string(remaining()),
                             pos_);
        }
    }

private:
    template <typename U>
    U get_le(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(data_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace xret::binio
