#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace magnets::binio {

// Little-endian append-only buffer.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void str(const std::string& s) { bytes(s.data(), s.size()); }

    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; ok() turns false on the first overrun and stays false.
class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    bool ok() const noexcept { return ok_; }
    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return size_ - pos_; }

    bool take(std::size_t n, const std::uint8_t** out) {
        if (!ok_ || n > size_ - pos_) {
            ok_ = false;
            return false;
        }
        *out = data_ + pos_;
        pos_ += n;
        return true;
    }
    std::uint32_t u32() {
        const std::uint8_t* p;
        if (!take(4, &p)) return 0;
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint8_t* p;
        if (!take(8, &p)) return 0;
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t n) {
        const std::uint8_t* p;
        if (!take(n, &p)) return {};
        return std::string(reinterpret_cast<const char*>(p), n);
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    bool ok_ = true;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

std::vector<std::uint8_t> read_file(const std::string& path);
// Writes via a temporary file and rename.
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);

}  // namespace magnets::binio
