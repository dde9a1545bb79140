#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lungnas {

/// Raised for malformed or truncated binary files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian byte sink.
class ByteWriter {
public:
    void bytes(std::string_view s) { buffer_.insert(buffer_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void str32(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    const std::vector<char>& buffer() const { return buffer_; }
    void write_file(const std::filesystem::path& path) const;

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::vector<char> buffer_;
};

/// Little-endian byte source over an in-memory file image.
class ByteReader {
public:
    explicit ByteReader(std::vector<char> data, std::string what = "file")
        : data_(std::move(data)), what_(std::move(what)) {}
    static ByteReader from_file(const std::filesystem::path& path);

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string str32() { return bytes(u32()); }

    std::size_t remaining() const { return data_.size() - pos_; }
    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError(what_ + ": truncated (need " + std::to_string(n) + " more bytes, have " +
                              std::to_string(remaining()) + ")");
        }
    }

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(U);
        return v;
    }
    std::vector<char> data_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file_bytes(const std::filesystem::path& path);

}  // namespace lungnas
