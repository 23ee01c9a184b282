#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "ktan/errors.hpp"
#include "ktan/tensor.hpp"

// Little-endian primitives for the dataset and checkpoint formats. Values are
// serialized by explicit byte shifts, independent of host endianness.
namespace ktan::binio {

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open for writing: " + path);
        path_ = path;
    }

    void u8(uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

    void magic(const char m[4]) { out_.write(m, 4); }

    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    template <typename T>
    void scalar(T v) {
        if constexpr (std::is_same_v<T, float>)
            f32(v);
        else
            f64(v);
    }

    template <typename T>
    void tensor(const Tensor<T>& t) {
        u64(static_cast<uint64_t>(t.rank()));
        for (int64_t e : t.shape()) i64(e);
        for (int64_t i = 0; i < t.numel(); ++i) scalar<T>(t[i]);
    }

    void close() {
        out_.close();
        if (!out_) throw FormatError("write failure on " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open for reading: " + path);
        in_.seekg(0, std::ios::end);
        remaining_ = static_cast<uint64_t>(in_.tellg());
        in_.seekg(0, std::ios::beg);
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(in_.get());
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(in_.get())) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(in_.get())) << (8 * i);
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    void expect_magic(const char m[4], const std::string& what) {
        need(4);
        char buf[4];
        in_.read(buf, 4);
        if (std::string(buf, 4) != std::string(m, 4))
            throw FormatError(path_ + ": bad magic for " + what);
    }

    std::string str() {
        const uint64_t n = u64();
        need(n);
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        return s;
    }

    template <typename T>
    T scalar() {
        if constexpr (std::is_same_v<T, float>)
            return f32();
        else
            return f64();
    }

    template <typename T>
    Tensor<T> tensor() {
        const uint64_t rank = u64();
        if (rank > 8) throw FormatError(path_ + ": implausible tensor rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& e : shape) e = i64();
        Tensor<T> t(shape);
        check(static_cast<uint64_t>(t.numel()) * sizeof(T));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = scalar<T>();
        return t;
    }

    uint64_t remaining() const { return remaining_; }

    void need(uint64_t bytes) {
        check(bytes);
        remaining_ -= bytes;
    }

    // Validates without consuming; used for whole-payload size checks.
    void check(uint64_t bytes) const {
        if (bytes > remaining_)
            throw FormatError(path_ + ": truncated, expected " + std::to_string(bytes) +
                              " more bytes, got " + std::to_string(remaining_));
    }

    void expect_end() {
        if (remaining_ != 0)
            throw FormatError(path_ + ": " + std::to_string(remaining_) + " trailing bytes");
    }

private:
    std::ifstream in_;
    std::string path_;
    uint64_t remaining_ = 0;
};

template <typename T>
constexpr uint8_t precision_code() {
    return std::is_same_v<T, float> ? 1 : 2;
}

}  // namespace ktan::binio
