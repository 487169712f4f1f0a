#pragma once

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <type_traits>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

struct FormatError : std::runtime_error {
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset(offset)
    {}
    std::size_t offset;
};

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
public:
    template <class T>
    void put(T v)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        bytes_.insert(bytes_.end(), b, b + sizeof(T));
    }
    void put_bytes(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
    std::vector<char>& bytes() { return bytes_; }

private:
    std::vector<char> bytes_;
};

/// Reads little-endian (or big-endian) scalars; truncation raises FormatError
/// carrying the offset of the failed read.
class ByteReader {
public:
    explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

    template <class T>
    T get(std::endian order = std::endian::little)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        require(sizeof(T), "truncated input");
        unsigned char b[sizeof(T)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(T));
        if (order != std::endian::native) std::reverse(b, b + sizeof(T));
        T v;
        std::memcpy(&v, b, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string(std::size_t n)
    {
        require(n, "truncated input");
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void require(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) throw FormatError(what, pos_);
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<char>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace flsim
