#pragma once

#include <qinco/util/common.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace qinco {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

/// Append-only little-endian byte buffer.
class BinaryWriter {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    void put_array(std::span<const T> values) {
        put<std::uint64_t>(values.size());
        put_raw(values);
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    void put_raw(std::span<const T> values) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
        bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    }

    void put_string(const std::string& s) {
        put<std::uint64_t>(s.size());
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    void put_bytes(std::span<const std::uint8_t> b) {
        bytes_.insert(bytes_.end(), b.begin(), b.end());
    }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader; every overrun throws FormatError with the offset.
class BinaryReader {
public:
    explicit BinaryReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        require(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_array(std::size_t max_count = std::size_t(1) << 40) {
        auto n = get<std::uint64_t>();
        if (n > max_count) {
            throw FormatError("array length " + std::to_string(n) + " too large at offset " +
                              std::to_string(pos_));
        }
        return get_raw<T>(n);
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_raw(std::size_t n) {
        require(n * sizeof(T));
        std::vector<T> out(n);
        std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(T));
        pos_ += n * sizeof(T);
        return out;
    }

    std::string get_string() {
        auto n = get<std::uint64_t>();
        require(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void expect_magic(std::string_view magic) {
        require(magic.size());
        if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
            throw FormatError("bad magic, expected '" + std::string(magic) + "'");
        }
        pos_ += magic.size();
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void require(std::size_t n) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError("unexpected end of data at offset " + std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

} // namespace qinco
