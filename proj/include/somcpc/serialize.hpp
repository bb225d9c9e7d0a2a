#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace somcpc {

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

/// Little-endian binary container: 8-byte magic, u32 header length, JSON
/// header, raw payload, u32 CRC of the payload. All multi-byte fields are
/// little-endian; float64 arrays are written verbatim, so round trips are
/// bit-exact.
struct BinaryContainer {
    std::string magic;  // exactly 8 bytes
    nlohmann::ordered_json header;
    std::vector<std::byte> payload;

    /// Appends an array to the payload and records {name, dtype, count,
    /// offset} under header["arrays"].
    void add_f64(const std::string& name, const double* data, std::size_t count);
    void add_i64(const std::string& name, const std::int64_t* data, std::size_t count);

    const double* get_f64(const std::string& name, std::size_t expected_count) const;
    const std::int64_t* get_i64(const std::string& name, std::size_t expected_count) const;
    bool has_array(const std::string& name) const;

    void write(const std::string& path) const;
    /// Throws std::runtime_error on bad magic, truncation or CRC mismatch.
    static BinaryContainer read(const std::string& path, const std::string& expected_magic);
};

/// Writes text atomically-ish (temp file + rename) so failed runs do not
/// leave partial artifacts behind.
void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace somcpc
