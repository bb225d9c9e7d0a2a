#include "somcpc/serialize.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace somcpc {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::byte* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(std::to_integer<unsigned>(p[i])) << (8 * i);
    return v;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
    static const auto table = make_crc_table();
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void BinaryContainer::add_f64(const std::string& name, const double* data, std::size_t count) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["dtype"] = "f64";
    entry["count"] = count;
    entry["offset"] = payload.size();
    header["arrays"].push_back(entry);
    const auto* bytes = reinterpret_cast<const std::byte*>(data);
    payload.insert(payload.end(), bytes, bytes + count * sizeof(double));
}

void BinaryContainer::add_i64(const std::string& name, const std::int64_t* data, std::size_t count) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["dtype"] = "i64";
    entry["count"] = count;
    entry["offset"] = payload.size();
    header["arrays"].push_back(entry);
    const auto* bytes = reinterpret_cast<const std::byte*>(data);
    payload.insert(payload.end(), bytes, bytes + count * sizeof(std::int64_t));
}

namespace {
const nlohmann::ordered_json* find_array(const nlohmann::ordered_json& header,
                                         const std::string& name, const char* dtype,
                                         std::size_t expected_count) {
    if (!header.contains("arrays")) return nullptr;
    for (const auto& e : header.at("arrays")) {
        if (e.at("name") == name) {
            if (e.at("dtype") != dtype)
                throw std::runtime_error("array '" + name + "' has dtype " +
                                         e.at("dtype").get<std::string>() + ", expected " + dtype);
            if (e.at("count").get<std::size_t>() != expected_count)
                throw std::runtime_error("array '" + name + "' has count " +
                                         std::to_string(e.at("count").get<std::size_t>()) +
                                         ", expected " + std::to_string(expected_count));
            return &e;
        }
    }
    return nullptr;
}
}  // namespace

const double* BinaryContainer::get_f64(const std::string& name, std::size_t expected_count) const {
    const auto* e = find_array(header, name, "f64", expected_count);
    if (!e) throw std::runtime_error("missing array '" + name + "'");
    const std::size_t off = e->at("offset").get<std::size_t>();
    if (off + expected_count * sizeof(double) > payload.size())
        throw std::runtime_error("array '" + name + "' extends past payload end");
    return reinterpret_cast<const double*>(payload.data() + off);
}

const std::int64_t* BinaryContainer::get_i64(const std::string& name,
                                             std::size_t expected_count) const {
    const auto* e = find_array(header, name, "i64", expected_count);
    if (!e) throw std::runtime_error("missing array '" + name + "'");
    const std::size_t off = e->at("offset").get<std::size_t>();
    if (off + expected_count * sizeof(std::int64_t) > payload.size())
        throw std::runtime_error("array '" + name + "' extends past payload end");
    return reinterpret_cast<const std::int64_t*>(payload.data() + off);
}

bool BinaryContainer::has_array(const std::string& name) const {
    if (!header.contains("arrays")) return false;
    for (const auto& e : header.at("arrays"))
        if (e.at("name") == name) return true;
    return false;
}

void BinaryContainer::write(const std::string& path) const {
    if (magic.size() != 8) throw std::logic_error("container magic must be 8 bytes");
    std::string out = magic;
    const std::string hdr = header.dump();
    put_u32(out, static_cast<std::uint32_t>(hdr.size()));
    out += hdr;
    out.append(reinterpret_cast<const char*>(payload.data()), payload.size());
    put_u32(out, crc32(payload.data(), payload.size()));
    write_text_file(path, out);
}

BinaryContainer BinaryContainer::read(const std::string& path, const std::string& expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 12) throw std::runtime_error(path + ": truncated file");
    if (raw.compare(0, 8, expected_magic) != 0)
        throw std::runtime_error(path + ": bad magic (expected " + expected_magic + ")");
    const auto* bytes = reinterpret_cast<const std::byte*>(raw.data());
    const std::uint32_t hdr_len = read_u32(bytes + 8);
    if (12ull + hdr_len + 4 > raw.size()) throw std::runtime_error(path + ": truncated header");

    BinaryContainer c;
    c.magic = expected_magic;
    try {
        c.header = nlohmann::ordered_json::parse(raw.substr(12, hdr_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": corrupted header: " + e.what());
    }
    const std::size_t payload_begin = 12 + hdr_len;
    const std::size_t payload_len = raw.size() - payload_begin - 4;
    c.payload.assign(bytes + payload_begin, bytes + payload_begin + payload_len);
    const std::uint32_t stored = read_u32(bytes + payload_begin + payload_len);
    const std::uint32_t computed = crc32(c.payload.data(), c.payload.size());
    if (stored != computed) throw std::runtime_error(path + ": payload checksum mismatch");
    return c;
}

void write_text_file(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace somcpc
