#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/prompt.hpp"
#include "mvpt/state.hpp"
#include "mvpt/swin_config.hpp"

// Layout, all integers little-endian:
//   "MVPT" | u32 version | u64 count
//   count x { u32 name_len | name | u8 dtype | u32 rank | rank x u64 extent }
//   payloads in manifest order | u32 CRC32 of the payload bytes
// Freeze-mask entries are rank-0 bool tensors named "mask.<tensor>", 1 = learnable.

namespace mvpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, boolean = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : d == DType::f64 ? 8 : 1; }

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

inline void put_u(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class F>
void put_float(std::string& out, F v) {
    using U = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
    U bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u(out, bits, sizeof bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n, LoadError::Kind kind = LoadError::Kind::truncated) const {
        if (pos + n > buf.size())
            throw LoadError(kind, path + ": file ends at byte " + std::to_string(buf.size()) + ", needed " +
                                      std::to_string(pos + n));
    }
    std::uint64_t u(int bytes, LoadError::Kind kind = LoadError::Kind::truncated) {
        need(static_cast<std::size_t>(bytes), kind);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += static_cast<std::size_t>(bytes);
        return v;
    }
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

}  // namespace detail

/// Serialized bytes of a state (and optional freeze mask).
template <class T>
std::string encode_checkpoint(const ModelState<T>& state, const FreezeMask* mask = nullptr) {
    std::string head = "MVPT";
    detail::put_u(head, kCheckpointVersion, 4);
    const std::size_t count = state.size() + (mask ? mask->size() : 0);
    detail::put_u(head, count, 8);
    auto entry = [&](const std::string& name, DType dt, const Shape& shape) {
        detail::put_u(head, name.size(), 4);
        head += name;
        head.push_back(static_cast<char>(dt));
        detail::put_u(head, shape.size(), 4);
        for (auto e : shape) detail::put_u(head, e, 8);
    };
    std::string payload;
    for (const auto& [name, t] : state) {
        if (starts_with(name, "mask.")) throw ContractError("tensor name '" + name + "' collides with the mask prefix");
        entry(name, dtype_of<T>(), t.shape());
        for (auto v : t.data()) detail::put_float(payload, v);
    }
    if (mask)
        for (const auto& [name, learnable] : *mask) {
            entry("mask." + name, DType::boolean, Shape{});
            payload.push_back(learnable ? 1 : 0);
        }
    std::string out = head + payload;
    detail::put_u(out, detail::crc32_of(payload.data(), payload.size()), 4);
    return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& state, const FreezeMask* mask = nullptr) {
    const auto bytes = encode_checkpoint(state, mask);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint " + path.string());
}

template <class T>
struct Checkpoint {
    ModelState<T> state;
    FreezeMask mask;  // empty when none was stored
};

/// Parses checkpoint bytes; payloads of either float width are converted to T.
template <class T>
Checkpoint<T> decode_checkpoint(const std::string& buf, const std::string& path = "<memory>") {
    using K = LoadError::Kind;
    detail::Reader rd{buf, 0, path};
    if (buf.size() < 4 || buf.compare(0, 4, "MVPT") != 0) throw LoadError(K::header, path + ": bad magic");
    rd.pos = 4;
    const auto version = rd.u(4, K::header);
    if (version != kCheckpointVersion)
        throw LoadError(K::header, path + ": unsupported format version " + std::to_string(version));
    const auto count = rd.u(8, K::header);
    if (count > buf.size()) throw LoadError(K::header, path + ": implausible tensor count " + std::to_string(count));
    struct Entry {
        std::string name;
        DType dt;
        Shape shape;
    };
    std::vector<Entry> entries;
    std::size_t payload_bytes = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        const auto len = rd.u(4, K::header);
        rd.need(len, K::header);
        e.name = buf.substr(rd.pos, len);
        rd.pos += len;
        const auto dt = rd.u(1, K::header);
        if (dt > 2) throw LoadError(K::header, path + ": unknown dtype code " + std::to_string(dt) + " for '" + e.name + "'");
        e.dt = static_cast<DType>(dt);
        const auto rank = rd.u(4, K::header);
        if (rank > 8) throw LoadError(K::header, path + ": rank " + std::to_string(rank) + " for '" + e.name + "'");
        for (std::uint64_t r = 0; r < rank; ++r) {
            const auto ext = rd.u(8, K::header);
            if (ext == 0 || ext > buf.size()) throw LoadError(K::header, path + ": bad extent for '" + e.name + "'");
            e.shape.push_back(static_cast<std::size_t>(ext));
        }
        payload_bytes += numel_of(e.shape) * dtype_size(e.dt);
        entries.push_back(std::move(e));
    }
    const std::size_t payload_start = rd.pos;
    rd.need(payload_bytes + 4);
    if (rd.pos + payload_bytes + 4 != buf.size())
        throw LoadError(K::header, path + ": " + std::to_string(buf.size() - rd.pos - payload_bytes - 4) +
                                       " trailing bytes after the checksum");
    const auto stored = static_cast<std::uint32_t>(
        detail::Reader{buf, payload_start + payload_bytes, path}.u(4));
    if (stored != detail::crc32_of(buf.data() + payload_start, payload_bytes))
        throw LoadError(K::checksum, path + ": payload checksum mismatch");

    Checkpoint<T> ck;
    for (const auto& e : entries) {
        const std::size_t n = numel_of(e.shape);
        if (e.dt == DType::boolean) {
            if (!starts_with(e.name, "mask.") || n != 1)
                throw LoadError(K::header, path + ": unexpected bool tensor '" + e.name + "'");
            ck.mask[e.name.substr(5)] = buf[rd.pos] != 0;
            rd.pos += 1;
            continue;
        }
        std::vector<T> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (e.dt == DType::f32) {
                const auto bits = static_cast<std::uint32_t>(rd.u(4));
                float f;
                std::memcpy(&f, &bits, 4);
                v[i] = static_cast<T>(f);
            } else {
                const auto bits = rd.u(8);
                double d;
                std::memcpy(&d, &bits, 8);
                v[i] = static_cast<T>(d);
            }
        }
        ck.state.set(e.name, Tensor<T>(e.shape, std::move(v)));
    }
    for (const auto& [name, _] : ck.mask)
        if (!ck.state.contains(name)) throw LoadError(K::header, path + ": mask entry for missing tensor '" + name + "'");
    return ck;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError(LoadError::Kind::io, "cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(read_file_bytes(path), path.string());
}

/// Loads and checks every backbone tensor against `cfg`.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const BackboneConfig& cfg) {
    auto ck = load_checkpoint<T>(path);
    for (const auto& [name, shape] : backbone_parameter_shapes(cfg)) {
        if (!ck.state.contains(name))
            throw LoadError(LoadError::Kind::mismatch, path.string() + ": missing tensor '" + name + "' expected " +
                                                           shape_str(shape));
        const auto& got = ck.state.at(name).shape();
        if (got != shape)
            throw LoadError(LoadError::Kind::mismatch, path.string() + ": tensor '" + name + "' has shape " +
                                                           shape_str(got) + ", config expects " + shape_str(shape));
    }
    return ck;
}

/// CRC32 over names and payloads of the tensors whose names start with `prefix`.
template <class T>
std::string state_hash(const ModelState<T>& state, const std::string& prefix = "backbone.") {
    std::string bytes;
    for (const auto& [name, t] : state) {
        if (!starts_with(name, prefix)) continue;
        bytes += name;
        bytes.push_back('\0');
        for (auto v : t.data()) detail::put_float(bytes, v);
    }
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << detail::crc32_of(bytes.data(), bytes.size());
    return os.str();
}

}  // namespace mvpt
