#include "vtck/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "vtck/errors.hpp"

namespace vtck {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'V', 'T', 'C', 'K'};
constexpr uint64_t kAlign = 64;

uint64_t align_up(uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

void put_u32_le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64_le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

// f32 values as little-endian bytes, independent of host order.
void floats_to_le(const float* src, int64_t n, std::string& out) {
    for (int64_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &src[i], 4);
        put_u32_le(out, bits);
    }
}

void le_to_floats(const uint8_t* src, int64_t n, float* dst) {
    for (int64_t i = 0; i < n; ++i) {
        const uint32_t bits = get_u32_le(src + 4 * i);
        std::memcpy(&dst[i], &bits, 4);
    }
}

}  // namespace

void Container::add(const std::string& name, Tensor<float> t) {
    if (!t.defined()) throw ContractError("container: undefined tensor '" + name + "'");
    auto it = std::lower_bound(tensors_.begin(), tensors_.end(), name,
                               [](const auto& p, const std::string& k) { return p.first < k; });
    if (it != tensors_.end() && it->first == name) {
        throw ContractError("container: duplicate tensor '" + name + "'");
    }
    tensors_.insert(it, {name, std::move(t)});
}

bool Container::has(const std::string& name) const {
    auto it = std::lower_bound(tensors_.begin(), tensors_.end(), name,
                               [](const auto& p, const std::string& k) { return p.first < k; });
    return it != tensors_.end() && it->first == name;
}

const Tensor<float>& Container::at(const std::string& name) const {
    auto it = std::lower_bound(tensors_.begin(), tensors_.end(), name,
                               [](const auto& p, const std::string& k) { return p.first < k; });
    if (it == tensors_.end() || it->first != name) {
        throw IncompatError("container: missing tensor '" + name + "'");
    }
    return it->second;
}

std::string Container::meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta_.find(key);
    return it == meta_.end() ? fallback : it->second;
}

void save_container(const std::string& path, const Container& c) {
    json header;
    header["tensors"] = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : c.tensors()) {
        json entry;
        entry["name"] = name;
        entry["dtype"] = "f32";
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        header["tensors"].push_back(std::move(entry));
        offset = align_up(offset + static_cast<uint64_t>(t.numel()) * 4);
    }
    header["meta"] = c.meta();
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, 4);
    put_u32_le(out, kContainerVersion);
    put_u64_le(out, header_str.size());
    out += header_str;
    out.resize(align_up(out.size()), '\0');

    const size_t payload_base = out.size();
    for (const auto& [name, t] : c.tensors()) {
        (void)name;
        floats_to_le(t.data(), t.numel(), out);
        out.resize(payload_base + align_up(out.size() - payload_base), '\0');
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("container: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("container: write failed for '" + path + "'");
}

Container load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("container: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const uint8_t*>(bytes.data());

    if (bytes.size() < 16 || std::memcmp(p, kMagic, 4) != 0) {
        throw IntegrityError("container: bad magic in '" + path + "'");
    }
    const uint32_t version = get_u32_le(p + 4);
    if (version != kContainerVersion) {
        throw IntegrityError("container: unsupported version " + std::to_string(version) + " in '" + path + "'");
    }
    const uint64_t header_len = get_u64_le(p + 8);
    if (16 + header_len > bytes.size()) {
        throw IntegrityError("container: header out of bounds in '" + path + "'");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        throw IntegrityError("container: bad header json in '" + path + "': " + e.what());
    }

    const uint64_t payload_base = align_up(16 + header_len);
    const uint64_t payload_size = bytes.size() >= payload_base ? bytes.size() - payload_base : 0;

    Container c;
    if (header.contains("meta")) {
        for (auto& [k, v] : header.at("meta").items()) c.meta()[k] = v.get<std::string>();
    }

    struct Span {
        uint64_t begin, end;
    };
    std::vector<Span> spans;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::string dtype = entry.at("dtype").get<std::string>();
        if (dtype != "f32") throw IntegrityError("container: unsupported dtype '" + dtype + "'");
        Shape shape = entry.at("shape").get<Shape>();
        const uint64_t offset = entry.at("offset").get<uint64_t>();
        const uint64_t nbytes = static_cast<uint64_t>(shape_numel(shape)) * 4;
        if (offset % kAlign != 0 || offset + nbytes > payload_size) {
            throw IntegrityError("container: tensor offset out of bounds for '" + name + "' in '" + path + "'");
        }
        for (const Span& s : spans) {
            if (offset < s.end && s.begin < offset + nbytes) {
                throw IntegrityError("container: overlapping tensors near '" + name + "' in '" + path + "'");
            }
        }
        spans.push_back({offset, offset + nbytes});
        Tensor<float> t = Tensor<float>::zeros(shape);
        le_to_floats(p + payload_base + offset, t.numel(), t.data());
        c.add(name, std::move(t));
    }
    return c;
}

uint64_t container_digest(const Container& c) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const uint8_t* data, size_t n) {
        for (size_t i = 0; i < n; ++i) {
            h ^= data[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : c.tensors()) {
        mix(reinterpret_cast<const uint8_t*>(name.data()), name.size());
        std::string le;
        le.reserve(static_cast<size_t>(t.numel()) * 4);
        for (int64_t i = 0; i < t.numel(); ++i) {
            uint32_t bits;
            float v = t[i];
            std::memcpy(&bits, &v, 4);
            for (int b = 0; b < 4; ++b) le.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
        mix(reinterpret_cast<const uint8_t*>(le.data()), le.size());
    }
    return h;
}

std::string digest_hex(uint64_t digest) {
    static const char* hex = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = hex[digest & 0xf];
        digest >>= 4;
    }
    return s;
}

}  // namespace vtck
