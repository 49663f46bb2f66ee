#pragma once

// Binary tensor container (.vtck) shared by checkpoints, adapters, utterance
// files and generated mels.
//
// Layout:
//   bytes 0..3    magic "VTCK"
//   bytes 4..7    format version, u32 little-endian (currently 1)
//   bytes 8..15   header length in bytes, u64 little-endian
//   16..16+len    UTF-8 JSON header:
//                   {"tensors":[{"name","dtype","shape","offset"},...],
//                    "meta":{"key":"value",...}}
//   padding       zeros up to the next 64-byte boundary
//   payload       raw little-endian f32 data; every tensor offset (relative
//                 to the payload base) is a multiple of 64
//
// Payloads are little-endian regardless of host; the loader byte-swaps on
// big-endian machines. Saving the same container twice produces identical
// bytes, and load(save(x)) is bit-exact.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vtck/tensor.hpp"

namespace vtck {

inline constexpr uint32_t kContainerVersion = 1;

class Container {
public:
    // Tensors are kept sorted by name so that serialization and digests are
    // canonical no matter the insertion order.
    void add(const std::string& name, Tensor<float> t);
    bool has(const std::string& name) const;
    const Tensor<float>& at(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor<float>>>& tensors() const { return tensors_; }

    std::map<std::string, std::string>& meta() { return meta_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }
    std::string meta_or(const std::string& key, const std::string& fallback) const;

private:
    std::vector<std::pair<std::string, Tensor<float>>> tensors_;
    std::map<std::string, std::string> meta_;
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

// 64-bit FNV-1a over (name bytes, little-endian payload bytes) of every
// tensor in canonical order. Guards adapters against the wrong base model.
uint64_t container_digest(const Container& c);
std::string digest_hex(uint64_t digest);

}  // namespace vtck
