#include "tpb/rng.hpp"

namespace tpb {

namespace {

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        hash ^= ch;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffULL); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name, std::uint64_t index) {
    const std::uint64_t name_hash = fnv1a(name);
    std::seed_seq seq{lo32(root_seed), hi32(root_seed), lo32(name_hash),
                      hi32(name_hash), lo32(index),     hi32(index)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

Rng make_stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index) {
    return Rng(derive_seed(root_seed, name, index));
}

}  // namespace tpb
