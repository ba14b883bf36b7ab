#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tpb {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named component from the run's root
/// seed. Streams with different names (or indices) do not share draws, so
/// adding samples to one component leaves every other stream untouched.
Rng make_stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);

}  // namespace tpb
