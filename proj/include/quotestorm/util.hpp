#ifndef QUOTESTORM_UTIL_HPP
#define QUOTESTORM_UTIL_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

namespace quotestorm {

// Shortest round-trip decimal form.
std::string format_double(double value);
// Fixed number of decimals, for human-facing tables.
std::string format_fixed(double value, int decimals);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string_view trim(std::string_view text);

// Deterministic 64-bit mixing for per-instance seeds (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(std::string_view text);

using Rng = std::mt19937_64;

// Uniform draw in [0, 1) and [0, n) that do not depend on the standard
// library's distribution implementations, so seeded streams are portable.
double uniform01(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);
double normal01(Rng& rng);

}  // namespace quotestorm

#endif  // QUOTESTORM_UTIL_HPP
