// Deterministic PRNG with named sub-streams. All randomness in the project
// flows from one configured seed through these streams; std:: distributions
// are avoided because their output is not pinned by the standard.
#pragma once

#include <cstdint>
#include <string_view>

namespace eia {

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(const void* data, std::size_t len);

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // [0, 1), 53-bit mantissa
    double next_double();
    // uniform integer in [0, n), n > 0
    std::uint64_t below(std::uint64_t n);
    // uniform integer in [lo, hi] inclusive
    int range_int(int lo, int hi);
    double uniform(double lo, double hi);

    // Independent stream derived from this stream's seed and a name.
    // Consuming one stream never perturbs another.
    Rng substream(std::string_view name) const;
    Rng substream(std::uint64_t salt) const;

private:
    std::uint64_t s_[4];
    std::uint64_t seed_;
};

} // namespace eia
