#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace qfs {

// SHA-256 digest as lowercase hex. Used to key mock fixtures and request
// caches; stable across platforms and runs.
std::string sha256_hex(std::string_view data);

// splitmix64: tiny deterministic PRNG used for seeded sampling and the
// synthetic mock. Chosen over std::mt19937 + distributions because its
// output is fully specified, so artifacts are byte-identical everywhere.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound); bound must be nonzero. Modulo bias is irrelevant
    // for the fixture/test sizes involved.
    std::uint64_t below(std::uint64_t bound) { return next() % bound; }

    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

// FNV-1a 64-bit, handy for deriving sub-seeds from strings.
std::uint64_t fnv1a64(std::string_view data);

} // namespace qfs
