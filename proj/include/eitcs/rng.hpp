#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace eitcs {

// Seeded random stream. Uniform and normal variates are derived from raw
// mt19937_64 output here rather than through <random> distributions, whose
// algorithms differ between standard libraries; this keeps datasets
// byte-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi)
    {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Standard normal (Box-Muller, no cached spare).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

// Independent stream seed for item `index` under a master seed (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace eitcs
