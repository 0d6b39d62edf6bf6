#pragma once
// Deterministic RNG streams. Each sampled column owns a private stream keyed by
// (run seed, column position), so draws never depend on worker scheduling or on
// how columns are partitioned across threads.

#include <cmath>
#include <cstdint>
#include <random>

namespace isofmm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Self-contained uniform/normal generation on top of mt19937_64; avoids the
// implementation-defined state of std::*_distribution so a draw sequence is a
// pure function of the stream seed.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    // uniform on [0,1) with 53-bit resolution
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    // standard normal, Marsaglia polar method with one cached spare
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    std::uint64_t raw() { return eng_(); }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stream for one model column. column_pos is the column's flat position in the
// transformed domain (stable across compression levels, so the same coefficient
// sees the same stream no matter which retained set it belongs to).
inline RngStream column_stream(std::uint64_t run_seed, std::uint64_t column_pos) {
    return RngStream(splitmix64(run_seed ^ splitmix64(column_pos + 0x51ED270B9ull)));
}

// Independent named substream for auxiliary draws (phantom simulation, virtual
// gels) so they cannot collide with column streams.
inline RngStream named_stream(std::uint64_t run_seed, std::uint64_t tag) {
    return RngStream(splitmix64(splitmix64(run_seed + 0xABCD1234ull) ^ tag));
}

}  // namespace isofmm
