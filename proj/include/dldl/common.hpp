#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dldl {

// Error categories map to CLI exit codes: config 1, data 2, numeric 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : DataError {
    using DataError::DataError;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream derivation: hash the base seed with a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return splitmix64(splitmix64(base) ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
}

// mt19937_64 with hand-rolled value conversions. The engine sequence is fixed
// by the standard; the std distributions are not, so we avoid them.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0,1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n)
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
        std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = eng_();
        while (v >= bound) v = eng_();
        return static_cast<std::size_t>(v % n);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller, one draw per call.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    Rng fork(std::uint64_t tag) { return Rng(derive_seed(eng_(), tag)); }

private:
    std::mt19937_64 eng_;
};

}  // namespace dldl
