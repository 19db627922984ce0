#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "d3sr/tensor.hpp"

namespace d3sr {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream/seed derivation used everywhere randomness is consumed: a root seed
// plus (stream id, index) always map to the same child seed, so results do not
// depend on worker count or call interleaving.
inline uint64_t derive_seed(uint64_t root, uint64_t stream, uint64_t index = 0) {
    return splitmix64(splitmix64(root ^ splitmix64(stream)) ^ splitmix64(index));
}

// Named stream ids (documented derivation; see derive_seed).
namespace streams {
constexpr uint64_t kData = 1;
constexpr uint64_t kGeneratorStep = 2;
constexpr uint64_t kDiscriminatorStep = 3;
constexpr uint64_t kInitGenerator = 4;
constexpr uint64_t kInitDiscriminator = 5;
constexpr uint64_t kEval = 6;
constexpr uint64_t kRecipe = 7;
constexpr uint64_t kCrop = 8;
}  // namespace streams

// Deterministic RNG with serializable state. Distributions are implemented
// here (not via <random> distribution objects) so draw sequences are stable
// across standard libraries and state round-trips exactly.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Uniform over {0,...,n-1}, rejection sampling (no modulo bias).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return static_cast<int>(v % un);
    }

    // Standard normal via Box-Muller (cos branch). Consumes two draws per
    // sample and carries no hidden state.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
        for (auto& v : t.data) v = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    Tensor<T> normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0) {
        Tensor<T> t(std::move(shape));
        fill_normal(t, mean, stddev);
        return t;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw io_error("Rng::load_state: malformed state string");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace d3sr
