#pragma once

#include <cstdint>
#include <vector>

namespace slukd {

// Seeded deterministic RNG (splitmix64 core, hand-rolled distributions so
// streams do not depend on the standard library implementation).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Independent child stream, e.g. per example: rng.child(example_id).
    Rng child(uint64_t salt) const;

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Integer in [0, n), n >= 1.
    uint64_t uniform_index(uint64_t n);

    double normal(double mean = 0.0, double stddev = 1.0);

    // Gamma(shape alpha, scale 1). alpha == 0 returns exactly 0.
    double gamma(double alpha);

    // Dirichlet sample with concentration vector alpha (entries >= 0).
    std::vector<double> dirichlet(const std::vector<double>& alpha);

    // Index drawn from an (unnormalized) non-negative weight vector.
    size_t categorical(const std::vector<double>& weights);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_index(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable 64-bit mix of two values, used to derive stream seeds.
uint64_t mix64(uint64_t a, uint64_t b);

}  // namespace slukd
