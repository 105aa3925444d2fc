#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "common.hpp"

namespace mbsma {

// Deterministic RNG. Distributions are implemented explicitly (not via
// std::*_distribution, whose output is implementation-defined) so that a
// given seed produces the same stream everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform on (0,1); never returns 0 or 1
    double uniform() {
        const double u = (next_u64() >> 11) * 0x1.0p-53;
        return u == 0.0 ? 0x1.0p-53 : u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no cached spare (call-order independence)
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double exponential() { return -std::log(uniform()); }

    // chi-square with even df, as a sum of exponentials
    double chisq_even(int df) {
        double acc = 0.0;
        for (int i = 0; i < df / 2; ++i) acc += exponential();
        return 2.0 * acc;
    }

    double weibull(double shape, double rate) {
        // hazard h(t) = rate * shape * (rate t)^(shape-1); S(t) = exp(-(rate t)^shape)
        return std::pow(exponential(), 1.0 / shape) / rate;
    }

    int bernoulli(double p) { return uniform() < p ? 1 : 0; }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    Eigen::VectorXd normal_vector(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

private:
    std::mt19937_64 gen_;
};

// Fisher-Yates with our own index draws (std::shuffle is implementation-defined)
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace mbsma
