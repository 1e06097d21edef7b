#pragma once

// Dense arithmetic and seeded randomness shared by every other header.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msgm {

/// Row-major batch matrix: one point per row.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Rejected input: bad arguments, malformed files, inconsistent configs.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite or runaway value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

namespace detail {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Counter-based generator: output n is a pure function of (seed, n), so a
/// stream is fully described by its seed and how many words were drawn.
/// Satisfies UniformRandomBitGenerator for use with <random> distributions.
class CounterEngine {
public:
    using result_type = std::uint64_t;

    explicit CounterEngine(std::uint64_t seed = 0) : key_(detail::mix64(seed + detail::kGolden)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Seeded RNG state. Streams derived with split() are independent of the
/// parent's draw position, which keeps consumers from perturbing each other.
class RngState {
public:
    explicit RngState(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    RngState split(std::uint64_t stream) const {
        return RngState(detail::mix64(seed_ ^ detail::mix64(stream * 0xd1b54a32d192ed03ULL + 1)));
    }

    double normal() { return normal_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

    CounterEngine& engine() { return engine_; }

private:
    std::uint64_t seed_;
    CounterEngine engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

/// I.i.d. standard-normal rows x cols tensor.
inline Tensor gaussian_sample(RngState& rng, Eigen::Index rows, Eigen::Index cols) {
    require(rows > 0 && cols > 0, "gaussian_sample: shape must be non-empty");
    Tensor out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = rng.normal();
    return out;
}

inline Vector uniform_sample(RngState& rng, Eigen::Index n, double lo, double hi) {
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = rng.uniform(lo, hi);
    return out;
}

/// x * sigmoid(x), elementwise.
inline Tensor silu(const Tensor& x) {
    return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

inline Tensor silu_grad(const Tensor& x) {
    const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> s = 1.0 / (1.0 + (-x.array()).exp());
    return (s * (1.0 + x.array() * (1.0 - s))).matrix();
}

} // namespace msgm
