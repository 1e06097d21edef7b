#pragma once

// Anything that maps (batch x, time t) to a batch of score vectors can drive
// the sampler and the likelihood integrator: trained networks and the
// analytic oracles used by the tests alike.

#include "msgm/numcore.hpp"

#include <cmath>
#include <concepts>

namespace msgm {

template <class M>
concept ScoreModel = requires(const M& m, const Tensor& x, double t) {
    { m.score(x, t) } -> std::convertible_to<Tensor>;
    { m.dim() } -> std::convertible_to<Eigen::Index>;
};

enum class DivergenceMode { Exact, Hutchinson };

struct DivergenceEstimate {
    double value = 0.0;
    double std_error = 0.0; ///< zero in exact mode
};

/// Probe step for central differences at x.
inline double divergence_step(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    return 1e-4 * (1.0 + x.cwiseAbs().maxCoeff());
}

/// Exact trace of the input Jacobian by 2d central-difference probes, for
/// every row of x at once.
template <ScoreModel M>
Vector divergence_exact(const M& model, const Tensor& x, double t, double step_scale = 1.0) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Tensor probes(2 * d * n, d);
    Vector h(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        h[r] = step_scale * divergence_step(x.row(r));
        for (Eigen::Index i = 0; i < d; ++i) {
            const Eigen::Index base = (r * d + i) * 2;
            probes.row(base) = x.row(r);
            probes.row(base + 1) = x.row(r);
            probes(base, i) += h[r];
            probes(base + 1, i) -= h[r];
        }
    }
    const Tensor s = model.score(probes, t);
    Vector div = Vector::Zero(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index i = 0; i < d; ++i) {
            const Eigen::Index base = (r * d + i) * 2;
            div[r] += (s(base, i) - s(base + 1, i)) / (2.0 * h[r]);
        }
    }
    return div;
}

/// Hutchinson trace estimate v^T J v averaged over k Rademacher probes, with
/// the directional derivative taken by central differences. Single point.
template <ScoreModel M>
DivergenceEstimate divergence_hutchinson(const M& model, const Eigen::RowVectorXd& x, double t, int k,
                                         RngState& rng) {
    require(k >= 2, "divergence_hutchinson: need at least two probes");
    const Eigen::Index d = x.size();
    const double h = divergence_step(x);
    Tensor dirs(k, d);
    for (Eigen::Index i = 0; i < dirs.size(); ++i) dirs.data()[i] = rng.rademacher();
    Tensor probes(2 * k, d);
    for (int j = 0; j < k; ++j) {
        probes.row(2 * j) = x + h * dirs.row(j);
        probes.row(2 * j + 1) = x - h * dirs.row(j);
    }
    const Tensor s = model.score(probes, t);
    Vector est(k);
    for (int j = 0; j < k; ++j) {
        est[j] = dirs.row(j).dot(s.row(2 * j) - s.row(2 * j + 1)) / (2.0 * h);
    }
    const double mean = est.mean();
    const double var = (est.array() - mean).square().sum() / (k - 1);
    return {mean, std::sqrt(var / k)};
}

/// s(x) = A x + b, independent of t. Divergence is trace(A).
struct LinearScore {
    Eigen::MatrixXd A;
    Eigen::RowVectorXd b;

    explicit LinearScore(Eigen::MatrixXd a) : A(std::move(a)), b(Eigen::RowVectorXd::Zero(A.rows())) {}
    LinearScore(Eigen::MatrixXd a, Eigen::RowVectorXd offset) : A(std::move(a)), b(std::move(offset)) {}

    Eigen::Index dim() const { return A.rows(); }
    Tensor score(const Tensor& x, double) const {
        Tensor out = x * A.transpose();
        out.rowwise() += b;
        return out;
    }
};

} // namespace msgm
