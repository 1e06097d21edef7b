#pragma once

// Exact log-likelihood through the probability-flow ODE
//   dx/dt = f(x,t) - 1/2 g(t)^2 s(x,t)
// integrated from t_eps to T together with the divergence of its right-hand
// side (instantaneous change of variables):
//   log p(x) = log p_T(x(T)) + int div(f - 1/2 g^2 s) dt.

#include "msgm/numcore.hpp"
#include "msgm/score_model.hpp"
#include "msgm/sde.hpp"

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace msgm {

struct IntegratorSettings {
    double rtol = 1e-5;
    double atol = 1e-5;
    DivergenceMode divergence = DivergenceMode::Exact;
    int hutchinson_probes = 16;
    std::uint64_t seed = 0; ///< Hutchinson probe stream
    long max_steps = 100000;
    unsigned threads = 0;   ///< 0: hardware concurrency
};

struct PointNll {
    double nll = 0.0;
    long steps = 0;
    long rhs_evals = 0;
};

struct NllResult {
    std::vector<double> nll;
    double mean = 0.0;
    double std_error = 0.0;
    long total_steps = 0;
    DivergenceMode divergence = DivergenceMode::Exact;
};

inline NllResult summarize(std::vector<double> values, long steps, DivergenceMode mode) {
    NllResult r;
    r.nll = std::move(values);
    r.total_steps = steps;
    r.divergence = mode;
    const double n = static_cast<double>(r.nll.size());
    for (double v : r.nll) r.mean += v;
    r.mean /= n;
    double ss = 0.0;
    for (double v : r.nll) ss += (v - r.mean) * (v - r.mean);
    r.std_error = r.nll.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
    return r;
}

/// NLL in nats of a single point. Throws NumericalError on integrator failure.
template <ScoreModel M>
PointNll nll_point(const M& model, const SdeSpec& sde, const Eigen::RowVectorXd& x, const IntegratorSettings& integ,
                   std::size_t point_index = 0) {
    namespace ode = boost::numeric::odeint;
    using State = std::vector<double>;
    require(x.allFinite(), "nll_point: non-finite input");
    const Eigen::Index d = x.size();
    require(d == model.dim(), "nll_point: dimension mismatch");

    RngState rng = RngState(integ.seed).split(point_index);
    long evals = 0;
    auto rhs = [&](const State& st, State& dst, double t) {
        ++evals;
        const double g2 = std::pow(diffusion(sde, t), 2);
        const double fc = drift_coeff(sde, t);
        Tensor pt(1, d);
        for (Eigen::Index i = 0; i < d; ++i) pt(0, i) = st[static_cast<std::size_t>(i)];
        double div_s = 0.0;
        Tensor s;
        if (integ.divergence == DivergenceMode::Exact) {
            s = model.score(pt, t);
            div_s = divergence_exact(model, pt, t)[0];
        } else {
            s = model.score(pt, t);
            div_s = divergence_hutchinson(model, pt.row(0), t, integ.hutchinson_probes, rng).value;
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            dst[static_cast<std::size_t>(i)] = fc * pt(0, i) - 0.5 * g2 * s(0, i);
        }
        dst[static_cast<std::size_t>(d)] = fc * static_cast<double>(d) - 0.5 * g2 * div_s;
    };

    State st(static_cast<std::size_t>(d) + 1, 0.0);
    for (Eigen::Index i = 0; i < d; ++i) st[static_cast<std::size_t>(i)] = x[i];
    long steps = 0;
    try {
        auto stepper = ode::make_controlled(integ.atol, integ.rtol, ode::runge_kutta_dopri5<State>());
        steps = static_cast<long>(ode::integrate_adaptive(stepper, rhs, st, sde.t_eps, sde.T, 1e-3 * (sde.T - sde.t_eps),
                                                          [&](const State&, double) {
                                                              if (evals > integ.max_steps * 7) {
                                                                  throw NumericalError("step budget exhausted");
                                                              }
                                                          }));
    } catch (const std::exception& e) {
        throw NumericalError("nll_point: integrator failed at point " + std::to_string(point_index) + ": " + e.what());
    }
    Tensor xt(1, d);
    for (Eigen::Index i = 0; i < d; ++i) xt(0, i) = st[static_cast<std::size_t>(i)];
    const double logp = prior_logpdf(sde, xt)[0] + st[static_cast<std::size_t>(d)];
    if (!std::isfinite(logp)) throw NumericalError("nll_point: non-finite result at point " + std::to_string(point_index));
    return {-logp, steps, evals};
}

/// NLL of every row of `points`, fanned out over threads. Each point's result
/// depends only on its own index, so the output does not depend on the
/// thread count.
template <ScoreModel M>
NllResult nll_batch(const M& model, const SdeSpec& sde, const Tensor& points, const IntegratorSettings& integ) {
    require(points.rows() > 0, "nll_batch: no points");
    const std::size_t n = static_cast<std::size_t>(points.rows());
    std::vector<double> out(n, 0.0);
    std::vector<long> steps(n, 0);
    unsigned workers = integ.threads ? integ.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](unsigned w) {
        try {
            for (std::size_t i = w; i < n; i += workers) {
                const PointNll p = nll_point(model, sde, points.row(static_cast<Eigen::Index>(i)), integ, i);
                out[i] = p.nll;
                steps[i] = p.steps;
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    long total = 0;
    for (long s : steps) total += s;
    return summarize(std::move(out), total, integ.divergence);
}

struct NllReport {
    NllResult retain; ///< D_g
    NllResult forget; ///< D_f
};

/// Mean NLL on held-out D_g and D_f samples.
template <ScoreModel M>
NllReport nll_report(const M& model, const SdeSpec& sde, const Tensor& test_retain, const Tensor& test_forget,
                     const IntegratorSettings& integ) {
    require(test_retain.rows() > 0 && test_forget.rows() > 0, "nll_report: both splits must be non-empty");
    return {nll_batch(model, sde, test_retain, integ), nll_batch(model, sde, test_forget, integ)};
}

} // namespace msgm
