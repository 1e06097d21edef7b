#pragma once

// Reverse-time SDE integration: Euler-Maruyama, predictor-corrector, and the
// conditional procedures (replacement inpainting, partial-noise reconstruction).

#include "msgm/numcore.hpp"
#include "msgm/score_model.hpp"
#include "msgm/sde.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace msgm {

struct SampleMeta {
    std::string spec_id;
    std::string checkpoint_id;
    int steps = 0;
    std::uint64_t seed = 0;
};

struct SampleBatch {
    Tensor points;
    SampleMeta meta;
};

struct SamplerOptions {
    /// Multiplies the injected Brownian increment; 0 turns the sampler into
    /// a deterministic Euler scheme (test hook).
    double noise_scale = 1.0;
};

inline std::string sde_id(const SdeSpec& s) {
    if (s.kind == SdeKind::VE) {
        return "VE(sigma_min=" + std::to_string(s.sigma_min) + ",sigma_max=" + std::to_string(s.sigma_max) + ")";
    }
    return "VP(beta_min=" + std::to_string(s.beta_min) + ",beta_max=" + std::to_string(s.beta_max) + ")";
}

namespace sampler_detail {

inline void check_finite(const Tensor& x, int step) {
    if (!all_finite(x)) throw NumericalError("sampler: non-finite state at reverse step " + std::to_string(step));
}

/// x <- x - [f(x,t) - g(t)^2 s(x,t)] dt + g(t) sqrt(dt) z, stepping from t to t - dt.
template <ScoreModel M>
void em_step(const M& model, const SdeSpec& sde, Tensor& x, double t, double dt, RngState& rng,
             const SamplerOptions& opt) {
    const double g = diffusion(sde, t);
    const Tensor s = model.score(x, t);
    x += (-drift_coeff(sde, t) * x + g * g * s) * dt;
    if (opt.noise_scale != 0.0) x += (opt.noise_scale * g * std::sqrt(dt)) * gaussian_sample(rng, x.rows(), x.cols());
}

/// Langevin correction at fixed t with the step size set by a target
/// signal-to-noise ratio: eps = 2 a (snr ||z|| / ||s||)^2, a = 1 for VE and
/// the one-step signal retention for VP.
template <ScoreModel M>
void langevin_step(const M& model, const SdeSpec& sde, Tensor& x, double t, double dt, double snr,
                   RngState& rng) {
    const Tensor s = model.score(x, t);
    const Tensor z = gaussian_sample(rng, x.rows(), x.cols());
    const double grad_norm = s.rowwise().norm().mean();
    const double noise_norm = z.rowwise().norm().mean();
    const double a = sde.kind == SdeKind::VE ? 1.0 : 1.0 - beta(sde, t) * dt;
    const double ratio = grad_norm > 0.0 ? snr * noise_norm / grad_norm : 0.0;
    const double eps = 2.0 * a * ratio * ratio;
    x += eps * s + std::sqrt(2.0 * eps) * z;
}

} // namespace sampler_detail

/// Euler-Maruyama reverse integration from `t_start` down to t_eps on a
/// uniform grid of n_steps, starting from `x`. Returns the state at t_eps.
template <ScoreModel M>
Tensor reverse_integrate(const M& model, const SdeSpec& sde, Tensor x, double t_start, int n_steps, RngState& rng,
                         const SamplerOptions& opt = {}, int corrector_steps = 0, double snr = 0.0) {
    require(n_steps >= 1, "sampler: n_steps must be positive");
    const double dt = (t_start - sde.t_eps) / n_steps;
    for (int i = 0; i < n_steps; ++i) {
        const double t = t_start - i * dt;
        sampler_detail::em_step(model, sde, x, t, dt, rng, opt);
        sampler_detail::check_finite(x, i);
        if (corrector_steps > 0 && snr > 0.0) {
            const double t_next = t - dt;
            for (int c = 0; c < corrector_steps; ++c) {
                sampler_detail::langevin_step(model, sde, x, t_next, dt, snr, rng);
            }
            sampler_detail::check_finite(x, i);
        }
    }
    return x;
}

template <ScoreModel M>
SampleBatch reverse_sde_sample(const M& model, const SdeSpec& sde, Eigen::Index n, int n_steps, RngState& rng,
                               const SamplerOptions& opt = {}) {
    require(n_steps >= 10, "reverse_sde_sample: n_steps must be >= 10");
    require(n > 0, "reverse_sde_sample: n must be positive");
    const std::uint64_t seed = rng.seed();
    Tensor x = prior_sample(sde, rng, n, model.dim());
    return {reverse_integrate(model, sde, std::move(x), sde.T, n_steps, rng, opt), {sde_id(sde), "", n_steps, seed}};
}

/// Predictor-corrector sampler. With corrector_steps == 0 or snr == 0 it
/// consumes randomness exactly like reverse_sde_sample and matches it bitwise.
template <ScoreModel M>
SampleBatch pc_sample(const M& model, const SdeSpec& sde, Eigen::Index n, int n_steps, double snr,
                      int corrector_steps, RngState& rng, const SamplerOptions& opt = {}) {
    require(corrector_steps >= 0, "pc_sample: corrector_steps must be >= 0");
    require(snr >= 0.0, "pc_sample: snr must be >= 0");
    require(n_steps >= 10, "pc_sample: n_steps must be >= 10");
    const std::uint64_t seed = rng.seed();
    Tensor x = prior_sample(sde, rng, n, model.dim());
    return {reverse_integrate(model, sde, std::move(x), sde.T, n_steps, rng, opt, corrector_steps, snr),
            {sde_id(sde), "", n_steps, seed}};
}

/// Replacement-method conditional sampling. `mask[i]` true marks coordinate i
/// as observed; those coordinates are overwritten at every step by the
/// observation diffused to the current time, and set exactly at the end.
template <ScoreModel M>
SampleBatch inpaint(const M& model, const SdeSpec& sde, const Eigen::RowVectorXd& observed,
                    const std::vector<bool>& mask, Eigen::Index n, int n_steps, RngState& rng) {
    const Eigen::Index d = model.dim();
    require(observed.size() == d && static_cast<Eigen::Index>(mask.size()) == d,
            "inpaint: observed/mask length must equal the data dimension");
    const auto n_obs = std::count(mask.begin(), mask.end(), true);
    require(n_obs >= 1 && n_obs < d, "inpaint: mask needs at least one observed and one free coordinate");
    require(n_steps >= 10, "inpaint: n_steps must be >= 10");
    const std::uint64_t seed = rng.seed();

    auto replace = [&](Tensor& x, double t) {
        const KernelMoments m = kernel_moments(sde, t);
        for (Eigen::Index i = 0; i < d; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, i) = m.mean_scale * observed[i] + m.std * rng.normal();
        }
    };

    Tensor x = prior_sample(sde, rng, n, d);
    replace(x, sde.T);
    const double dt = (sde.T - sde.t_eps) / n_steps;
    for (int s = 0; s < n_steps; ++s) {
        const double t = sde.T - s * dt;
        sampler_detail::em_step(model, sde, x, t, dt, rng, {});
        sampler_detail::check_finite(x, s);
        if (s + 1 < n_steps) replace(x, t - dt);
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        if (mask[static_cast<std::size_t>(i)]) x.col(i).setConstant(observed[i]);
    }
    return {std::move(x), {sde_id(sde), "", n_steps, seed}};
}

/// Diffuse x to t_star with the perturbation kernel, then run the reverse SDE
/// back to t_eps.
template <ScoreModel M>
Tensor reconstruct(const M& model, const SdeSpec& sde, const Tensor& x, double t_star, RngState& rng,
                   int n_steps = 100) {
    require(t_star >= sde.t_eps && t_star <= sde.T, "reconstruct: t_star must lie in [t_eps, T]");
    const KernelMoments m = kernel_moments(sde, t_star);
    Tensor xt = m.mean_scale * x + m.std * gaussian_sample(rng, x.rows(), x.cols());
    if (t_star == sde.t_eps) return xt;
    return reverse_integrate(model, sde, std::move(xt), t_star, n_steps, rng);
}

} // namespace msgm
