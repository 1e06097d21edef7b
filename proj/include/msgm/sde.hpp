#pragma once

// Forward diffusions dx = f(x,t) dt + g(t) dw with closed-form Gaussian
// perturbation kernels. VE: zero drift, geometric noise scale. VP: linear
// beta schedule with mean shrinkage.

#include "msgm/numcore.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace msgm {

enum class SdeKind { VE, VP };

inline std::string_view to_string(SdeKind k) { return k == SdeKind::VE ? "VE" : "VP"; }

inline SdeKind parse_sde_kind(std::string_view s) {
    if (s == "VE" || s == "ve") return SdeKind::VE;
    if (s == "VP" || s == "vp") return SdeKind::VP;
    throw ValidationError("unknown SDE kind '" + std::string(s) + "' (expected VE or VP)");
}

struct SdeSpec {
    SdeKind kind = SdeKind::VE;
    double T = 1.0;
    double sigma_min = 0.01;
    double sigma_max = 50.0;
    double beta_min = 0.1;
    double beta_max = 20.0;
    double t_eps = 1e-3;

    static SdeSpec ve(double sigma_min = 0.01, double sigma_max = 50.0) {
        SdeSpec s;
        s.kind = SdeKind::VE;
        s.sigma_min = sigma_min;
        s.sigma_max = sigma_max;
        return s;
    }

    static SdeSpec vp(double beta_min = 0.1, double beta_max = 20.0) {
        SdeSpec s;
        s.kind = SdeKind::VP;
        s.beta_min = beta_min;
        s.beta_max = beta_max;
        return s;
    }

    void validate() const {
        require(t_eps > 0.0 && t_eps < T, "sde: require 0 < t_eps < T");
        if (kind == SdeKind::VE) {
            require(sigma_min > 0.0 && sigma_min < sigma_max, "sde: require 0 < sigma_min < sigma_max");
        } else {
            require(beta_min >= 0.0 && beta_min < beta_max, "sde: require 0 <= beta_min < beta_max");
        }
    }

    bool operator==(const SdeSpec&) const = default;
};

struct KernelMoments {
    double mean_scale; ///< mean = mean_scale * x0
    double std;
};

namespace sde_detail {

inline void check_range(const SdeSpec& s, double t, double lo, const char* op) {
    if (!(t >= lo && t <= s.T)) {
        throw ValidationError(std::string(op) + ": t=" + std::to_string(t) + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(s.T) + "]");
    }
}

} // namespace sde_detail

inline double beta(const SdeSpec& s, double t) {
    return s.beta_min + t * (s.beta_max - s.beta_min) / s.T;
}

/// Coefficient c(t) with f(x,t) = c(t) * x (zero for VE).
inline double drift_coeff(const SdeSpec& s, double t) {
    return s.kind == SdeKind::VE ? 0.0 : -0.5 * beta(s, t);
}

inline Tensor drift(const SdeSpec& s, const Tensor& x, double t) {
    sde_detail::check_range(s, t, 0.0, "drift");
    return drift_coeff(s, t) * x;
}

inline double diffusion(const SdeSpec& s, double t) {
    sde_detail::check_range(s, t, 0.0, "diffusion");
    if (s.kind == SdeKind::VE) {
        const double ratio = s.sigma_max / s.sigma_min;
        return s.sigma_min * std::pow(ratio, t / s.T) * std::sqrt(2.0 * std::log(ratio) / s.T);
    }
    return std::sqrt(beta(s, t));
}

/// Moments of p_{0t}; no range check, for internal use on validated times.
inline KernelMoments kernel_moments(const SdeSpec& s, double t) {
    if (s.kind == SdeKind::VE) {
        return {1.0, s.sigma_min * std::pow(s.sigma_max / s.sigma_min, t / s.T)};
    }
    const double integral = 0.5 * t * t * (s.beta_max - s.beta_min) / s.T + t * s.beta_min;
    return {std::exp(-0.5 * integral), std::sqrt(-std::expm1(-integral))};
}

inline double kernel_std(const SdeSpec& s, double t) { return kernel_moments(s, t).std; }

struct PerturbedMoments {
    Tensor mean;
    double std;
};

inline PerturbedMoments perturb_kernel(const SdeSpec& s, const Tensor& x0, double t) {
    sde_detail::check_range(s, t, s.t_eps, "perturb_kernel");
    const KernelMoments m = kernel_moments(s, t);
    return {m.mean_scale * x0, m.std};
}

/// grad_{x_t} log p_{0t}(x_t | x0) = (mean - x_t) / std^2.
inline Tensor kernel_score(const SdeSpec& s, const Tensor& x_t, const Tensor& x0, double t) {
    require(x_t.rows() == x0.rows() && x_t.cols() == x0.cols(), "kernel_score: shape mismatch");
    const PerturbedMoments m = perturb_kernel(s, x0, t);
    return (m.mean - x_t) / (m.std * m.std);
}

/// Log density of the prior at t = T, one value per row.
inline Vector prior_logpdf(const SdeSpec& s, const Tensor& x) {
    const double var = s.kind == SdeKind::VE ? s.sigma_max * s.sigma_max : 1.0;
    const double d = static_cast<double>(x.cols());
    const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi * var);
    return (norm - 0.5 * x.rowwise().squaredNorm().array() / var).matrix();
}

inline double prior_std(const SdeSpec& s) { return s.kind == SdeKind::VE ? s.sigma_max : 1.0; }

inline Tensor prior_sample(const SdeSpec& s, RngState& rng, Eigen::Index n, Eigen::Index d) {
    return prior_std(s) * gaussian_sample(rng, n, d);
}

} // namespace msgm
