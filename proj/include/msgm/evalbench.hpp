#pragma once

// Ground-truth Gaussian mixture oracle and the evaluation metrics built on
// it: Bayes component assignment, unlearning ratio, and score-field grids.

#include "msgm/numcore.hpp"
#include "msgm/score_model.hpp"
#include "msgm/sde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace msgm {

struct MixtureComponent {
    double weight;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    bool nsfg = false;
};

enum class MixtureSplit { All, SFG, NSFG };

/// Weighted Gaussian components; weights are normalized on construction.
class MixtureSpec {
public:
    explicit MixtureSpec(std::vector<MixtureComponent> comps) : comps_(std::move(comps)) {
        require(!comps_.empty(), "mixture: at least one component required");
        const Eigen::Index d = comps_.front().mean.size();
        double total = 0.0;
        for (const auto& c : comps_) {
            require(c.weight > 0.0, "mixture: weights must be positive");
            require(c.mean.size() == d && c.cov.rows() == d && c.cov.cols() == d,
                    "mixture: inconsistent component dimensions");
            require(c.cov.isApprox(c.cov.transpose()), "mixture: covariance must be symmetric");
            total += c.weight;
        }
        for (auto& c : comps_) {
            c.weight /= total;
            Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
            require(llt.info() == Eigen::Success, "mixture: covariance must be positive definite");
        }
    }

    /// 4/5 N((-2,-2), I) + 2/5 N((0,0), I) + 4/5 N((2,2), I), centre flagged NSFG.
    static MixtureSpec toy() {
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
        return MixtureSpec({{0.8, Eigen::Vector2d(-2, -2), I, false},
                            {0.4, Eigen::Vector2d(0, 0), I, true},
                            {0.8, Eigen::Vector2d(2, 2), I, false}});
    }

    const std::vector<MixtureComponent>& components() const { return comps_; }
    std::size_t size() const { return comps_.size(); }
    Eigen::Index dim() const { return comps_.front().mean.size(); }

    double split_weight(MixtureSplit split) const {
        double w = 0.0;
        for (const auto& c : comps_) {
            if (in_split(c, split)) w += c.weight;
        }
        return w;
    }

    static bool in_split(const MixtureComponent& c, MixtureSplit split) {
        return split == MixtureSplit::All || (split == MixtureSplit::NSFG) == c.nsfg;
    }

    /// Marginal of x(t) when x(0) follows this mixture.
    MixtureSpec perturbed(const SdeSpec& sde, double t) const {
        const KernelMoments m = kernel_moments(sde, t);
        std::vector<MixtureComponent> out = comps_;
        for (auto& c : out) {
            c.mean *= m.mean_scale;
            c.cov = m.mean_scale * m.mean_scale * c.cov +
                    m.std * m.std * Eigen::MatrixXd::Identity(dim(), dim());
        }
        return MixtureSpec(std::move(out));
    }

    /// Per-row, per-component log(w_k N(x; mu_k, Sigma_k)).
    Eigen::MatrixXd component_logpdf(const Tensor& x) const {
        require(x.cols() == dim(), "mixture: dimension mismatch");
        Eigen::MatrixXd out(x.rows(), comps_.size());
        const double d = static_cast<double>(dim());
        for (std::size_t k = 0; k < comps_.size(); ++k) {
            const auto& c = comps_[k];
            Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
            const Eigen::MatrixXd L = llt.matrixL();
            const double logdet = 2.0 * L.diagonal().array().log().sum();
            const Eigen::MatrixXd diff = (x.rowwise() - c.mean.transpose()).transpose();
            const Eigen::MatrixXd z = llt.matrixL().solve(diff);
            out.col(static_cast<Eigen::Index>(k)) =
                (std::log(c.weight) - 0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet) -
                 0.5 * z.colwise().squaredNorm().array())
                    .matrix()
                    .transpose();
        }
        return out;
    }

private:
    std::vector<MixtureComponent> comps_;
};

inline Vector logsumexp_rows(const Eigen::MatrixXd& m) {
    const Vector mx = m.rowwise().maxCoeff();
    return (mx.array() + (m.colwise() - mx).array().exp().rowwise().sum().log()).matrix();
}

/// Ancestral sampling restricted to one split, weights renormalized.
inline Tensor mixture_sample(const MixtureSpec& mix, Eigen::Index n, RngState& rng,
                             MixtureSplit split = MixtureSplit::All) {
    const double total = mix.split_weight(split);
    require(total > 0.0, "mixture_sample: requested split is empty");
    std::vector<Eigen::MatrixXd> chol;
    for (const auto& c : mix.components()) chol.push_back(Eigen::LLT<Eigen::MatrixXd>(c.cov).matrixL());
    Tensor out(n, mix.dim());
    for (Eigen::Index r = 0; r < n; ++r) {
        double u = rng.uniform(0.0, total);
        std::size_t k = 0;
        for (; k + 1 < mix.size(); ++k) {
            const auto& c = mix.components()[k];
            if (!MixtureSpec::in_split(c, split)) continue;
            if (u < c.weight) break;
            u -= c.weight;
        }
        while (!MixtureSpec::in_split(mix.components()[k], split)) --k;
        Eigen::VectorXd z(mix.dim());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        out.row(r) = (mix.components()[k].mean + chol[k] * z).transpose();
    }
    return out;
}

inline Vector mixture_logpdf(const MixtureSpec& mix, const Tensor& x) {
    return logsumexp_rows(mix.component_logpdf(x));
}

/// Posterior responsibilities, one row per point; rows sum to 1.
inline Eigen::MatrixXd mixture_posterior(const MixtureSpec& mix, const Tensor& x) {
    Eigen::MatrixXd lp = mix.component_logpdf(x);
    const Vector lse = logsumexp_rows(lp);
    return (lp.colwise() - lse).array().exp().matrix();
}

/// grad_x log p(x) of the mixture, one row per point.
inline Tensor mixture_score(const MixtureSpec& mix, const Tensor& x) {
    const Eigen::MatrixXd post = mixture_posterior(mix, x);
    Tensor out = Tensor::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < mix.size(); ++k) {
        const auto& c = mix.components()[k];
        const Eigen::MatrixXd prec = c.cov.inverse();
        const Tensor g = -(x.rowwise() - c.mean.transpose()) * prec; // prec symmetric
        out += post.col(static_cast<Eigen::Index>(k)).asDiagonal() * g;
    }
    return out;
}

struct BayesAssignment {
    std::size_t component;
    Eigen::VectorXd posterior;
};

/// Argmax posterior component; ties go to the lowest index.
inline BayesAssignment bayes_component(const MixtureSpec& mix, const Eigen::RowVectorXd& x) {
    Tensor row = x;
    Eigen::VectorXd post = mixture_posterior(mix, row).row(0).transpose();
    std::size_t best = 0;
    for (Eigen::Index k = 1; k < post.size(); ++k) {
        if (post[k] > post[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(k);
    }
    return {best, post};
}

/// Argmax component per row.
inline std::vector<std::size_t> bayes_components(const MixtureSpec& mix, const Tensor& x) {
    const Eigen::MatrixXd post = mixture_posterior(mix, x);
    std::vector<std::size_t> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < post.cols(); ++k) {
            if (post(r, k) > post(r, best)) best = k;
        }
        out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
    }
    return out;
}

/// Posterior mass on NSFG components per row.
inline Vector nsfg_mass(const MixtureSpec& mix, const Tensor& x) {
    const Eigen::MatrixXd post = mixture_posterior(mix, x);
    Vector out = Vector::Zero(x.rows());
    for (std::size_t k = 0; k < mix.size(); ++k) {
        if (mix.components()[k].nsfg) out += post.col(static_cast<Eigen::Index>(k));
    }
    return out;
}

/// Fraction of samples whose NSFG posterior mass exceeds threshold.
inline double unlearning_ratio(const MixtureSpec& mix, const Tensor& samples, double threshold = 0.5) {
    require(samples.rows() > 0, "unlearning_ratio: no samples");
    const Vector m = nsfg_mass(mix, samples);
    return static_cast<double>((m.array() > threshold).count()) / static_cast<double>(m.size());
}

/// Fraction of rows assigned to each component.
inline Eigen::VectorXd mode_weights(const MixtureSpec& mix, const Tensor& samples) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mix.size()));
    for (std::size_t k : bayes_components(mix, samples)) w[static_cast<Eigen::Index>(k)] += 1.0;
    return w / static_cast<double>(samples.rows());
}

/// Exact score of the diffused mixture p_t, usable wherever a network is.
class MixtureScore {
public:
    MixtureScore(MixtureSpec mix, SdeSpec sde) : mix_(std::move(mix)), sde_(sde) {}

    Eigen::Index dim() const { return mix_.dim(); }
    Tensor score(const Tensor& x, double t) const { return mixture_score(mix_.perturbed(sde_, t), x); }

    const MixtureSpec& mixture() const { return mix_; }

private:
    MixtureSpec mix_;
    SdeSpec sde_;
};

// ---------------------------------------------------------------------------
// Score-field grids

struct Rect {
    double x0 = -5, x1 = 5, y0 = -5, y1 = 5;
};

struct ScoreField {
    Rect rect;
    int nx = 0, ny = 0;
    double t = 0.0;
    Tensor nodes;   ///< nx*ny x 2, x fastest
    Tensor vectors; ///< nx*ny x 2
};

inline Tensor lattice(const Rect& r, int nx, int ny) {
    require(nx >= 2 && ny >= 2, "score_field: resolution must be at least 2 per axis");
    require(r.x1 > r.x0 && r.y1 > r.y0, "score_field: empty rectangle");
    Tensor nodes(static_cast<Eigen::Index>(nx) * ny, 2);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const Eigen::Index k = static_cast<Eigen::Index>(j) * nx + i;
            nodes(k, 0) = r.x0 + (r.x1 - r.x0) * i / (nx - 1);
            nodes(k, 1) = r.y0 + (r.y1 - r.y0) * j / (ny - 1);
        }
    }
    return nodes;
}

template <ScoreModel M>
ScoreField score_field(const M& model, double t, const Rect& rect = {}, int nx = 25, int ny = 25) {
    require(model.dim() == 2, "score_field: two-dimensional models only");
    ScoreField f{rect, nx, ny, t, lattice(rect, nx, ny), {}};
    f.vectors = model.score(f.nodes, t);
    if (!all_finite(f.vectors)) throw NumericalError("score_field: non-finite vector");
    return f;
}

struct Disk {
    double cx, cy, radius;
};

/// Union of disks; empty means the whole lattice.
using Region = std::vector<Disk>;

inline Region sfg_bulk_region(const MixtureSpec& mix, double radius = 1.0) {
    Region r;
    for (const auto& c : mix.components()) {
        if (!c.nsfg) r.push_back({c.mean[0], c.mean[1], radius});
    }
    return r;
}

inline Region nsfg_region(const MixtureSpec& mix, double radius = 1.0) {
    Region r;
    for (const auto& c : mix.components()) {
        if (c.nsfg) r.push_back({c.mean[0], c.mean[1], radius});
    }
    return r;
}

struct Alignment {
    double mean_cosine = 0.0;
    double fraction_negative = 0.0;
    std::size_t nodes_used = 0;
    std::size_t zero_excluded = 0;
};

inline Alignment field_alignment(const ScoreField& a, const ScoreField& b, const Region& region = {}) {
    require(a.nx == b.nx && a.ny == b.ny && a.t == b.t && a.nodes == b.nodes,
            "field_alignment: lattices differ");
    Alignment out;
    double sum = 0.0;
    std::size_t negative = 0;
    for (Eigen::Index k = 0; k < a.nodes.rows(); ++k) {
        const double px = a.nodes(k, 0), py = a.nodes(k, 1);
        const bool inside = region.empty() || std::any_of(region.begin(), region.end(), [&](const Disk& d) {
                                return std::hypot(px - d.cx, py - d.cy) <= d.radius;
                            });
        if (!inside) continue;
        const double na = a.vectors.row(k).norm(), nb = b.vectors.row(k).norm();
        if (na == 0.0 || nb == 0.0) {
            ++out.zero_excluded;
            continue;
        }
        const double c = a.vectors.row(k).dot(b.vectors.row(k)) / (na * nb);
        sum += c;
        if (c < 0.0) ++negative;
        ++out.nodes_used;
    }
    if (out.nodes_used > 0) {
        out.mean_cosine = sum / static_cast<double>(out.nodes_used);
        out.fraction_negative = static_cast<double>(negative) / static_cast<double>(out.nodes_used);
    }
    return out;
}

/// Differential entropy -int p log p of a 2D mixture by tensor-product
/// midpoint quadrature over a box covering every component to +-span sd.
inline double mixture_entropy_2d(const MixtureSpec& mix, int n = 801, double span = 9.0) {
    require(mix.dim() == 2, "mixture_entropy_2d: 2D only");
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (const auto& c : mix.components()) {
        const double sx = std::sqrt(c.cov(0, 0)) * span, sy = std::sqrt(c.cov(1, 1)) * span;
        lo_x = std::min(lo_x, c.mean[0] - sx);
        hi_x = std::max(hi_x, c.mean[0] + sx);
        lo_y = std::min(lo_y, c.mean[1] - sy);
        hi_y = std::max(hi_y, c.mean[1] + sy);
    }
    const double hx = (hi_x - lo_x) / n, hy = (hi_y - lo_y) / n;
    double total = 0.0;
    Tensor row(n, 2);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            row(i, 0) = lo_x + (i + 0.5) * hx;
            row(i, 1) = lo_y + (j + 0.5) * hy;
        }
        const Vector lp = mixture_logpdf(mix, row);
        total += (lp.array().exp() * lp.array()).sum();
    }
    return -total * hx * hy;
}

} // namespace msgm
