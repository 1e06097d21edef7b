#pragma once

// Training objectives: denoising score matching on retained data, the
// orthogonal and obtuse forgetting losses on NSFG data, their alpha-weighted
// combination with an alternating update cadence, and the Adam loop.

#include "msgm/numcore.hpp"
#include "msgm/scorenet.hpp"
#include "msgm/sde.hpp"
#include "msgm/tape.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msgm {

enum class TrainMode { Standard, Unseen, Ort, Obt, FinetuneOrt, FinetuneObt };

inline std::string_view to_string(TrainMode m) {
    switch (m) {
    case TrainMode::Standard: return "Standard";
    case TrainMode::Unseen: return "Unseen";
    case TrainMode::Ort: return "Ort";
    case TrainMode::Obt: return "Obt";
    case TrainMode::FinetuneOrt: return "FinetuneOrt";
    case TrainMode::FinetuneObt: return "FinetuneObt";
    }
    return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
    for (TrainMode m : {TrainMode::Standard, TrainMode::Unseen, TrainMode::Ort, TrainMode::Obt,
                        TrainMode::FinetuneOrt, TrainMode::FinetuneObt}) {
        if (s == to_string(m)) return m;
    }
    throw ValidationError("unknown training mode '" + std::string(s) + "'");
}

inline bool is_msgm(TrainMode m) { return m != TrainMode::Standard && m != TrainMode::Unseen; }
inline bool is_finetune(TrainMode m) { return m == TrainMode::FinetuneOrt || m == TrainMode::FinetuneObt; }
inline bool is_obtuse(TrainMode m) { return m == TrainMode::Obt || m == TrainMode::FinetuneObt; }

/// lambda(t): Variance is std(t)^2, Unit is 1.
enum class Weighting { Variance, Unit };

inline Weighting parse_weighting(std::string_view s) {
    if (s == "variance") return Weighting::Variance;
    if (s == "unit") return Weighting::Unit;
    throw ValidationError("unknown lambda kind '" + std::string(s) + "' (expected variance or unit)");
}

inline std::string_view to_string(Weighting w) { return w == Weighting::Variance ? "variance" : "unit"; }

struct TrainPlan {
    TrainMode mode = TrainMode::Standard;
    double alpha = 0.99;
    int update_interval = 4;
    long steps = 50000;
    int batch_size = 512;
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Weighting lambda = Weighting::Variance;
    bool obtuse_hinge = false;
    std::uint64_t seed = 0;

    void validate() const {
        require(alpha >= 0.0 && alpha <= 1.0, "train: alpha must lie in [0, 1]");
        require(update_interval >= 1, "train: update_interval must be >= 1");
        require(steps >= 1, "train: steps must be >= 1");
        require(batch_size >= 1, "train: batch_size must be >= 1");
        require(learning_rate > 0.0, "train: learning_rate must be positive");
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: adam betas must lie in [0, 1)");
        require(adam_eps > 0.0, "train: adam_eps must be positive");
    }
};

struct SplitDataset {
    Tensor retain; ///< D_g
    Tensor forget; ///< D_f

    Tensor all() const {
        if (forget.rows() == 0) return retain;
        Tensor out(retain.rows() + forget.rows(), retain.cols());
        out << retain, forget;
        return out;
    }
};

struct LossRecord {
    long step = 0;
    double retain = 0.0;                                          ///< L_g
    double forget = std::numeric_limits<double>::quiet_NaN();    ///< L_f, NaN when not computed
    double total = 0.0;

    bool has_forget() const { return !std::isnan(forget); }
    bool operator==(const LossRecord& o) const {
        return step == o.step && retain == o.retain && total == o.total &&
               (has_forget() ? forget == o.forget : !o.has_forget());
    }
};

using LossCurve = std::vector<LossRecord>;

/// Random quantities behind one loss evaluation: clean points, times, noise.
struct LossDraws {
    Tensor x0;
    Vector t;
    Tensor z;
};

inline LossDraws draw_batch(const Tensor& pool, int batch_size, const SdeSpec& sde, RngState& rng) {
    require(pool.rows() > 0, "draw_batch: empty data pool");
    LossDraws d;
    d.x0.resize(batch_size, pool.cols());
    for (int i = 0; i < batch_size; ++i) d.x0.row(i) = pool.row(static_cast<Eigen::Index>(rng.index(pool.rows())));
    d.t = uniform_sample(rng, batch_size, sde.t_eps, sde.T);
    d.z = gaussian_sample(rng, batch_size, pool.cols());
    return d;
}

/// Uses a whole batch as-is (no resampling), fresh t and z.
inline LossDraws draws_for(const Tensor& batch, const SdeSpec& sde, RngState& rng) {
    require(batch.rows() > 0, "loss: batch must be non-empty");
    return {batch, uniform_sample(rng, batch.rows(), sde.t_eps, sde.T), gaussian_sample(rng, batch.rows(), batch.cols())};
}

struct Perturbed {
    Tensor x_t;
    Tensor target; ///< kernel score at x_t
    Vector lambda;
};

inline Perturbed perturb(const LossDraws& d, const SdeSpec& sde, Weighting w) {
    Perturbed p;
    const Eigen::Index n = d.x0.rows();
    p.x_t.resize(n, d.x0.cols());
    p.target.resize(n, d.x0.cols());
    p.lambda.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const KernelMoments m = kernel_moments(sde, d.t[i]);
        p.x_t.row(i) = m.mean_scale * d.x0.row(i) + m.std * d.z.row(i);
        p.target.row(i) = -d.z.row(i) / m.std;
        p.lambda[i] = w == Weighting::Variance ? m.std * m.std : 1.0;
    }
    return p;
}

/// Scalar-valued losses on the net's tape. The caller calls backward().
namespace loss_graph {

inline Var dsm(ScoreNet& net, const LossDraws& d, Weighting w) {
    using namespace ops;
    const Perturbed p = perturb(d, net.sde(), w);
    Var out = net.record(p.x_t, d.t);
    Var diff = sub(out, net.tape().constant(p.target));
    return mean(scale_rows(row_sum(square(diff)), p.lambda));
}

inline Var ortho(ScoreNet& net, const LossDraws& d, Weighting w) {
    using namespace ops;
    const Perturbed p = perturb(d, net.sde(), w);
    Var c = row_dot(net.record(p.x_t, d.t), net.tape().constant(p.target));
    return mean(scale_rows(square(c), p.lambda));
}

inline Var obtuse(ScoreNet& net, const LossDraws& d, Weighting w, bool hinge) {
    using namespace ops;
    const Perturbed p = perturb(d, net.sde(), w);
    Var c = row_dot(net.record(p.x_t, d.t), net.tape().constant(p.target));
    if (hinge) c = relu(c);
    return mean(scale_rows(c, p.lambda));
}

} // namespace loss_graph

struct LossValue {
    double value;
    std::vector<double> grad;
};

namespace unlearn_detail {

template <class Build>
LossValue evaluate(ScoreNet& net, Build&& build) {
    net.tape().clear_graph();
    Var l = build();
    const double v = l.value()(0, 0);
    if (!std::isfinite(v)) throw NumericalError("loss is not finite");
    auto g = net.tape().backward(l);
    LossValue out{v, std::vector<double>(g.begin(), g.end())};
    net.tape().clear_graph();
    return out;
}

} // namespace unlearn_detail

/// mean lambda(t) ||s(x_t,t) - grad log p_0t(x_t|x0)||^2 over the batch.
inline LossValue dsm_loss(ScoreNet& net, const Tensor& batch, RngState& rng, Weighting w = Weighting::Variance) {
    const LossDraws d = draws_for(batch, net.sde(), rng);
    return unlearn_detail::evaluate(net, [&] { return loss_graph::dsm(net, d, w); });
}

/// mean lambda(t) <s, grad log p_0t>^2 over an NSFG batch.
inline LossValue ortho_loss(ScoreNet& net, const Tensor& batch_f, RngState& rng, Weighting w = Weighting::Variance) {
    const LossDraws d = draws_for(batch_f, net.sde(), rng);
    return unlearn_detail::evaluate(net, [&] { return loss_graph::ortho(net, d, w); });
}

/// mean lambda(t) <s, grad log p_0t> over an NSFG batch (hinged at 0 if asked).
inline LossValue obtuse_loss(ScoreNet& net, const Tensor& batch_f, RngState& rng, Weighting w = Weighting::Variance,
                             bool hinge = false) {
    const LossDraws d = draws_for(batch_f, net.sde(), rng);
    return unlearn_detail::evaluate(net, [&] { return loss_graph::obtuse(net, d, w, hinge); });
}

class Adam {
public:
    Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    explicit Adam(std::size_t n, const TrainPlan& p = {})
        : Adam(n, p.learning_rate, p.beta1, p.beta2, p.adam_eps) {}

    void step(std::span<double> params, std::span<const double> grad) {
        require(params.size() == m_.size() && grad.size() == m_.size(), "Adam: size mismatch");
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    long steps_taken() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

/// Independent streams for retain-side and forget-side draws, so whether or
/// not L_f is evaluated never shifts the retain batches.
struct StepRng {
    RngState retain;
    RngState forget;

    explicit StepRng(std::uint64_t seed) : retain(RngState(seed).split(1)), forget(RngState(seed).split(2)) {}
};

inline constexpr double kDivergenceGuard = 1e6;

namespace unlearn_detail {

inline void guard(double total, long step) {
    if (!std::isfinite(total)) {
        throw NumericalError("training step " + std::to_string(step) + ": loss is not finite");
    }
    if (total > kDivergenceGuard) {
        throw NumericalError("training step " + std::to_string(step) + ": loss " + std::to_string(total) +
                             " exceeds divergence guard");
    }
}

} // namespace unlearn_detail

/// Builds the step objective on the net's tape and returns (loss node, record).
/// On forget steps the objective is alpha*L_g + (1-alpha)*L_f; otherwise L_g.
inline std::pair<Var, LossRecord> record_msgm_objective(ScoreNet& net, const TrainPlan& plan,
                                                        const SplitDataset& data, long step_index,
                                                        StepRng& rng) {
    require(is_msgm(plan.mode), "msgm_step: mode must be Ort, Obt, FinetuneOrt or FinetuneObt");
    require(data.retain.rows() > 0 && data.forget.rows() > 0, "msgm_step: both D_g and D_f must be non-empty");
    const LossDraws dg = draw_batch(data.retain, plan.batch_size, net.sde(), rng.retain);
    Var lg = loss_graph::dsm(net, dg, plan.lambda);
    LossRecord rec;
    rec.step = step_index;
    rec.retain = lg.value()(0, 0);
    if (step_index % plan.update_interval != 0) {
        rec.total = rec.retain;
        return {lg, rec};
    }
    const LossDraws df = draw_batch(data.forget, plan.batch_size, net.sde(), rng.forget);
    Var lf = is_obtuse(plan.mode) ? loss_graph::obtuse(net, df, plan.lambda, plan.obtuse_hinge)
                                  : loss_graph::ortho(net, df, plan.lambda);
    rec.forget = lf.value()(0, 0);
    Var total = ops::combine(lg, plan.alpha, lf, 1.0 - plan.alpha);
    rec.total = total.value()(0, 0);
    return {total, rec};
}

/// One Adam update of the MSGM objective.
inline LossRecord msgm_step(ScoreNet& net, const TrainPlan& plan, const SplitDataset& data, long step_index,
                            StepRng& rng, Adam& opt) {
    net.tape().clear_graph();
    auto [loss, rec] = record_msgm_objective(net, plan, data, step_index, rng);
    unlearn_detail::guard(rec.total, step_index);
    auto grad = net.tape().backward(loss);
    net.tape().clear_graph();
    opt.step(net.params(), grad);
    return rec;
}

/// One Adam update of plain DSM on `pool` (Standard: D_g u D_f, Unseen: D_g).
inline LossRecord dsm_step(ScoreNet& net, const TrainPlan& plan, const Tensor& pool, long step_index, StepRng& rng,
                           Adam& opt) {
    net.tape().clear_graph();
    const LossDraws dg = draw_batch(pool, plan.batch_size, net.sde(), rng.retain);
    Var lg = loss_graph::dsm(net, dg, plan.lambda);
    LossRecord rec{step_index, lg.value()(0, 0), std::numeric_limits<double>::quiet_NaN(), lg.value()(0, 0)};
    unlearn_detail::guard(rec.total, step_index);
    auto grad = net.tape().backward(lg);
    net.tape().clear_graph();
    opt.step(net.params(), grad);
    return rec;
}

struct TrainResult {
    ScoreNet net;
    LossCurve curve;
};

/// Runs plan.steps optimizer steps starting from `net` (fresh or a loaded
/// checkpoint for the fine-tune modes). Deterministic given plan.seed.
/// `progress` is called after every step when set.
template <class Progress = std::nullptr_t>
TrainResult train(const TrainPlan& plan, const SplitDataset& data, ScoreNet net, Progress&& progress = nullptr) {
    plan.validate();
    require(data.retain.rows() > 0, "train: D_g must be non-empty");
    require(!is_msgm(plan.mode) || data.forget.rows() > 0, "train: MSGM modes need a non-empty D_f");
    StepRng rng(plan.seed);
    Adam opt(net.params().size(), plan);
    LossCurve curve;
    curve.reserve(static_cast<std::size_t>(plan.steps));
    const Tensor pool = plan.mode == TrainMode::Standard ? data.all() : data.retain;
    for (long s = 0; s < plan.steps; ++s) {
        curve.push_back(is_msgm(plan.mode) ? msgm_step(net, plan, data, s, rng, opt)
                                           : dsm_step(net, plan, pool, s, rng, opt));
        if constexpr (!std::is_same_v<std::decay_t<Progress>, std::nullptr_t>) progress(curve.back());
    }
    return {std::move(net), std::move(curve)};
}

/// Mean retain loss over the final `window` records.
inline double final_retain_loss(const LossCurve& curve, std::size_t window = 1000) {
    require(!curve.empty(), "final_retain_loss: empty curve");
    const std::size_t n = std::min(window, curve.size());
    double s = 0.0;
    for (std::size_t i = curve.size() - n; i < curve.size(); ++i) s += curve[i].retain;
    return s / static_cast<double>(n);
}

} // namespace msgm
