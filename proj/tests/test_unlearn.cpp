#include "msgm/unlearn.hpp"

#include <gtest/gtest.h>

using namespace msgm;

namespace {

NetArch tiny_arch() {
    NetArch a;
    a.widths = {12, 12};
    a.n_freq = 6;
    return a;
}

ScoreNet tiny_net(std::uint64_t seed, SdeSpec sde = SdeSpec::ve()) {
    ScoreNet net = ScoreNet::init(seed, tiny_arch(), sde);
    RngState rng(seed ^ 0xabcdef);
    for (double& p : net.params()) p += 0.05 * rng.normal();
    return net;
}

/// Negates s_theta exactly by flipping the output layer's weights and bias.
ScoreNet negated(const ScoreNet& net) {
    std::vector<double> p(net.params().begin(), net.params().end());
    const int in = net.arch().widths.back();
    const std::size_t n_out = static_cast<std::size_t>(in * net.arch().input_dim + net.arch().input_dim);
    for (std::size_t i = p.size() - n_out; i < p.size(); ++i) p[i] = -p[i];
    return ScoreNet(net.arch(), net.sde(), std::move(p));
}

SplitDataset toy_data(std::uint64_t seed, Eigen::Index n = 200) {
    RngState rng(seed);
    Tensor g = gaussian_sample(rng, n, 2);
    g.col(0).array() += 2.0;
    g.col(1).array() += 2.0;
    return {g, gaussian_sample(rng, n / 4, 2)};
}

using LossFn = LossValue (*)(ScoreNet&, const Tensor&, RngState&, Weighting);

double loss_at(ScoreNet& net, const LossDraws& d, int which) {
    net.tape().clear_graph();
    Var l = which == 0 ? loss_graph::dsm(net, d, Weighting::Variance)
            : which == 1 ? loss_graph::ortho(net, d, Weighting::Variance)
                         : loss_graph::obtuse(net, d, Weighting::Variance, false);
    const double v = l.value()(0, 0);
    net.tape().clear_graph();
    return v;
}

} // namespace

TEST(TrainMode, NamesRoundTrip) {
    for (TrainMode m : {TrainMode::Standard, TrainMode::Unseen, TrainMode::Ort, TrainMode::Obt, TrainMode::FinetuneOrt,
                        TrainMode::FinetuneObt}) {
        EXPECT_EQ(parse_train_mode(to_string(m)), m);
    }
    EXPECT_THROW(parse_train_mode("Erase"), ValidationError);
    EXPECT_TRUE(is_msgm(TrainMode::FinetuneObt));
    EXPECT_FALSE(is_msgm(TrainMode::Unseen));
}

TEST(TrainPlan, ValidationBounds) {
    TrainPlan p;
    EXPECT_NO_THROW(p.validate());
    p.alpha = 1.2;
    EXPECT_THROW(p.validate(), ValidationError);
    p = {};
    p.update_interval = 0;
    EXPECT_THROW(p.validate(), ValidationError);
    p = {};
    p.learning_rate = 0;
    EXPECT_THROW(p.validate(), ValidationError);
}

// Each loss's tape gradient against central differences on 100 random parameters.
TEST(Losses, GradientsMatchFiniteDifferences) {
    const char* names[] = {"dsm", "ortho", "obtuse"};
    for (int which = 0; which < 3; ++which) {
        ScoreNet net = tiny_net(10 + which);
        RngState rng(20 + which);
        const LossDraws d = draw_batch(gaussian_sample(rng, 30, 2), 16, net.sde(), rng);
        net.tape().clear_graph();
        Var l = which == 0 ? loss_graph::dsm(net, d, Weighting::Variance)
                : which == 1 ? loss_graph::ortho(net, d, Weighting::Variance)
                             : loss_graph::obtuse(net, d, Weighting::Variance, false);
        const double base = l.value()(0, 0);
        const auto ad = net.tape().backward(l);
        const std::vector<double> grad(ad.begin(), ad.end());
        net.tape().clear_graph();
        double worst = 0.0;
        for (int k = 0; k < 100; ++k) {
            const std::size_t i = rng.index(grad.size());
            const double orig = net.params()[i];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            net.params()[i] = orig + h;
            const double up = loss_at(net, d, which);
            net.params()[i] = orig - h;
            const double dn = loss_at(net, d, which);
            net.params()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            const double scale = std::max(std::abs(fd), 1e-4 * std::abs(base) + 1e-8);
            worst = std::max(worst, std::abs(fd - grad[i]) / scale);
        }
        EXPECT_LT(worst, 1e-4) << names[which];
    }
}

TEST(Losses, DsmValueMatchesDirectFormula) {
    ScoreNet net = tiny_net(3);
    RngState rng(4);
    const LossDraws d = draw_batch(gaussian_sample(rng, 20, 2), 20, net.sde(), rng);
    const Tensor xt = perturb(d, net.sde(), Weighting::Variance).x_t;
    const Tensor s = net.forward(xt, d.t);
    double expect = 0.0;
    for (Eigen::Index i = 0; i < 20; ++i) {
        const double sd = kernel_std(net.sde(), d.t[i]);
        const Eigen::RowVectorXd target = (d.x0.row(i) - xt.row(i)) / (sd * sd);
        expect += sd * sd * (s.row(i) - target).squaredNorm();
    }
    EXPECT_NEAR(loss_at(net, d, 0), expect / 20, 1e-9 * expect);
}

TEST(Losses, OrthoNonnegativeAndObtuseSignFlipOnRandomProbes) {
    RngState rng(99);
    for (int probe = 0; probe < 1000; ++probe) {
        const SdeSpec sde = probe % 2 ? SdeSpec::ve() : SdeSpec::vp();
        ScoreNet net = tiny_net(1000 + probe, sde);
        ScoreNet neg = negated(net);
        const Tensor batch = 3.0 * gaussian_sample(rng, 8, 2);
        const LossDraws d = draws_for(batch, sde, rng);
        const double ortho = loss_at(net, d, 1);
        ASSERT_GE(ortho, 0.0);
        ASSERT_EQ(loss_at(neg, d, 1), ortho);
        const double obt = loss_at(net, d, 2);
        ASSERT_EQ(loss_at(neg, d, 2), -obt) << "probe " << probe;
    }
}

TEST(Losses, HingeClampsObtuseAtZero) {
    ScoreNet net = tiny_net(5);
    RngState rng(6);
    const LossDraws d = draws_for(gaussian_sample(rng, 64, 2), net.sde(), rng);
    net.tape().clear_graph();
    const double hinged = loss_graph::obtuse(net, d, Weighting::Variance, true).value()(0, 0);
    net.tape().clear_graph();
    EXPECT_GE(hinged, 0.0);
    EXPECT_GE(hinged, loss_at(net, d, 2));
}

TEST(Losses, PublicWrappersAreSeeded) {
    ScoreNet net = tiny_net(7);
    RngState rng(8);
    const Tensor batch = gaussian_sample(rng, 32, 2);
    RngState a(1), b(1);
    const LossValue la = ortho_loss(net, batch, a), lb = ortho_loss(net, batch, b);
    EXPECT_EQ(la.value, lb.value);
    EXPECT_EQ(la.grad, lb.grad);
    EXPECT_GE(la.value, 0.0);
    EXPECT_TRUE(std::isfinite(dsm_loss(net, batch, a).value));
    EXPECT_TRUE(std::isfinite(obtuse_loss(net, batch, a).value));
}

// The applied gradient on a forget step is alpha*g_g + (1-alpha)*g_f.
TEST(MsgmStep, CombinedGradientIsLinear) {
    const SplitDataset data = toy_data(1);
    for (TrainMode mode : {TrainMode::Ort, TrainMode::Obt}) {
        for (double alpha : {0.0, 0.3, 0.99, 1.0}) {
            ScoreNet net = tiny_net(2);
            TrainPlan plan;
            plan.mode = mode;
            plan.alpha = alpha;
            plan.batch_size = 32;
            StepRng rng(5);
            StepRng replay = rng;

            net.tape().clear_graph();
            auto [loss, rec] = record_msgm_objective(net, plan, data, 0, rng);
            ASSERT_TRUE(rec.has_forget());
            const auto g = net.tape().backward(loss);
            const std::vector<double> combined(g.begin(), g.end());

            const LossDraws dg = draw_batch(data.retain, 32, net.sde(), replay.retain);
            const LossDraws df = draw_batch(data.forget, 32, net.sde(), replay.forget);
            net.tape().clear_graph();
            const auto gg_span = net.tape().backward(loss_graph::dsm(net, dg, plan.lambda));
            const std::vector<double> gg(gg_span.begin(), gg_span.end());
            net.tape().clear_graph();
            Var lf = mode == TrainMode::Obt ? loss_graph::obtuse(net, df, plan.lambda, false)
                                            : loss_graph::ortho(net, df, plan.lambda);
            const auto gf_span = net.tape().backward(lf);
            const std::vector<double> gf(gf_span.begin(), gf_span.end());
            net.tape().clear_graph();

            double worst = 0.0;
            for (std::size_t i = 0; i < gg.size(); ++i) {
                const double expect = alpha * gg[i] + (1 - alpha) * gf[i];
                worst = std::max(worst, std::abs(combined[i] - expect) / std::max(1.0, std::abs(expect)));
            }
            EXPECT_LE(worst, 1e-10) << to_string(mode) << " alpha=" << alpha;
        }
    }
}

TEST(MsgmStep, ForgetLossOnlyOnIntervalSteps) {
    const SplitDataset data = toy_data(2);
    TrainPlan plan;
    plan.mode = TrainMode::Ort;
    plan.update_interval = 4;
    plan.batch_size = 16;
    plan.steps = 12;
    plan.seed = 3;
    const TrainResult r = train(plan, data, tiny_net(4));
    for (const auto& rec : r.curve) {
        EXPECT_EQ(rec.has_forget(), rec.step % 4 == 0) << rec.step;
        if (!rec.has_forget()) EXPECT_EQ(rec.total, rec.retain);
    }
}

TEST(Train, AlphaOneOrtIsBitIdenticalToUnseen) {
    const SplitDataset data = toy_data(3);
    TrainPlan ort;
    ort.mode = TrainMode::Ort;
    ort.alpha = 1.0;
    ort.update_interval = 1;
    ort.batch_size = 32;
    ort.steps = 60;
    ort.seed = 11;
    TrainPlan unseen = ort;
    unseen.mode = TrainMode::Unseen;
    const TrainResult a = train(ort, data, tiny_net(6));
    const TrainResult b = train(unseen, data, tiny_net(6));
    ASSERT_EQ(a.curve.size(), b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) ASSERT_EQ(a.curve[i].retain, b.curve[i].retain) << i;
    ASSERT_EQ(a.net.params().size(), b.net.params().size());
    for (std::size_t i = 0; i < a.net.params().size(); ++i) ASSERT_EQ(a.net.params()[i], b.net.params()[i]);
}

TEST(Train, SeededRunsAreIdentical) {
    const SplitDataset data = toy_data(4);
    TrainPlan p;
    p.mode = TrainMode::Obt;
    p.batch_size = 32;
    p.steps = 40;
    p.seed = 5;
    const TrainResult a = train(p, data, tiny_net(1));
    const TrainResult b = train(p, data, tiny_net(1));
    ASSERT_EQ(a.curve.size(), b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        EXPECT_EQ(a.curve[i].retain, b.curve[i].retain);
        EXPECT_EQ(a.curve[i].forget == b.curve[i].forget || (std::isnan(a.curve[i].forget) && std::isnan(b.curve[i].forget)),
                  true);
    }
    for (std::size_t i = 0; i < a.net.params().size(); ++i) ASSERT_EQ(a.net.params()[i], b.net.params()[i]);
}

TEST(Train, UnseenIgnoresForgetSetAndStandardUsesIt) {
    SplitDataset data = toy_data(5);
    SplitDataset other = data;
    other.forget = other.forget.array() + 1.0;
    TrainPlan p;
    p.mode = TrainMode::Unseen;
    p.batch_size = 32;
    p.steps = 20;
    p.seed = 2;
    const TrainResult a = train(p, data, tiny_net(3)), b = train(p, other, tiny_net(3));
    for (std::size_t i = 0; i < a.net.params().size(); ++i) ASSERT_EQ(a.net.params()[i], b.net.params()[i]);
    p.mode = TrainMode::Standard;
    const TrainResult c = train(p, data, tiny_net(3)), d = train(p, other, tiny_net(3));
    bool differ = false;
    for (std::size_t i = 0; i < c.net.params().size(); ++i) differ |= c.net.params()[i] != d.net.params()[i];
    EXPECT_TRUE(differ);
}

TEST(Train, DsmLossDecreases) {
    const SplitDataset data = toy_data(6, 1000);
    TrainPlan p;
    p.mode = TrainMode::Standard;
    p.batch_size = 128;
    p.steps = 600;
    p.learning_rate = 1e-3;
    p.seed = 8;
    const TrainResult r = train(p, data, ScoreNet::init(2, tiny_arch(), SdeSpec::vp()));
    double first = 0, last = 0;
    for (int i = 0; i < 100; ++i) {
        first += r.curve[static_cast<std::size_t>(i)].retain;
        last += r.curve[r.curve.size() - 1 - static_cast<std::size_t>(i)].retain;
    }
    EXPECT_LT(last, 0.9 * first);
    EXPECT_NEAR(final_retain_loss(r.curve, 100), last / 100, 1e-12);
}

TEST(Train, DivergenceGuardAborts) {
    const SplitDataset data = toy_data(7);
    ScoreNet net = tiny_net(8);
    for (double& p : net.params()) p *= 50.0;
    TrainPlan p;
    p.mode = TrainMode::Standard;
    p.batch_size = 64;
    p.steps = 5;
    EXPECT_THROW(train(p, data, net), NumericalError);
}

TEST(Train, MsgmModesNeedForgetData) {
    SplitDataset data = toy_data(8);
    data.forget.resize(0, 2);
    TrainPlan p;
    p.mode = TrainMode::Ort;
    p.steps = 1;
    EXPECT_THROW(train(p, data, tiny_net(1)), ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Adam opt(3, 0.1, 0.9, 0.999, 1e-8);
    std::vector<double> p{1.0, 2.0, 3.0};
    const std::vector<double> g{0.5, -2.0, 0.0};
    opt.step(p, g);
    EXPECT_NEAR(p[0], 0.9, 1e-6);
    EXPECT_NEAR(p[1], 2.1, 1e-6);
    EXPECT_EQ(p[2], 3.0);
}
