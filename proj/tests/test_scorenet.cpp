#include "msgm/scorenet.hpp"

#include <gtest/gtest.h>

#include <boost/crc.hpp>

#include <filesystem>

using namespace msgm;

namespace {

ScoreNet small_net(std::uint64_t seed = 1, SdeSpec sde = SdeSpec::ve()) {
    NetArch a;
    a.widths = {16, 16};
    a.n_freq = 8;
    ScoreNet net = ScoreNet::init(seed, a, sde);
    // Move the output layer off its near-zero init so gradients are well scaled.
    RngState rng(seed + 100);
    for (double& p : net.params()) p += 0.1 * rng.normal();
    return net;
}

double weighted_output(ScoreNet& net, const Tensor& x, const Vector& t, const Tensor& w) {
    return (net.forward(x, t).array() * w.array()).sum();
}

} // namespace

TEST(NetArch, DefaultParameterCount) {
    // first layer (2 + 128 embedding) -> 128, then 128 -> 128, then 128 -> 2, with biases
    const std::size_t expect = (130 * 128 + 128) + (128 * 128 + 128) + (128 * 2 + 2);
    EXPECT_EQ(NetArch{}.param_count(), expect);
    EXPECT_EQ(ScoreNet::init(0, NetArch{}, SdeSpec::ve()).params().size(), expect);
}

TEST(NetArch, RejectsEmptyWidths) {
    NetArch a;
    a.widths.clear();
    EXPECT_THROW(a.validate(), ValidationError);
    EXPECT_THROW(ScoreNet(NetArch{}, SdeSpec::ve(), std::vector<double>(10)), ValidationError);
}

TEST(TimeEmbedding, MatchesDirectSinusoids) {
    Vector t(3);
    t << 0.001, 0.37, 1.0;
    const int nf = 64;
    const Tensor e = time_embedding(t, nf);
    ASSERT_EQ(e.cols(), 2 * nf);
    const double w = 100.0 / nf;
    for (int r = 0; r < 3; ++r) {
        for (int k = 1; k <= nf; ++k) {
            EXPECT_NEAR(e(r, k - 1), std::sin(k * w * t[r]), 1e-10);
            EXPECT_NEAR(e(r, nf + k - 1), std::cos(k * w * t[r]), 1e-10);
        }
    }
}

TEST(ScoreNet, InitialOutputIsSmall) {
    const ScoreNet net = ScoreNet::init(3, NetArch{}, SdeSpec::vp());
    RngState rng(1);
    const Tensor x = gaussian_sample(rng, 64, 2);
    const Tensor s = net.score(x, 0.5);
    EXPECT_LT(s.cwiseAbs().maxCoeff(), 0.2);
}

TEST(ScoreNet, SharedTimePathMatchesPerRowPath) {
    ScoreNet net = small_net();
    RngState rng(2);
    const Tensor x = gaussian_sample(rng, 1100, 2);
    const Tensor a = net.score(x, 0.3);
    const Tensor b = net.forward(x, Vector::Constant(x.rows(), 0.3));
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + b.cwiseAbs().maxCoeff()));
}

TEST(ScoreNet, RecordedValueMatchesForward) {
    ScoreNet net = small_net();
    RngState rng(3);
    const Tensor x = gaussian_sample(rng, 20, 2);
    const Vector t = uniform_sample(rng, 20, 1e-3, 1.0);
    Var out = net.record(x, t);
    EXPECT_LT((out.value() - net.forward(x, t)).cwiseAbs().maxCoeff(), 1e-12);
    net.tape().clear_graph();
}

TEST(ScoreNet, OutputIsDividedByKernelStd) {
    ScoreNet net = small_net();
    const Tensor x = Tensor::Zero(1, 2);
    const double t = 0.4;
    Vector tv = Vector::Constant(1, t);
    Var raw = net.record(x, tv);
    const Tensor scaled = raw.value();
    net.tape().clear_graph();
    // record() ends with the 1/std row scaling; undoing it gives the raw head output,
    // which must not depend on the SDE's std at that t
    const Tensor head = scaled * kernel_std(SdeSpec::ve(), t);
    ScoreNet other(net.arch(), SdeSpec::vp(), std::vector<double>(net.params().begin(), net.params().end()));
    EXPECT_LT((other.forward(x, tv) * kernel_std(SdeSpec::vp(), t) - head).cwiseAbs().maxCoeff(), 1e-12);
}

// Tape gradients against central differences at 100 random parameter indices.
TEST(ScoreNet, ParameterGradientsMatchFiniteDifferences) {
    for (const SdeSpec& sde : {SdeSpec::ve(), SdeSpec::vp()}) {
        ScoreNet net = small_net(7, sde);
        RngState rng(4);
        const Tensor x = gaussian_sample(rng, 8, 2);
        const Vector t = uniform_sample(rng, 8, 0.05, 1.0);
        const Tensor w = gaussian_sample(rng, 8, 2);
        net.tape().clear_graph();
        Var l = ops::sum(ops::mul(net.record(x, t), net.tape().constant(w)));
        const auto ad = net.tape().backward(l);
        const std::vector<double> grad(ad.begin(), ad.end());
        net.tape().clear_graph();
        double worst = 0.0;
        for (int probe = 0; probe < 100; ++probe) {
            const std::size_t i = rng.index(grad.size());
            const double orig = net.params()[i];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            net.params()[i] = orig + h;
            const double up = weighted_output(net, x, t, w);
            net.params()[i] = orig - h;
            const double dn = weighted_output(net, x, t, w);
            net.params()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            const double scale = std::max(std::abs(fd), 1e-3 * std::abs(l.value()(0, 0)) + 1e-8);
            worst = std::max(worst, std::abs(fd - grad[i]) / scale);
        }
        EXPECT_LT(worst, 1e-4) << to_string(sde.kind);
    }
}

TEST(ScoreNet, TimeOutsideRangeRejected) {
    ScoreNet net = small_net();
    const Tensor x = Tensor::Zero(2, 2);
    EXPECT_THROW(net.score(x, 0.0), ValidationError);
    EXPECT_THROW(net.score(x, 1.01), ValidationError);
    EXPECT_THROW(net.score(Tensor::Zero(2, 3), 0.5), ValidationError);
}

TEST(ScoreNet, NonFiniteOutputIsNumericalError) {
    ScoreNet net = small_net();
    net.params()[net.params().size() - 1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(net.score(Tensor::Zero(1, 2), 0.5), NumericalError);
}

TEST(Divergence, LinearMapTrace) {
    Eigen::MatrixXd A(3, 3);
    A << 1.0, 2.0, 0.5, -0.3, -4.0, 1.0, 0.0, 0.7, 2.5;
    const LinearScore m(A);
    RngState rng(5);
    const Tensor x = gaussian_sample(rng, 10, 3);
    const Vector div = divergence_exact(m, x, 0.5);
    for (Eigen::Index i = 0; i < div.size(); ++i) EXPECT_NEAR(div[i], A.trace(), 1e-9);
    // Rademacher probes on a diagonal map have zero variance
    const LinearScore diag(Eigen::MatrixXd(Eigen::Vector3d(1.0, -2.0, 3.0).asDiagonal()));
    const DivergenceEstimate h = divergence_hutchinson(diag, x.row(0), 0.5, 8, rng);
    EXPECT_NEAR(h.value, 2.0, 1e-9);
    EXPECT_NEAR(h.std_error, 0.0, 1e-9);
}

TEST(Divergence, HutchinsonAgreesWithExactOnNet) {
    ScoreNet net = small_net();
    RngState rng(6);
    const Tensor x = gaussian_sample(rng, 5, 2);
    const Vector exact = net.divergence(x, 0.2);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const DivergenceEstimate h = net.divergence_hutchinson(x.row(r), 0.2, 400, rng);
        EXPECT_LT(std::abs(h.value - exact[r]), 3 * h.std_error + 1e-6);
    }
}

class Checkpoint : public ::testing::Test {
protected:
    std::filesystem::path path = std::filesystem::temp_directory_path() / "msgm_test_ckpt.bin";
    void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(Checkpoint, RoundTripIsExact) {
    const ScoreNet net = small_net(9);
    save_checkpoint(net, path);
    const ScoreNet back = load_checkpoint(path, SdeSpec::ve());
    EXPECT_EQ(back.arch(), net.arch());
    ASSERT_EQ(back.params().size(), net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(back.params()[i], net.params()[i]);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(net));
}

TEST_F(Checkpoint, LayoutAndCrc) {
    const ScoreNet net = small_net(9);
    const auto buf = encode_checkpoint(net);
    EXPECT_EQ(std::string(buf.begin(), buf.begin() + 5), "MSGM1");
    const std::size_t header = 5 + 4 + 4 + 4 * net.arch().widths.size() + 4 + 8;
    EXPECT_EQ(buf.size(), header + 8 * net.params().size() + 8);
    // CRC-64/ECMA-182 check value for "123456789"
    boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0, 0, false, false> crc;
    const std::string check = "123456789";
    crc.process_bytes(check.data(), check.size());
    EXPECT_EQ(crc.checksum(), 0x6C40DF5F0B497347ULL);
}

TEST_F(Checkpoint, CorruptionRejected) {
    const ScoreNet net = small_net(9);
    auto buf = encode_checkpoint(net);
    auto flipped = buf;
    flipped[buf.size() / 2] ^= 0x01;
    EXPECT_THROW(decode_checkpoint(flipped, SdeSpec::ve()), ValidationError);
    auto truncated = buf;
    truncated.resize(buf.size() - 9);
    EXPECT_THROW(decode_checkpoint(truncated, SdeSpec::ve()), ValidationError);
    auto magic = buf;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic, SdeSpec::ve()), ValidationError);
    EXPECT_THROW(load_checkpoint(path / "missing", SdeSpec::ve()), ValidationError);
}

TEST_F(Checkpoint, HeaderMismatchRejectedEvenWithValidCrc) {
    const ScoreNet net = small_net(9);
    auto buf = encode_checkpoint(net);
    buf.resize(buf.size() - 8);
    buf[5 + 4 + 4] = 17; // first width 16 -> 17
    boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0, 0, false, false> crc;
    crc.process_bytes(buf.data(), buf.size());
    std::uint64_t c = crc.checksum();
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(c >> (8 * i)));
    EXPECT_THROW(decode_checkpoint(buf, SdeSpec::ve()), ValidationError);
}
