#pragma once

// Time-conditioned MLP score model s_theta(x, t).
//
// Input row is [x | sin(w_k t) | cos(w_k t)], hidden layers use SiLU, and the
// raw output is divided by the perturbation-kernel std at t so that the
// network itself only has to predict an O(1) quantity (the negated noise).

#include "msgm/numcore.hpp"
#include "msgm/score_model.hpp"
#include "msgm/sde.hpp"
#include "msgm/tape.hpp"

#include <boost/crc.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace msgm {

struct NetArch {
    int input_dim = 2;
    std::vector<int> widths{128, 128};
    int n_freq = 64;

    int embed_width() const { return 2 * n_freq; }

    std::size_t param_count() const {
        std::size_t total = 0;
        int in = input_dim + embed_width();
        for (int w : widths) {
            total += static_cast<std::size_t>(in) * w + w;
            in = w;
        }
        return total + static_cast<std::size_t>(in) * input_dim + input_dim;
    }

    void validate() const {
        require(input_dim >= 1, "net: input_dim must be positive");
        require(!widths.empty(), "net: widths must be non-empty");
        for (int w : widths) require(w >= 1, "net: every width must be positive");
        require(n_freq >= 1, "net: n_freq must be positive");
    }

    bool operator==(const NetArch&) const = default;
};

/// Sinusoidal time features [sin(k w t) | cos(k w t)], k = 1..n_freq, with
/// the top frequency n_freq*w fixed at 100 rad per unit time. Harmonics are
/// generated by the angle-addition recurrence, one row per entry of t.
inline Tensor time_embedding(const Vector& t, int n_freq) {
    constexpr double kMaxFreq = 100.0;
    const double w = kMaxFreq / n_freq;
    const Eigen::ArrayXd s1 = (w * t.array()).sin(), c1 = (w * t.array()).cos();
    Eigen::MatrixXd out(t.size(), 2 * n_freq);
    Eigen::ArrayXd sk = s1, ck = c1;
    for (int k = 0; k < n_freq; ++k) {
        out.col(k) = sk.matrix();
        out.col(n_freq + k) = ck.matrix();
        const Eigen::ArrayXd next_s = sk * c1 + ck * s1;
        ck = ck * c1 - sk * s1;
        sk = next_s;
    }
    return Tensor(out);
}

class ScoreNet {
public:
    ScoreNet(NetArch arch, SdeSpec sde, std::vector<double> params)
        : arch_(std::move(arch)), sde_(sde), tape_(std::move(params)) {
        arch_.validate();
        require(tape_.size() == arch_.param_count(), "ScoreNet: parameter count does not match architecture");
    }

    /// LeCun-normal hidden layers (variance 1/fan_in), output layer scaled to
    /// variance 1e-4/fan_in so the initial prediction is close to zero. Zero biases.
    static ScoreNet init(std::uint64_t seed, const NetArch& arch, const SdeSpec& sde) {
        arch.validate();
        RngState rng(seed);
        std::vector<double> theta;
        theta.reserve(arch.param_count());
        int in = arch.input_dim + arch.embed_width();
        auto layer = [&](int fan_in, int fan_out, double scale) {
            const double sd = scale / std::sqrt(static_cast<double>(fan_in));
            for (int i = 0; i < fan_in * fan_out; ++i) theta.push_back(sd * rng.normal());
            theta.insert(theta.end(), fan_out, 0.0);
        };
        for (int w : arch.widths) {
            layer(in, w, 1.0);
            in = w;
        }
        layer(in, arch.input_dim, 1e-2);
        return ScoreNet(arch, sde, std::move(theta));
    }

    const NetArch& arch() const { return arch_; }
    const SdeSpec& sde() const { return sde_; }
    Eigen::Index dim() const { return arch_.input_dim; }
    std::span<const double> params() const { return tape_.params(); }
    std::span<double> params() { return tape_.params(); }
    ParamTape& tape() { return tape_; }

    /// s_theta(x, t) with one shared t. The time features then contribute a
    /// constant row to the first layer, folded into its bias.
    Tensor score(const Tensor& x, double t) const {
        constexpr Eigen::Index kBlock = 512;
        if (x.rows() <= kBlock) return score_block(x, t);
        Tensor out(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); r += kBlock) {
            const Eigen::Index n = std::min(kBlock, x.rows() - r);
            out.middleRows(r, n) = score_block(x.middleRows(r, n), t);
        }
        return out;
    }

    /// s_theta(x_i, t_i) row by row. Non-finite output is a hard failure.
    Tensor forward(const Tensor& x, const Vector& t) const {
        check_inputs(x, t);
        const int w0 = arch_.widths.front();
        const Tensor in = input_rows(x, t);
        const double* p = tape_.params().data();
        Eigen::Map<const Tensor> W(p, in.cols(), w0);
        Eigen::Map<const Eigen::RowVectorXd> b(p + W.size(), w0);
        Tensor z = in * W;
        z.rowwise() += b;
        return head(silu(z), p + W.size() + w0, t);
    }

    /// Same computation as forward(), recorded on the parameter tape.
    Var record(const Tensor& x, const Vector& t) {
        check_inputs(x, t);
        using namespace ops;
        Var h = tape_.constant(input_rows(x, t));
        std::size_t off = 0;
        Eigen::Index in = h.cols();
        for (int w : arch_.widths) {
            Var W = tape_.param(off, in, w);
            Var b = tape_.param(off + static_cast<std::size_t>(in * w), 1, w);
            h = silu(add_row(matmul(h, W), b));
            off += static_cast<std::size_t>(in * w + w);
            in = w;
        }
        Var W = tape_.param(off, in, arch_.input_dim);
        Var b = tape_.param(off + static_cast<std::size_t>(in * arch_.input_dim), 1, arch_.input_dim);
        return scale_rows(add_row(matmul(h, W), b), inv_std(t));
    }

    /// Input divergence per row; exact by 2d central differences.
    Vector divergence(const Tensor& x, double t) const { return divergence_exact(*this, x, t); }

    DivergenceEstimate divergence_hutchinson(const Eigen::RowVectorXd& x, double t, int probes,
                                             RngState& rng) const {
        return msgm::divergence_hutchinson(*this, x, t, probes, rng);
    }

private:
    Tensor score_block(const Tensor& x, double t) const {
        check_inputs(x, Vector::Constant(x.rows(), t));
        const int d = arch_.input_dim, w0 = arch_.widths.front();
        const double* p = tape_.params().data();
        Eigen::Map<const Tensor> W(p, d + arch_.embed_width(), w0);
        Eigen::Map<const Eigen::RowVectorXd> b(p + W.size(), w0);
        const Tensor emb = time_embedding(Vector::Constant(1, t), arch_.n_freq);
        const Eigen::RowVectorXd bias = emb * W.bottomRows(arch_.embed_width()) + b;
        Tensor z = x * W.topRows(d);
        z.rowwise() += bias;
        return head(silu(z), p + W.size() + w0, Vector::Constant(x.rows(), t));
    }

    /// Remaining layers after the first hidden activation `h`; `p` points at
    /// the second layer's weights.
    Tensor head(Tensor h, const double* p, const Vector& t) const {
        int in = arch_.widths.front();
        for (std::size_t l = 1; l < arch_.widths.size(); ++l) {
            const int w = arch_.widths[l];
            Eigen::Map<const Tensor> W(p, in, w);
            Eigen::Map<const Eigen::RowVectorXd> b(p + W.size(), w);
            Tensor z = h * W;
            z.rowwise() += b;
            h = silu(z);
            p += W.size() + w;
            in = w;
        }
        Eigen::Map<const Tensor> W(p, in, arch_.input_dim);
        Eigen::Map<const Eigen::RowVectorXd> b(p + W.size(), arch_.input_dim);
        Tensor out = h * W;
        out.rowwise() += b;
        out = inv_std(t).asDiagonal() * out;
        if (!all_finite(out)) throw NumericalError("ScoreNet::forward produced a non-finite output");
        return out;
    }

    void check_inputs(const Tensor& x, const Vector& t) const {
        require(x.cols() == arch_.input_dim, "ScoreNet: input has wrong dimension");
        require(t.size() == x.rows(), "ScoreNet: one time per row required");
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            if (!(t[i] >= sde_.t_eps * (1.0 - 1e-12) && t[i] <= sde_.T)) {
                throw ValidationError("ScoreNet: t=" + std::to_string(t[i]) + " outside [t_eps, T]");
            }
        }
    }

    Tensor input_rows(const Tensor& x, const Vector& t) const {
        Tensor in(x.rows(), arch_.input_dim + arch_.embed_width());
        in.leftCols(arch_.input_dim) = x;
        in.rightCols(arch_.embed_width()) = time_embedding(t, arch_.n_freq);
        return in;
    }

    Vector inv_std(const Vector& t) const {
        return t.unaryExpr([this](double ti) { return 1.0 / kernel_std(sde_, ti); });
    }

    NetArch arch_;
    SdeSpec sde_;
    ParamTape tape_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: "MSGM1" | u32 d | u32 n_hidden | u32 widths[n_hidden] |
// u32 n_freq | u64 n_params | f64 theta[n_params] | u64 crc
// All little-endian. The CRC is CRC-64/ECMA-182 over every preceding byte.

namespace checkpoint_detail {

using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0, 0, false, false>;

inline constexpr std::array<char, 5> kMagic{'M', 'S', 'G', 'M', '1'};

template <class U>
void put_le(std::vector<unsigned char>& buf, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <class U>
U get_le(const std::vector<unsigned char>& buf, std::size_t& pos) {
    if (pos + sizeof(U) > buf.size()) throw ValidationError("checkpoint: truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[pos + i]) << (8 * i);
    pos += sizeof(U);
    return v;
}

} // namespace checkpoint_detail

inline std::vector<unsigned char> encode_checkpoint(const ScoreNet& net) {
    using namespace checkpoint_detail;
    std::vector<unsigned char> buf(kMagic.begin(), kMagic.end());
    const NetArch& a = net.arch();
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(a.input_dim));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(a.widths.size()));
    for (int w : a.widths) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(a.n_freq));
    put_le<std::uint64_t>(buf, net.params().size());
    for (double v : net.params()) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
    Crc64 crc;
    crc.process_bytes(buf.data(), buf.size());
    put_le<std::uint64_t>(buf, crc.checksum());
    return buf;
}

inline ScoreNet decode_checkpoint(const std::vector<unsigned char>& buf, const SdeSpec& sde) {
    using namespace checkpoint_detail;
    if (buf.size() < kMagic.size() + 8 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
        throw ValidationError("checkpoint: bad magic");
    }
    Crc64 crc;
    crc.process_bytes(buf.data(), buf.size() - 8);
    std::size_t tail = buf.size() - 8;
    if (get_le<std::uint64_t>(buf, tail) != crc.checksum()) throw ValidationError("checkpoint: CRC mismatch");

    std::size_t pos = kMagic.size();
    NetArch a;
    a.input_dim = static_cast<int>(get_le<std::uint32_t>(buf, pos));
    const auto n_hidden = get_le<std::uint32_t>(buf, pos);
    if (n_hidden > 64) throw ValidationError("checkpoint: implausible layer count");
    a.widths.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i) a.widths.push_back(static_cast<int>(get_le<std::uint32_t>(buf, pos)));
    a.n_freq = static_cast<int>(get_le<std::uint32_t>(buf, pos));
    a.validate();
    const auto n = get_le<std::uint64_t>(buf, pos);
    if (n != a.param_count() || pos + n * 8 + 8 != buf.size()) {
        throw ValidationError("checkpoint: parameter block does not match header");
    }
    std::vector<double> theta(n);
    for (auto& v : theta) v = std::bit_cast<double>(get_le<std::uint64_t>(buf, pos));
    return ScoreNet(a, sde, std::move(theta));
}

inline void save_checkpoint(const ScoreNet& net, const std::filesystem::path& path) {
    const auto buf = encode_checkpoint(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline ScoreNet load_checkpoint(const std::filesystem::path& path, const SdeSpec& sde) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf, sde);
}

} // namespace msgm
