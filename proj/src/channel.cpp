#include "udsc/channel.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "udsc/error.hpp"

namespace udsc::channel {

void ChannelConfig::validate() const {
    if (!std::isfinite(snr_db)) throw Error(ErrorCode::config_invalid, "channel.snr_db must be finite");
    if (n_t < 1 || n_r < 1) throw Error(ErrorCode::config_invalid, "antenna counts must be >= 1");
    if (mode == Mode::rayleigh && n_t != n_r)
        throw Error(ErrorCode::config_invalid, "rayleigh mode requires n_t == n_r for zero forcing");
}

double snr_to_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

double mean_power(const ComplexVector& x) {
    if (x.size() == 0) return 0.0;
    return x.squaredNorm() / static_cast<double>(x.size());
}

Normalized power_normalize(const ComplexVector& x) {
    const double p = mean_power(x);
    if (p == 0.0) return {x, true};
    return {x / std::sqrt(p), false};
}

namespace {

ComplexMatrix draw_rayleigh(int n, Rng& rng) {
    std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
    for (;;) {
        ComplexMatrix h(n, n);
        for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = Complex(nd(rng), nd(rng));
        if (std::abs(h.determinant()) > 1e-12) return h;
    }
}

} // namespace

ReceivedSignal transmit(const ComplexVector& x, const ChannelConfig& cfg, Rng& rng) {
    cfg.validate();
    ReceivedSignal rx;
    rx.sigma2 = snr_to_sigma2(cfg.snr_db);
    rx.mode = cfg.mode;
    rx.symbols = x.size();
    std::normal_distribution<double> noise(0.0, std::sqrt(rx.sigma2 / 2.0));

    if (cfg.mode == Mode::awgn) {
        rx.h = ComplexMatrix::Identity(1, 1);
        rx.y.resize(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double re = noise(rng);
            const double im = noise(rng);
            rx.y(i) = x(i) + Complex(re, im);
        }
        return rx;
    }

    const int n = cfg.n_t;
    const Eigen::Index blocks = (x.size() + n - 1) / n;
    rx.h = draw_rayleigh(n, rng);
    rx.y.resize(blocks * n);
    ComplexVector block(n);
    for (Eigen::Index b = 0; b < blocks; ++b) {
        for (int j = 0; j < n; ++j) {
            const Eigen::Index i = b * n + j;
            block(j) = i < x.size() ? x(i) : Complex(0.0, 0.0);
        }
        ComplexVector yb = rx.h * block;
        for (int j = 0; j < n; ++j) {
            const double re = noise(rng);
            const double im = noise(rng);
            yb(j) += Complex(re, im);
        }
        rx.y.segment(b * n, n) = yb;
    }
    return rx;
}

ComplexVector equalize(const ReceivedSignal& rx) {
    if (rx.mode == Mode::awgn) return rx.y.head(rx.symbols);
    const Eigen::Index n = rx.h.rows();
    if (rx.h.cols() != n)
        throw Error(ErrorCode::dimension_mismatch, "zero forcing needs a square channel matrix");
    if (std::abs(rx.h.determinant()) <= 1e-12)
        throw Error(ErrorCode::invalid_argument, "singular channel matrix");
    Eigen::PartialPivLU<ComplexMatrix> lu(rx.h);
    ComplexVector out(rx.y.size());
    for (Eigen::Index b = 0; b < rx.y.size() / n; ++b) out.segment(b * n, n) = lu.solve(rx.y.segment(b * n, n));
    return out.head(rx.symbols);
}

ad::Var transmit_rows(ad::Var x, int rows_per_block, const ChannelConfig& cfg, Rng& rng) {
    const ad::Matrix& v = x.value();
    if (rows_per_block <= 0 || v.rows() % rows_per_block != 0 || v.cols() % 2 != 0)
        throw Error(ErrorCode::dimension_mismatch, "transmit_rows: bad block layout");
    const Eigen::Index blocks = v.rows() / rows_per_block;
    const Eigen::Index half = v.cols() / 2;
    const Eigen::Index n_sym = rows_per_block * half;

    // Effective per-block linear maps H^{-1}H (identity for awgn).
    auto maps = std::make_shared<std::vector<ComplexMatrix>>();
    ad::Matrix out(v.rows(), v.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
        ComplexVector sym(n_sym);
        for (Eigen::Index r = 0; r < rows_per_block; ++r)
            for (Eigen::Index j = 0; j < half; ++j)
                sym(r * half + j) = Complex(v(b * rows_per_block + r, 2 * j), v(b * rows_per_block + r, 2 * j + 1));
        ReceivedSignal rx = transmit(sym, cfg, rng);
        ComplexVector eq = equalize(rx);
        if (cfg.mode == Mode::rayleigh) maps->push_back(rx.h.partialPivLu().solve(rx.h));
        for (Eigen::Index r = 0; r < rows_per_block; ++r)
            for (Eigen::Index j = 0; j < half; ++j) {
                out(b * rows_per_block + r, 2 * j) = eq(r * half + j).real();
                out(b * rows_per_block + r, 2 * j + 1) = eq(r * half + j).imag();
            }
    }
    const bool fading = cfg.mode == Mode::rayleigh;
    return x.tape->push(std::move(out), {x},
                        [x, maps, fading, rows_per_block, half, n_sym](ad::Tape& t, const ad::Matrix& g,
                                                                      const ad::Matrix&) {
                            if (!fading) {
                                t.accumulate(x, g);
                                return;
                            }
                            ad::Matrix gx(g.rows(), g.cols());
                            for (std::size_t b = 0; b < maps->size(); ++b) {
                                const ComplexMatrix& a = (*maps)[b];
                                const Eigen::Index n = a.rows();
                                const Eigen::Index base = static_cast<Eigen::Index>(b) * rows_per_block;
                                ComplexVector gs = ComplexVector::Zero(((n_sym + n - 1) / n) * n);
                                for (Eigen::Index r = 0; r < rows_per_block; ++r)
                                    for (Eigen::Index j = 0; j < half; ++j)
                                        gs(r * half + j) = Complex(g(base + r, 2 * j), g(base + r, 2 * j + 1));
                                for (Eigen::Index k = 0; k < gs.size() / n; ++k)
                                    gs.segment(k * n, n) = a.adjoint() * gs.segment(k * n, n).eval();
                                for (Eigen::Index r = 0; r < rows_per_block; ++r)
                                    for (Eigen::Index j = 0; j < half; ++j) {
                                        gx(base + r, 2 * j) = gs(r * half + j).real();
                                        gx(base + r, 2 * j + 1) = gs(r * half + j).imag();
                                    }
                            }
                            t.accumulate(x, gx);
                        });
}

} // namespace udsc::channel
