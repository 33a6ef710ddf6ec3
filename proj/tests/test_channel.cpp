#include "doctest.h"
#include "gradcheck.hpp"

#include <cmath>

#include "udsc/channel.hpp"
#include "udsc/error.hpp"

using namespace udsc;
using namespace udsc::channel;

TEST_CASE("sigma^2 follows 10^(-snr/10) exactly") {
    for (double snr : {-6.0, 0.0, 10.0, 18.0}) CHECK(snr_to_sigma2(snr) == std::pow(10.0, -snr / 10.0));
    CHECK(snr_to_sigma2(0.0) == 1.0);
}

TEST_CASE("AWGN noise power and covariance at 0 dB over 1e6 symbols") {
    const Eigen::Index n = 1'000'000;
    ComplexVector x = ComplexVector::Zero(n);
    Rng rng(11);
    ChannelConfig cfg;
    cfg.snr_db = 0.0;
    const ReceivedSignal rx = transmit(x, cfg, rng);
    double power = 0, rr = 0, ii = 0, ri = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Complex e = rx.y(i) - x(i);
        power += std::norm(e);
        rr += e.real() * e.real();
        ii += e.imag() * e.imag();
        ri += e.real() * e.imag();
    }
    power /= n;
    rr /= n;
    ii /= n;
    ri /= n;
    CHECK(std::abs(power - 1.0) < 0.01);
    // Real/imag covariance is sigma^2/2 I.
    CHECK(std::abs(rr - 0.5) < 0.05 * 0.5);
    CHECK(std::abs(ii - 0.5) < 0.05 * 0.5);
    CHECK(std::abs(ri) < 0.05 * 0.5);
}

TEST_CASE("noise power tracks the SNR table") {
    for (double snr : {-6.0, 10.0, 18.0}) {
        const Eigen::Index n = 200'000;
        ComplexVector x = ComplexVector::Zero(n);
        Rng rng(static_cast<std::uint64_t>(snr + 100));
        ChannelConfig cfg;
        cfg.snr_db = snr;
        const ReceivedSignal rx = transmit(x, cfg, rng);
        CHECK(rx.y.squaredNorm() / n == doctest::Approx(snr_to_sigma2(snr)).epsilon(0.02));
    }
}

TEST_CASE("power normalisation gives unit mean power and passes zeros through") {
    ComplexVector x(4);
    x << Complex(3, 0), Complex(0, 4), Complex(1, 1), Complex(-2, 0.5);
    const Normalized n = power_normalize(x);
    CHECK_FALSE(n.degenerate);
    CHECK(mean_power(n.symbols) == doctest::Approx(1.0).epsilon(1e-12));
    const Normalized z = power_normalize(ComplexVector::Zero(3));
    CHECK(z.degenerate);
    CHECK(z.symbols.norm() == 0.0);
}

TEST_CASE("Rayleigh MIMO with zero forcing recovers the symbols at high SNR") {
    Rng rng(3);
    ComplexVector x(7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = Complex(std::cos(i), std::sin(2.0 * i));
    ChannelConfig cfg;
    cfg.mode = Mode::rayleigh;
    cfg.n_t = cfg.n_r = 2;
    cfg.snr_db = 120.0;
    const ReceivedSignal rx = transmit(x, cfg, rng);
    CHECK(rx.y.size() == 8);  // padded to whole blocks
    const ComplexVector eq = equalize(rx);
    REQUIRE(eq.size() == x.size());
    CHECK((eq - x).norm() < 1e-4);
}

TEST_CASE("AWGN equalisation is the identity") {
    Rng rng(4);
    ComplexVector x = ComplexVector::Constant(5, Complex(1, -1));
    ChannelConfig cfg;
    cfg.snr_db = 10.0;
    const ReceivedSignal rx = transmit(x, cfg, rng);
    CHECK((equalize(rx) - rx.y).norm() == 0.0);
}

TEST_CASE("channel config validation") {
    ChannelConfig cfg;
    cfg.n_t = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.n_t = 2;
    cfg.n_r = 1;
    cfg.mode = Mode::rayleigh;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.snr_db = std::nan("");
    cfg.n_r = 2;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("transmit_rows backward is the adjoint of the realised linear map") {
    using namespace udsc::ad;
    Parameter x = testing::make_param(4, 6, 21);
    ChannelConfig cfg;
    cfg.mode = Mode::rayleigh;
    cfg.n_t = cfg.n_r = 2;
    cfg.snr_db = 5.0;
    // Re-seeding per evaluation keeps the realised channel fixed.
    const double err = testing::gradient_error({&x}, [&](Tape& t, auto& v) {
        Rng rng(77);
        Var y = transmit_rows(v[0], 2, cfg, rng);
        Parameter w = testing::make_param(4, 6, 5);
        return sum(mul(y, t.constant(w.value)));
    });
    CHECK(err < 1e-6);
}
