#pragma once

// Simulated wireless channel Y = Hx + n with complex AWGN and optional
// Rayleigh block fading equalised by zero forcing.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>

#include "udsc/autodiff.hpp"

namespace udsc::channel {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using Rng = std::mt19937_64;

enum class Mode { awgn, rayleigh };

struct ChannelConfig {
    double snr_db = 0.0;
    int n_t = 1;
    int n_r = 1;
    Mode mode = Mode::awgn;
    std::uint64_t seed = 7;

    void validate() const;
};

struct ReceivedSignal {
    ComplexVector y;      // n_blocks * n_r received samples
    ComplexMatrix h;      // identity in awgn mode
    double sigma2 = 0.0;
    Mode mode = Mode::awgn;
    Eigen::Index symbols = 0;  // transmitted symbol count before block padding
};

struct Normalized {
    ComplexVector symbols;
    bool degenerate = false;  // all-zero input, passed through
};

// sigma^2 = 10^(-snr_db/10) for unit-power signals.
double snr_to_sigma2(double snr_db);

Normalized power_normalize(const ComplexVector& x);
double mean_power(const ComplexVector& x);

// The symbol stream is time-multiplexed over n_t antennas; a fresh H is
// drawn per call in rayleigh mode.
ReceivedSignal transmit(const ComplexVector& x, const ChannelConfig& cfg, Rng& rng);

// Zero-forcing H^{-1} Y with perfect CSI, truncated to the transmitted length.
ComplexVector equalize(const ReceivedSignal& rx);

// Differentiable transmit + equalize for the model graph. Each group of
// `rows_per_block` rows is one transmission whose reals pair up as complex
// symbols. Noise is a constant of the graph; the backward pass applies the
// adjoint of the realised linear map H^{-1}H.
ad::Var transmit_rows(ad::Var x, int rows_per_block, const ChannelConfig& cfg, Rng& rng);

} // namespace udsc::channel
