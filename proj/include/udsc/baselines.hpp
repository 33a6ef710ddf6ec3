#pragma once

// Conventional separate source/channel coding over the same channel:
// JPEG or UTF-8 source coding, a rate-1/2 K=7 convolutional code with soft
// Viterbi decoding, and BPSK.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udsc/channel.hpp"
#include "udsc/datasets.hpp"
#include "udsc/objectives.hpp"

namespace udsc::baselines {

using Rng = std::mt19937_64;

inline constexpr const char* kCodecDeviation =
    "rate-1/2 K=7 (171,133) convolutional code with soft Viterbi in place of LDPC/Turbo";

struct BitStream {
    std::vector<std::uint8_t> bits;  // one bit per element
    std::string source;              // "jpeg" or "utf8"
    std::size_t payload_bits = 0;
};

struct CodecConfig {
    int jpeg_quality = 75;
    double rate = 0.5;
    int constraint_length = 7;
    std::string modulation = "bpsk";

    void validate() const;
};

std::vector<std::uint8_t> bytes_to_bits(std::span<const std::uint8_t> bytes);
// Drops a trailing partial byte.
std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits);

// Pixels are quantised to 8 bits before encoding.
BitStream jpeg_encode(const datasets::Image& image, int quality = 75);
// Throws corrupted_stream on any fatal or corrupt-data condition.
datasets::Image jpeg_decode(const BitStream& stream);

BitStream utf8_encode(const std::string& text);
// Invalid sequences decode to U+FFFD.
std::string utf8_decode(const BitStream& stream);

// Zero-tailed: output length 2 * (n + K - 1).
std::vector<std::uint8_t> conv_encode(std::span<const std::uint8_t> bits, const CodecConfig& cfg = {});
// Soft values: positive favours bit 0. Returns the maximum-likelihood payload.
std::vector<std::uint8_t> viterbi_decode(std::span<const double> soft, const CodecConfig& cfg = {});

// 0 -> +1, 1 -> -1 on the real axis.
channel::ComplexVector bpsk_modulate(std::span<const std::uint8_t> bits);
// 2 Re(y) / sigma^2 of the equalised samples.
std::vector<double> bpsk_demodulate_soft(const channel::ReceivedSignal& rx);

struct ImageResult {
    datasets::Image image;
    bool decode_failed = false;
    double psnr_db = 0.0;
    std::size_t coded_bits = 0;
};

struct TextResult {
    std::string text;
    double bleu = 0.0;
    std::size_t coded_bits = 0;
};

ImageResult conventional_image_pipeline(const datasets::Image& image, const channel::ChannelConfig& channel,
                                        const CodecConfig& cfg, Rng& rng);
TextResult conventional_text_pipeline(const std::string& text, const channel::ChannelConfig& channel,
                                      const CodecConfig& cfg, Rng& rng);

// JPEG round trip without a channel.
double jpeg_psnr(const datasets::Image& image, int quality);

struct BaselineReport {
    objectives::MetricReport metric;
    int failures = 0;
    int trials = 0;
    double mean_symbols = 0.0;  // BPSK symbols per sample
    std::string codec_deviation = kCodecDeviation;
};

struct SweepOptions {
    std::vector<double> snr_grid{-6, -3, 0, 3, 6, 9, 12, 15, 18};
    channel::Mode mode = channel::Mode::awgn;
    int seeds = 3;
    std::uint64_t seed = 2000;
    int max_samples = 0;
};

// Image-reconstruction or text-reconstruction test sets; one report per SNR.
std::vector<BaselineReport> evaluate_conventional(const datasets::Dataset& test, const CodecConfig& cfg,
                                                  const SweepOptions& options);

} // namespace udsc::baselines
