#include "doctest.h"

#include <random>

#include "udsc/baselines.hpp"
#include "udsc/error.hpp"

using namespace udsc;
using namespace udsc::baselines;

namespace {
std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng() & 1);
    return b;
}

// Shift-register encoder written out from the generator taps as an
// independent oracle.
std::vector<std::uint8_t> reference_encode(const std::vector<std::uint8_t>& bits) {
    const int g0[7] = {1, 1, 1, 1, 0, 0, 1};  // 171 octal, current input first
    const int g1[7] = {1, 0, 1, 1, 0, 1, 1};  // 133 octal
    std::vector<int> reg(7, 0);
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> padded = bits;
    padded.insert(padded.end(), 6, 0);
    for (std::uint8_t b : padded) {
        for (int i = 6; i > 0; --i) reg[i] = reg[i - 1];
        reg[0] = b;
        int o0 = 0, o1 = 0;
        for (int i = 0; i < 7; ++i) {
            o0 ^= g0[i] & reg[i];
            o1 ^= g1[i] & reg[i];
        }
        out.push_back(static_cast<std::uint8_t>(o0));
        out.push_back(static_cast<std::uint8_t>(o1));
    }
    return out;
}

datasets::Dataset images(int n) { return datasets::make_shape_images(TaskId::image_recon, Split::test, n, 5, 32); }
} // namespace

TEST_CASE("convolutional encoder matches the shift-register oracle") {
    const auto bits = random_bits(300, 1);
    CHECK(conv_encode(bits) == reference_encode(bits));
    CHECK(conv_encode(bits).size() == 2 * (300 + 6));
}

TEST_CASE("convolutional code is linear and maps zeros to zeros") {
    const auto a = random_bits(200, 2), b = random_bits(200, 3);
    std::vector<std::uint8_t> x(200);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = a[i] ^ b[i];
    const auto ca = conv_encode(a), cb = conv_encode(b), cx = conv_encode(x);
    for (std::size_t i = 0; i < cx.size(); ++i) CHECK(cx[i] == (ca[i] ^ cb[i]));
    const auto zeros = conv_encode(std::vector<std::uint8_t>(64, 0));
    CHECK(std::all_of(zeros.begin(), zeros.end(), [](auto v) { return v == 0; }));
}

TEST_CASE("noiseless Viterbi decoding recovers any payload") {
    for (std::size_t n : {0u, 1u, 7u, 1000u}) {
        const auto bits = random_bits(n, 4 + n);
        const auto coded = conv_encode(bits);
        std::vector<double> soft(coded.size());
        for (std::size_t i = 0; i < coded.size(); ++i) soft[i] = coded[i] ? -1.0 : 1.0;
        CHECK(viterbi_decode(soft) == bits);
    }
    CHECK_THROWS_AS(viterbi_decode(std::vector<double>(13, 1.0)), Error);
}

TEST_CASE("soft Viterbi reaches BER below 1e-4 at Eb/N0 = 5 dB") {
    const std::size_t n = 1'000'000;
    const auto bits = random_bits(n, 9);
    channel::ChannelConfig ch;
    ch.snr_db = 5.0 + 10.0 * std::log10(0.5);
    std::mt19937_64 rng(10);
    const auto rx = channel::transmit(bpsk_modulate(conv_encode(bits)), ch, rng);
    const auto decoded = viterbi_decode(bpsk_demodulate_soft(rx));
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) errors += decoded[i] != bits[i];
    MESSAGE("post-decoding BER " << static_cast<double>(errors) / n);
    CHECK(static_cast<double>(errors) / n < 1e-4);
}

TEST_CASE("BPSK mapping and soft values") {
    const std::vector<std::uint8_t> bits{0, 1};
    const auto x = bpsk_modulate(bits);
    CHECK(x[0] == std::complex<double>(1, 0));
    CHECK(x[1] == std::complex<double>(-1, 0));
    channel::ReceivedSignal rx;
    rx.y = x;
    rx.h = channel::ComplexMatrix::Identity(1, 1);
    rx.sigma2 = 0.5;
    rx.symbols = 2;
    const auto soft = bpsk_demodulate_soft(rx);
    CHECK(soft[0] == doctest::Approx(4.0));
    CHECK(soft[1] == doctest::Approx(-4.0));
}

TEST_CASE("UTF-8 round trip and replacement policy") {
    const std::string ascii = "the house adjourned at noon";
    const BitStream s = utf8_encode(ascii);
    CHECK(s.bits.size() == 8 * ascii.size());
    CHECK(utf8_decode(s) == ascii);
    const std::string multi = "caf\xC3\xA9";
    BitStream m = utf8_encode(multi);
    CHECK(utf8_decode(m) == multi);
    m.bits[3 * 8 + 0] ^= 1;  // lead byte 0xC3 becomes 0x43 'C'; 0xA9 is now a stray continuation
    CHECK(utf8_decode(m).find("\xEF\xBF\xBD") != std::string::npos);
}

TEST_CASE("JPEG round trip quality and determinism") {
    const auto ds = images(200);
    double mean = 0.0;
    for (const auto& s : ds.samples) mean += jpeg_psnr(*s.image, 90);
    mean /= ds.size();
    MESSAGE("mean PSNR at quality 90: " << mean);
    CHECK(mean >= 29.5);
    CHECK(jpeg_psnr(*ds.samples[0].image, 90) > jpeg_psnr(*ds.samples[0].image, 50));
    const auto a = jpeg_encode(*ds.samples[0].image, 75), b = jpeg_encode(*ds.samples[0].image, 75);
    CHECK(a.bits == b.bits);
    CHECK(jpeg_decode(a) == jpeg_decode(b));
}

TEST_CASE("truncated JPEG stream is a corrupted-stream error and the pipeline falls back to gray") {
    const auto ds = images(1);
    BitStream s = jpeg_encode(*ds.samples[0].image, 75);
    s.bits.resize(s.bits.size() / 3);
    try {
        (void)jpeg_decode(s);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::corrupted_stream);
    }
    channel::ChannelConfig ch;
    ch.snr_db = -20;
    std::mt19937_64 rng(1);
    const ImageResult r = conventional_image_pipeline(*ds.samples[0].image, ch, {}, rng);
    CHECK(r.decode_failed);
    CHECK(std::all_of(r.image.pixels.begin(), r.image.pixels.end(), [](float v) { return v == 0.5f; }));
}

TEST_CASE("conventional pipelines across SNR") {
    const auto ds = images(30);
    CodecConfig cfg;
    SweepOptions opt;
    opt.snr_grid = {-6, 18};
    opt.seeds = 1;
    const auto reports = evaluate_conventional(ds, cfg, opt);
    double clean = 0;
    for (const auto& s : ds.samples) clean += jpeg_psnr(*s.image, cfg.jpeg_quality);
    clean /= ds.size();
    CHECK(reports[1].metric.value == doctest::Approx(clean).epsilon(1e-9));
    CHECK(static_cast<double>(reports[0].failures) / reports[0].trials > 0.5);
    CHECK(reports[0].metric.value < reports[1].metric.value);
    CHECK(reports[0].codec_deviation == std::string(kCodecDeviation));

    const auto text = datasets::make_parliament_sentences(Split::test, 40, 3);
    const auto treps = evaluate_conventional(text, cfg, opt);
    CHECK(treps[0].metric.value < 0.5);
    CHECK(treps[1].metric.value == doctest::Approx(1.0));
    CHECK_THROWS_AS(evaluate_conventional(datasets::make_sentiment(Split::test, 5, 1), cfg, opt), Error);
}

TEST_CASE("codec config validation") {
    CodecConfig c;
    c.rate = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c.rate = 1.0 / 3;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.jpeg_quality = 0;
    CHECK_THROWS_AS(c.validate(), Error);
}
