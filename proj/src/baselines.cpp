#include "udsc/baselines.hpp"

#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>

#include <jpeglib.h>

#include "udsc/error.hpp"

namespace udsc::baselines {

namespace {

constexpr int kGenerator0 = 0171;
constexpr int kGenerator1 = 0133;
constexpr int kMemory = 6;
constexpr int kStates = 1 << kMemory;

int parity(int x) { return __builtin_parity(static_cast<unsigned>(x)); }

// Output pair for shifting `bit` into `state` (state holds the previous six
// inputs, most recent in the high bit).
std::array<std::uint8_t, 2> branch_output(int state, int bit) {
    const int reg = (bit << kMemory) | state;
    return {static_cast<std::uint8_t>(parity(reg & kGenerator0)), static_cast<std::uint8_t>(parity(reg & kGenerator1))};
}

int next_state(int state, int bit) { return (bit << (kMemory - 1)) | (state >> 1); }

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    bool corrupt = false;
};

void on_fatal(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

void on_message(j_common_ptr cinfo, int level) {
    if (level < 0) reinterpret_cast<JpegErrorManager*>(cinfo->err)->corrupt = true;
}

void silent_output(j_common_ptr) {}

datasets::Image gray_like(const datasets::Image& ref) {
    datasets::Image g = ref;
    std::fill(g.pixels.begin(), g.pixels.end(), 0.5f);
    return g;
}

double image_psnr(const datasets::Image& a, const datasets::Image& b) {
    std::vector<double> x(a.pixels.begin(), a.pixels.end()), y(b.pixels.begin(), b.pixels.end());
    return objectives::psnr(x, y, 1.0);
}

std::vector<std::uint8_t> through_channel(std::span<const std::uint8_t> payload, const channel::ChannelConfig& ch,
                                          const CodecConfig& cfg, Rng& rng, std::size_t* coded_bits) {
    const std::vector<std::uint8_t> coded = conv_encode(payload, cfg);
    *coded_bits = coded.size();
    const channel::ReceivedSignal rx = channel::transmit(bpsk_modulate(coded), ch, rng);
    return viterbi_decode(bpsk_demodulate_soft(rx), cfg);
}

} // namespace

void CodecConfig::validate() const {
    if (jpeg_quality < 1 || jpeg_quality > 100) throw Error(ErrorCode::config_invalid, "baseline.jpeg_quality must be in [1, 100]");
    if (!(rate > 0.0 && rate <= 1.0)) throw Error(ErrorCode::config_invalid, "baseline.rate must be in (0, 1]");
    if (rate != 0.5 || constraint_length != 7)
        throw Error(ErrorCode::config_invalid, "only the rate-1/2, constraint-length-7 code is implemented");
    if (modulation != "bpsk") throw Error(ErrorCode::config_invalid, "baseline.modulation must be bpsk");
}

std::vector<std::uint8_t> bytes_to_bits(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint8_t> bits;
    bits.reserve(bytes.size() * 8);
    for (std::uint8_t b : bytes)
        for (int i = 7; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((b >> i) & 1));
    return bits;
}

std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits) {
    std::vector<std::uint8_t> bytes(bits.size() / 8, 0);
    for (std::size_t i = 0; i < bytes.size() * 8; ++i)
        bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] | ((bits[i] & 1) << (7 - i % 8)));
    return bytes;
}

BitStream jpeg_encode(const datasets::Image& image, int quality) {
    if (image.channels != 1 && image.channels != 3)
        throw Error(ErrorCode::invalid_argument, "jpeg_encode: 1 or 3 channels required");
    if (quality < 1 || quality > 100) throw Error(ErrorCode::invalid_argument, "jpeg_encode: quality outside [1, 100]");
    std::vector<unsigned char> pixels(image.pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));

    jpeg_compress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = on_fatal;
    err.base.output_message = silent_output;
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw Error(ErrorCode::io, "jpeg_encode failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(image.width);
    cinfo.image_height = static_cast<JDIMENSION>(image.height);
    cinfo.input_components = image.channels;
    cinfo.in_color_space = image.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const int stride = image.width * image.channels;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * stride;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<std::uint8_t> bytes(buffer, buffer + size);
    std::free(buffer);
    BitStream out;
    out.bits = bytes_to_bits(bytes);
    out.source = "jpeg";
    out.payload_bits = out.bits.size();
    return out;
}

datasets::Image jpeg_decode(const BitStream& stream) {
    const std::vector<std::uint8_t> bytes = bits_to_bytes(stream.bits);
    if (bytes.empty()) throw Error(ErrorCode::corrupted_stream, "jpeg_decode: empty stream");
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = on_fatal;
    err.base.emit_message = on_message;
    err.base.output_message = silent_output;
    datasets::Image image;
    std::vector<unsigned char> raw;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(ErrorCode::corrupted_stream, "jpeg_decode: invalid stream");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.image_width == 0 || cinfo.image_height == 0 || cinfo.image_width > 4096 || cinfo.image_height > 4096) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(ErrorCode::corrupted_stream, "jpeg_decode: implausible dimensions");
    }
    jpeg_start_decompress(&cinfo);
    image.width = static_cast<int>(cinfo.output_width);
    image.height = static_cast<int>(cinfo.output_height);
    image.channels = cinfo.output_components;
    raw.resize(static_cast<std::size_t>(image.width) * image.height * image.channels);
    const int stride = image.width * image.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    if (err.corrupt) throw Error(ErrorCode::corrupted_stream, "jpeg_decode: corrupt data");
    image.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) image.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    return image;
}

BitStream utf8_encode(const std::string& text) {
    BitStream out;
    out.bits = bytes_to_bits(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    out.source = "utf8";
    out.payload_bits = out.bits.size();
    return out;
}

std::string utf8_decode(const BitStream& stream) {
    static const std::string kReplacement = "\xEF\xBF\xBD";
    const std::vector<std::uint8_t> b = bits_to_bytes(stream.bits);
    std::string out;
    std::size_t i = 0;
    while (i < b.size()) {
        const std::uint8_t c = b[i];
        int len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            out += kReplacement;
            ++i;
            continue;
        }
        bool ok = i + static_cast<std::size_t>(len) <= b.size();
        for (int k = 1; ok && k < len; ++k) {
            const std::uint8_t cc = b[i + static_cast<std::size_t>(k)];
            if ((cc & 0xC0) != 0x80) ok = false;
            else cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::array<std::uint32_t, 5> kMin{0, 0, 0x80, 0x800, 0x10000};
        if (ok && (cp < kMin[static_cast<std::size_t>(len)] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
        if (!ok) {
            out += kReplacement;
            ++i;
            continue;
        }
        out.append(reinterpret_cast<const char*>(&b[i]), static_cast<std::size_t>(len));
        i += static_cast<std::size_t>(len);
    }
    return out;
}

std::vector<std::uint8_t> conv_encode(std::span<const std::uint8_t> bits, const CodecConfig& cfg) {
    cfg.validate();
    std::vector<std::uint8_t> out;
    out.reserve(2 * (bits.size() + kMemory));
    int state = 0;
    auto push = [&](int bit) {
        const auto o = branch_output(state, bit);
        out.push_back(o[0]);
        out.push_back(o[1]);
        state = next_state(state, bit);
    };
    for (std::uint8_t b : bits) {
        if (b > 1) throw Error(ErrorCode::invalid_argument, "conv_encode: bits must be 0 or 1");
        push(b);
    }
    for (int i = 0; i < kMemory; ++i) push(0);
    return out;
}

std::vector<std::uint8_t> viterbi_decode(std::span<const double> soft, const CodecConfig& cfg) {
    cfg.validate();
    if (soft.size() % 2 != 0 || soft.size() < 2 * kMemory)
        throw Error(ErrorCode::dimension_mismatch, "viterbi_decode: expected 2 * (payload + 6) soft values");
    const std::size_t steps = soft.size() / 2;
    const std::size_t payload = steps - kMemory;

    // Branch table: for each state and input, the next state and the output
    // pair expressed as correlation signs.
    std::array<std::array<int, 2>, kStates> next{};
    std::array<std::array<std::array<double, 2>, 2>, kStates> sign{};
    for (int s = 0; s < kStates; ++s)
        for (int b = 0; b < 2; ++b) {
            next[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)] = next_state(s, b);
            const auto o = branch_output(s, b);
            sign[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)] = {o[0] ? -1.0 : 1.0, o[1] ? -1.0 : 1.0};
        }

    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    std::array<double, kStates> metric;
    metric.fill(kNegInf);
    metric[0] = 0.0;
    // The input bit of a branch is the top bit of the state it enters, so
    // traceback only needs the low bit of each survivor's predecessor.
    std::vector<std::uint64_t> survivor_low(steps, 0);
    for (std::size_t t = 0; t < steps; ++t) {
        const double y0 = soft[2 * t], y1 = soft[2 * t + 1];
        std::array<double, kStates> fresh;
        fresh.fill(kNegInf);
        std::uint64_t low = 0;
        const int max_bit = t >= payload ? 0 : 1;
        for (int s = 0; s < kStates; ++s) {
            if (metric[static_cast<std::size_t>(s)] == kNegInf) continue;
            for (int b = 0; b <= max_bit; ++b) {
                const auto& sg = sign[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
                const double m = metric[static_cast<std::size_t>(s)] + sg[0] * y0 + sg[1] * y1;
                const int ns = next[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
                if (m > fresh[static_cast<std::size_t>(ns)]) {
                    fresh[static_cast<std::size_t>(ns)] = m;
                    if (s & 1) low |= std::uint64_t{1} << ns;
                    else low &= ~(std::uint64_t{1} << ns);
                }
            }
        }
        metric = fresh;
        survivor_low[t] = low;
    }
    std::vector<std::uint8_t> bits(steps);
    int state = 0;
    for (std::size_t t = steps; t-- > 0;) {
        bits[t] = static_cast<std::uint8_t>((state >> (kMemory - 1)) & 1);
        state = ((state << 1) & (kStates - 1)) | static_cast<int>((survivor_low[t] >> state) & 1);
    }
    bits.resize(payload);
    return bits;
}

channel::ComplexVector bpsk_modulate(std::span<const std::uint8_t> bits) {
    channel::ComplexVector x(static_cast<Eigen::Index>(bits.size()));
    for (std::size_t i = 0; i < bits.size(); ++i) x[static_cast<Eigen::Index>(i)] = bits[i] ? -1.0 : 1.0;
    return x;
}

std::vector<double> bpsk_demodulate_soft(const channel::ReceivedSignal& rx) {
    const channel::ComplexVector y = channel::equalize(rx);
    const double scale = rx.sigma2 > 0.0 ? 2.0 / rx.sigma2 : 1.0;
    std::vector<double> soft(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) soft[static_cast<std::size_t>(i)] = scale * y[i].real();
    return soft;
}

ImageResult conventional_image_pipeline(const datasets::Image& image, const channel::ChannelConfig& channel,
                                        const CodecConfig& cfg, Rng& rng) {
    const BitStream source = jpeg_encode(image, cfg.jpeg_quality);
    ImageResult result;
    BitStream received;
    received.source = "jpeg";
    received.bits = through_channel(source.bits, channel, cfg, rng, &result.coded_bits);
    received.payload_bits = received.bits.size();
    try {
        result.image = jpeg_decode(received);
        if (result.image.width != image.width || result.image.height != image.height ||
            result.image.channels != image.channels)
            throw Error(ErrorCode::corrupted_stream, "decoded dimensions differ");
    } catch (const Error& e) {
        if (e.code() != ErrorCode::corrupted_stream) throw;
        result.decode_failed = true;
        result.image = gray_like(image);
    }
    result.psnr_db = image_psnr(image, result.image);
    return result;
}

TextResult conventional_text_pipeline(const std::string& text, const channel::ChannelConfig& channel,
                                      const CodecConfig& cfg, Rng& rng) {
    const BitStream source = utf8_encode(text);
    TextResult result;
    BitStream received;
    received.source = "utf8";
    received.bits = through_channel(source.bits, channel, cfg, rng, &result.coded_bits);
    received.payload_bits = received.bits.size();
    result.text = utf8_decode(received);
    const std::vector<std::string> ref = datasets::split_words(text);
    const std::vector<std::string> hyp = datasets::split_words(result.text);
    result.bleu = ref.empty() ? (hyp.empty() ? 1.0 : 0.0) : objectives::bleu(ref, hyp);
    return result;
}

double jpeg_psnr(const datasets::Image& image, int quality) {
    return image_psnr(image, jpeg_decode(jpeg_encode(image, quality)));
}

std::vector<BaselineReport> evaluate_conventional(const datasets::Dataset& test, const CodecConfig& cfg,
                                                  const SweepOptions& options) {
    cfg.validate();
    if (test.task != TaskId::image_recon && test.task != TaskId::text_recon)
        throw Error(ErrorCode::invalid_argument, "conventional pipelines serve the reconstruction tasks only");
    if (options.seeds < 1) throw Error(ErrorCode::invalid_argument, "at least one seed required");
    std::size_t n = test.size();
    if (options.max_samples > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(options.max_samples));
    const std::string metric(metric_name(task_spec(test.task).metric));
    std::vector<BaselineReport> reports;
    for (double snr : options.snr_grid) {
        channel::ChannelConfig ch;
        ch.snr_db = snr;
        ch.mode = options.mode;
        BaselineReport rep;
        rep.metric.task = test.task;
        rep.metric.snr_db = snr;
        rep.metric.metric = metric;
        rep.metric.sample_count = static_cast<int>(n);
        rep.metric.seed = options.seed;
        std::vector<double> per_seed;
        for (int s = 0; s < options.seeds; ++s) {
            Rng rng(options.seed + static_cast<std::uint64_t>(s) * 7919);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const datasets::Sample& sample = test.samples[i];
                if (test.task == TaskId::image_recon) {
                    const ImageResult r = conventional_image_pipeline(*sample.image, ch, cfg, rng);
                    sum += r.psnr_db;
                    rep.failures += r.decode_failed ? 1 : 0;
                    rep.mean_symbols += static_cast<double>(r.coded_bits);
                } else {
                    const TextResult r = conventional_text_pipeline(sample.text, ch, cfg, rng);
                    sum += r.bleu;
                    rep.mean_symbols += static_cast<double>(r.coded_bits);
                }
                ++rep.trials;
            }
            per_seed.push_back(sum / static_cast<double>(n));
        }
        const double mean = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / per_seed.size();
        double var = 0.0;
        for (double v : per_seed) var += (v - mean) * (v - mean);
        rep.mean_symbols /= static_cast<double>(rep.trials);
        rep.metric.value = mean;
        rep.metric.std = per_seed.size() > 1 ? std::sqrt(var / (per_seed.size() - 1)) : 0.0;
        reports.push_back(rep);
    }
    return reports;
}

} // namespace udsc::baselines
