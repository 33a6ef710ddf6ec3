#include "udsc/datasets.hpp"

#include <cereal/archives/binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/optional.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <numeric>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "udsc/error.hpp"

namespace udsc::datasets {

template <class Archive>
void serialize(Archive& ar, Image& v) { ar(v.height, v.width, v.channels, v.pixels); }
template <class Archive>
void serialize(Archive& ar, Rgb& v) { ar(v.r, v.g, v.b); }
template <class Archive>
void serialize(Archive& ar, Shape& v) { ar(v.kind, v.cx, v.cy, v.radius, v.color, v.color_id); }
template <class Archive>
void serialize(Archive& ar, Scene& v) { ar(v.top, v.bottom, v.shapes); }
template <class Archive>
void serialize(Archive& ar, VqaQuestion& v) { ar(v.kind, v.shape, v.color_id); }
template <class Archive>
void serialize(Archive& ar, Sample& v) { ar(v.image, v.tokens, v.text, v.label, v.scene, v.question); }
template <class Archive>
void serialize(Archive& ar, Dataset& v) { ar(v.task, v.split, v.samples); }

namespace {

constexpr std::array<char, 4> kCacheMagic = {'U', 'D', 'S', 'D'};

std::uint64_t mix_seed(std::uint64_t seed, TaskId task, Split split) {
    std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL;
    s ^= (static_cast<std::uint64_t>(task) + 1) * 0xBF58476D1CE4E5B9ULL;
    s ^= (static_cast<std::uint64_t>(split) + 1) * 0x94D049BB133111EBULL;
    return s;
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Rgb hsv(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    const int i = static_cast<int>(h);
    const double f = h - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

bool inside(const Shape& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy, r = s.radius;
    switch (s.kind) {
    case ShapeKind::disk: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
    case ShapeKind::diamond: return std::abs(dx) + std::abs(dy) <= r;
    case ShapeKind::ring: {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case ShapeKind::triangle: {
        // Upward triangle with apex at (0, -r) and base at y = r/2.
        if (dy > 0.5 * r || dy < -r) return false;
        const double half_width = (dy + r) / 1.5 * 0.866;
        return std::abs(dx) <= half_width;
    }
    }
    return false;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::missing_file, "cannot open " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void require_file(const std::filesystem::path& file) {
    if (!std::filesystem::exists(file)) throw Error(ErrorCode::missing_file, "missing dataset file " + file.string());
}

// Warns (stderr) if root/manifest.json records another checksum for `file`.
void check_manifest(const std::filesystem::path& root, const std::filesystem::path& file, std::uint32_t crc) {
    const auto manifest = root / "manifest.json";
    if (!std::filesystem::exists(manifest)) return;
    try {
        std::ifstream in(manifest);
        nlohmann::json j = nlohmann::json::parse(in);
        const std::string key = std::filesystem::relative(file, root).generic_string();
        if (j.contains("checksums") && j["checksums"].contains(key) &&
            j["checksums"][key].get<std::uint32_t>() != crc)
            std::cerr << "warning: checksum mismatch for " << file.string() << "\n";
    } catch (const nlohmann::json::exception&) {
        std::cerr << "warning: unreadable manifest " << manifest.string() << "\n";
    }
}

Image downsample(const Image& img, int size) {
    if (img.height == size && img.width == size) return img;
    if (img.height % size != 0 || img.width != img.height)
        throw Error(ErrorCode::dimension_mismatch, "cannot resample image to " + std::to_string(size));
    const int f = img.height / size;
    Image out{size, size, img.channels, std::vector<float>(static_cast<std::size_t>(size * size * img.channels))};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) acc += img.at(y * f + dy, x * f + dx, c);
                out.at(y, x, c) = static_cast<float>(acc / (f * f));
            }
    return out;
}

Dataset load_cifar(TaskId task, Split split, const std::filesystem::path& root, int count, int image_size,
                   bool use_cache) {
    const auto dir = root / "cifar-10-batches-bin";
    std::vector<std::filesystem::path> files;
    if (split == Split::train)
        for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    else
        files.push_back(dir / "test_batch.bin");
    require_file(files.front());

    const std::uint32_t crc = file_crc32(files.front());
    check_manifest(root, files.front(), crc);
    const auto cache = root / ".udsc-cache" /
                       (std::string(to_string(task)) + "_" + std::string(to_string(split)) + "_" +
                        std::to_string(count) + "_" + std::to_string(image_size) + ".bin");
    if (use_cache)
        if (auto cached = load_dataset_cache(cache, crc)) return *cached;

    constexpr int kSide = 32, kRecord = 1 + kSide * kSide * 3;
    Dataset ds{task, split, {}};
    std::vector<unsigned char> rec(kRecord);
    for (const auto& file : files) {
        if (static_cast<int>(ds.samples.size()) >= count) break;
        if (!std::filesystem::exists(file)) break;
        std::ifstream in(file, std::ios::binary);
        while (static_cast<int>(ds.samples.size()) < count &&
               in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
            Image img{kSide, kSide, 3, std::vector<float>(kSide * kSide * 3)};
            for (int c = 0; c < 3; ++c)
                for (int p = 0; p < kSide * kSide; ++p)
                    img.pixels[static_cast<std::size_t>(p * 3 + c)] = rec[static_cast<std::size_t>(1 + c * kSide * kSide + p)] / 255.0f;
            Sample s;
            s.image = downsample(img, image_size);
            s.label = task == TaskId::retrieval ? rec[0] : -1;
            ds.samples.push_back(std::move(s));
        }
    }
    if (ds.samples.empty()) throw Error(ErrorCode::missing_file, "no CIFAR records in " + dir.string());
    if (use_cache) save_dataset_cache(ds, cache, crc);
    return ds;
}

} // namespace

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary() {
    for (const char* special : {"<pad>", "<s>", "</s>", "<unk>"}) add(special);
}

void Vocabulary::add(const std::string& token) {
    if (token_to_id_.count(token)) return;
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& sentences, std::size_t max_size) {
    std::map<std::string, int> counts;
    for (const auto& s : sentences)
        for (const auto& w : split_words(s)) ++counts[w];
    std::vector<std::pair<std::string, int>> ordered(counts.begin(), counts.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [w, c] : ordered) {
        if (v.id_to_token_.size() >= max_size) break;
        v.add(w);
    }
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw Error(ErrorCode::index_out_of_range, "token id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::vector<int> tokenize_text(const std::string& text, const Vocabulary& vocab, int max_len) {
    if (vocab.size() == 0) throw Error(ErrorCode::invalid_argument, "tokenize_text: empty vocabulary");
    std::vector<int> ids(static_cast<std::size_t>(max_len), Vocabulary::kPad);
    const auto words = split_words(text);
    for (std::size_t i = 0; i < words.size() && i < ids.size(); ++i) ids[i] = vocab.id(words[i]);
    return ids;
}

std::vector<std::string> detokenize(std::span<const int> ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    for (int id : ids) {
        if (id == Vocabulary::kPad) break;
        words.push_back(vocab.token(id));
    }
    return words;
}

// ------------------------------------------------------------------- patches

Matrix patchify_image(const Image& image, int patch_size) {
    if (patch_size <= 0 || image.height % patch_size != 0 || image.width % patch_size != 0)
        throw Error(ErrorCode::dimension_mismatch,
                    "patchify: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " not divisible by patch " + std::to_string(patch_size));
    const int ph = image.height / patch_size, pw = image.width / patch_size;
    Matrix out(ph * pw, patch_size * patch_size * image.channels);
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px) {
            Eigen::Index col = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int c = 0; c < image.channels; ++c)
                        out(py * pw + px, col++) = image.at(py * patch_size + y, px * patch_size + x, c);
        }
    return out;
}

Image unpatchify_image(const Matrix& patches, int height, int width, int channels, int patch_size) {
    const int ph = height / patch_size, pw = width / patch_size;
    if (patches.rows() != ph * pw || patches.cols() != patch_size * patch_size * channels)
        throw Error(ErrorCode::dimension_mismatch, "unpatchify: patch matrix shape mismatch");
    Image img{height, width, channels, std::vector<float>(static_cast<std::size_t>(height * width * channels))};
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px) {
            Eigen::Index col = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int c = 0; c < channels; ++c)
                        img.at(py * patch_size + y, px * patch_size + x, c) =
                            static_cast<float>(patches(py * pw + px, col++));
        }
    return img;
}

// ----------------------------------------------------------------- rendering

Image render_scene(const Scene& scene, int size, int channels) {
    Image img{size, size, channels, std::vector<float>(static_cast<std::size_t>(size * size * channels))};
    constexpr int kSub = 3;
    for (int y = 0; y < size; ++y) {
        const double t = size > 1 ? static_cast<double>(y) / (size - 1) : 0.0;
        const Rgb bg{scene.top.r + (scene.bottom.r - scene.top.r) * t, scene.top.g + (scene.bottom.g - scene.top.g) * t,
                     scene.top.b + (scene.bottom.b - scene.top.b) * t};
        for (int x = 0; x < size; ++x) {
            Rgb px = bg;
            for (const Shape& s : scene.shapes) {
                int hits = 0;
                for (int sy = 0; sy < kSub; ++sy)
                    for (int sx = 0; sx < kSub; ++sx)
                        hits += inside(s, x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub);
                const double cov = static_cast<double>(hits) / (kSub * kSub);
                px = {px.r * (1 - cov) + s.color.r * cov, px.g * (1 - cov) + s.color.g * cov,
                      px.b * (1 - cov) + s.color.b * cov};
            }
            const double rgb[3] = {px.r, px.g, px.b};
            for (int c = 0; c < channels; ++c)
                img.at(y, x, c) = static_cast<float>(std::clamp(rgb[c % 3], 0.0, 1.0));
        }
    }
    return img;
}

Dataset make_shape_images(TaskId task, Split split, int num_samples, std::uint64_t seed, int image_size) {
    if (num_samples <= 0) throw Error(ErrorCode::invalid_argument, "dataset size must be positive");
    Rng rng(mix_seed(seed, task, split));
    const double scale = image_size / 32.0;
    Dataset ds{task, split, {}};
    ds.samples.reserve(static_cast<std::size_t>(num_samples));
    for (int i = 0; i < num_samples; ++i) {
        const int cls = uniform_int(rng, 0, kImageClasses - 1);
        Scene scene;
        const double bg_hue = uniform(rng, 0, 360);
        scene.top = hsv(bg_hue, uniform(rng, 0.0, 0.3), uniform(rng, 0.25, 0.75));
        scene.bottom = hsv(bg_hue + uniform(rng, -40, 40), uniform(rng, 0.0, 0.3), uniform(rng, 0.25, 0.75));
        Shape s;
        s.kind = static_cast<ShapeKind>(cls / 2);
        const bool warm = cls % 2 == 0;
        const double hue = warm ? uniform(rng, -15, 50) : uniform(rng, 180, 250);
        s.color = hsv(hue, uniform(rng, 0.6, 0.95), uniform(rng, 0.75, 1.0));
        s.radius = uniform(rng, 7, 12) * scale;
        s.cx = uniform(rng, s.radius + 1, image_size - s.radius - 1);
        s.cy = uniform(rng, s.radius + 1, image_size - s.radius - 1);
        scene.shapes.push_back(s);
        Sample sample;
        sample.image = render_scene(scene, image_size);
        sample.label = task == TaskId::retrieval ? cls : -1;
        sample.scene = scene;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

// ----------------------------------------------------------------------- VQA

const std::vector<std::string>& vqa_color_names() {
    static const std::vector<std::string> names = {"red", "green", "blue", "yellow", "purple", "white"};
    return names;
}

const std::vector<Rgb>& vqa_palette() {
    static const std::vector<Rgb> palette = {{0.90, 0.15, 0.15}, {0.15, 0.75, 0.20}, {0.15, 0.30, 0.90},
                                             {0.95, 0.90, 0.15}, {0.60, 0.20, 0.75}, {0.95, 0.95, 0.95}};
    return palette;
}

std::string shape_name(ShapeKind kind) {
    switch (kind) {
    case ShapeKind::disk: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::diamond: return "diamond";
    case ShapeKind::ring: return "ring";
    }
    return "?";
}

namespace {
constexpr std::array<ShapeKind, 3> kVqaShapes = {ShapeKind::disk, ShapeKind::square, ShapeKind::triangle};
}

const std::vector<std::string>& vqa_answers() {
    static const std::vector<std::string> answers = [] {
        std::vector<std::string> a = vqa_color_names();
        for (ShapeKind k : kVqaShapes) a.push_back(shape_name(k));
        a.push_back("yes");
        a.push_back("no");
        return a;
    }();
    return answers;
}

std::string question_text(const VqaQuestion& q) {
    const auto& colors = vqa_color_names();
    switch (q.kind) {
    case VqaQuestion::Kind::color_of_shape: return "what color is the " + shape_name(q.shape) + " ?";
    case VqaQuestion::Kind::shape_of_color:
        return "what shape is the " + colors[static_cast<std::size_t>(q.color_id)] + " object ?";
    case VqaQuestion::Kind::exists:
        return "is there a " + colors[static_cast<std::size_t>(q.color_id)] + " " + shape_name(q.shape) + " ?";
    }
    return {};
}

int answer_for(const Scene& scene, const VqaQuestion& q) {
    const int n_colors = static_cast<int>(vqa_color_names().size());
    auto shape_answer = [&](ShapeKind k) {
        for (std::size_t i = 0; i < kVqaShapes.size(); ++i)
            if (kVqaShapes[i] == k) return n_colors + static_cast<int>(i);
        throw Error(ErrorCode::invalid_argument, "shape outside the VQA answer set");
    };
    const int yes = n_colors + static_cast<int>(kVqaShapes.size());
    for (const Shape& s : scene.shapes) {
        if (q.kind == VqaQuestion::Kind::color_of_shape && s.kind == q.shape) return s.color_id;
        if (q.kind == VqaQuestion::Kind::shape_of_color && s.color_id == q.color_id) return shape_answer(s.kind);
        if (q.kind == VqaQuestion::Kind::exists && s.color_id == q.color_id && s.kind == q.shape) return yes;
    }
    if (q.kind == VqaQuestion::Kind::exists) return yes + 1;
    throw Error(ErrorCode::invalid_argument, "question refers to an object not in the scene");
}

Dataset make_toy_vqa(int num_samples, std::uint64_t seed, int image_size, Split split) {
    if (num_samples <= 0) throw Error(ErrorCode::invalid_argument, "dataset size must be positive");
    Rng rng(mix_seed(seed, TaskId::vqa, split));
    const auto& palette = vqa_palette();
    const int n_colors = static_cast<int>(palette.size());
    const double scale = image_size / 32.0;
    const double half = image_size / 2.0;
    Dataset ds{TaskId::vqa, split, {}};
    ds.samples.reserve(static_cast<std::size_t>(num_samples));
    for (int i = 0; i < num_samples; ++i) {
        Scene scene;
        const double bg_hue = uniform(rng, 0, 360);
        scene.top = hsv(bg_hue, uniform(rng, 0.0, 0.25), uniform(rng, 0.05, 0.3));
        scene.bottom = hsv(bg_hue, uniform(rng, 0.0, 0.25), uniform(rng, 0.05, 0.3));

        const int k0 = uniform_int(rng, 0, 2);
        const int k1 = (k0 + uniform_int(rng, 1, 2)) % 3;
        const int c0 = uniform_int(rng, 0, n_colors - 1);
        const int c1 = (c0 + uniform_int(rng, 1, n_colors - 1)) % n_colors;
        const bool first_left = uniform_int(rng, 0, 1) == 0;
        for (int j = 0; j < 2; ++j) {
            Shape s;
            s.kind = kVqaShapes[static_cast<std::size_t>(j == 0 ? k0 : k1)];
            s.color_id = j == 0 ? c0 : c1;
            s.color = palette[static_cast<std::size_t>(s.color_id)];
            s.radius = uniform(rng, 5, 7) * scale;
            const bool left = (j == 0) == first_left;
            const double lo = left ? s.radius + 1 : half + s.radius;
            const double hi = left ? half - s.radius : image_size - s.radius - 1;
            s.cx = uniform(rng, lo, std::max(lo, hi));
            s.cy = uniform(rng, s.radius + 1, image_size - s.radius - 1);
            scene.shapes.push_back(s);
        }

        VqaQuestion q;
        const Shape& target = scene.shapes[static_cast<std::size_t>(uniform_int(rng, 0, 1))];
        switch (uniform_int(rng, 0, 2)) {
        case 0:
            q.kind = VqaQuestion::Kind::color_of_shape;
            q.shape = target.kind;
            break;
        case 1:
            q.kind = VqaQuestion::Kind::shape_of_color;
            q.color_id = target.color_id;
            break;
        default: {
            q.kind = VqaQuestion::Kind::exists;
            const int mode = uniform_int(rng, 0, 3);
            if (mode < 2) {  // present
                q.shape = target.kind;
                q.color_id = target.color_id;
            } else if (mode == 2) {  // attributes swapped between the two objects
                q.shape = scene.shapes[0].kind;
                q.color_id = scene.shapes[1].color_id;
            } else {  // random pair
                q.shape = kVqaShapes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
                q.color_id = uniform_int(rng, 0, n_colors - 1);
            }
        }
        }
        Sample sample;
        sample.image = render_scene(scene, image_size);
        sample.text = question_text(q);
        sample.label = answer_for(scene, q);
        sample.scene = std::move(scene);
        sample.question = q;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

// ---------------------------------------------------------------------- text

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))];
}

} // namespace

Dataset make_sentiment(Split split, int num_samples, std::uint64_t seed) {
    if (num_samples <= 0) throw Error(ErrorCode::invalid_argument, "dataset size must be positive");
    static const std::vector<std::string> aspects = {"acting", "story", "soundtrack", "ending", "script",
                                                     "cast", "dialogue", "pacing", "visuals", "humour"};
    static const std::vector<std::string> positive = {"great", "wonderful", "brilliant", "moving", "delightful",
                                                      "charming", "superb", "enjoyable", "excellent",
                                                      "beautiful", "funny", "clever"};
    static const std::vector<std::string> negative = {"awful", "boring", "dull", "terrible", "tedious",
                                                      "bland", "painful", "weak", "clumsy", "annoying",
                                                      "messy", "forgettable"};
    static const std::vector<std::string> joins = {",", "and", "but", "with"};
    // Three aspect judgements; the label is the majority polarity after negation.
    Rng rng(mix_seed(seed, TaskId::sentiment, split));
    Dataset ds{TaskId::sentiment, split, {}};
    for (int i = 0; i < num_samples; ++i) {
        std::vector<int> order(aspects.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::string s;
        int votes = 0;
        for (int a = 0; a < 3; ++a) {
            const bool pos_word = uniform_int(rng, 0, 1) == 1;
            const bool negated = uniform(rng, 0, 1) < 0.2;
            if (a > 0) s += " " + pick(rng, joins) + " ";
            if (negated) s += "not ";
            s += pick(rng, pos_word ? positive : negative) + " " + aspects[static_cast<std::size_t>(order[a])];
            votes += (pos_word != negated) ? 1 : -1;
        }
        Sample sample;
        sample.text = s;
        sample.label = votes > 0 ? 1 : 0;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

Dataset make_parliament_sentences(Split split, int num_samples, std::uint64_t seed) {
    if (num_samples <= 0) throw Error(ErrorCode::invalid_argument, "dataset size must be positive");
    static const std::vector<std::string> actors = {"council", "commission", "parliament", "committee",
                                                    "presidency", "union", "rapporteur", "house"};
    static const std::vector<std::string> modals = {"will", "must", "should", "cannot", "intends to", "may"};
    static const std::vector<std::string> verbs = {"support", "reject", "examine", "adopt", "discuss",
                                                   "review", "strengthen", "finance", "amend", "welcome"};
    static const std::vector<std::string> objects = {"proposal", "report", "directive", "budget", "agreement",
                                                     "resolution", "programme", "amendment", "strategy"};
    static const std::vector<std::string> topics = {"energy", "fisheries", "transport", "agriculture", "trade",
                                                    "security", "employment", "climate", "research", "health",
                                                    "education", "migration"};
    static const std::vector<std::string> tails = {"", "this week", "next year", "without delay", "in november",
                                                   "by consensus", "as soon as possible"};
    Rng rng(mix_seed(seed, TaskId::text_recon, split));
    Dataset ds{TaskId::text_recon, split, {}};
    for (int i = 0; i < num_samples; ++i) {
        std::string s = "the " + pick(rng, actors) + " " + pick(rng, modals) + " " + pick(rng, verbs) + " the " +
                        pick(rng, objects) + " on " + pick(rng, topics);
        if (const auto& t = pick(rng, tails); !t.empty()) s += " " + t;
        Sample sample;
        sample.text = s;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

// ------------------------------------------------------------------ triplets

Triplet triplet_sample(const Dataset& dataset, Rng& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) by_class[dataset.samples[i].label].push_back(i);
    std::vector<int> anchor_classes;
    for (const auto& [cls, idx] : by_class)
        if (idx.size() >= 2) anchor_classes.push_back(cls);
    if (by_class.size() < 2 || anchor_classes.empty())
        throw Error(ErrorCode::insufficient_classes,
                    "triplet sampling needs >= 2 classes and a class with >= 2 samples");
    const int cls = anchor_classes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(anchor_classes.size()) - 1))];
    const auto& members = by_class[cls];
    const int n = static_cast<int>(members.size());
    const int a = uniform_int(rng, 0, n - 1);
    const int p = (a + uniform_int(rng, 1, n - 1)) % n;
    std::vector<int> others;
    for (const auto& [c, idx] : by_class)
        if (c != cls) others.push_back(c);
    const auto& neg_members = by_class[others[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(others.size()) - 1))]];
    const auto neg = neg_members[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(neg_members.size()) - 1))];
    return {members[static_cast<std::size_t>(a)], members[static_cast<std::size_t>(p)], neg};
}

// ------------------------------------------------------------------- loading

Dataset load_task_dataset(TaskId task, Split split, const std::filesystem::path& root, const DataOptions& options) {
    const int count = split == Split::train ? options.train_size.at(task) : options.test_size;
    if (count <= 0) throw Error(ErrorCode::invalid_argument, "dataset size must be positive");
    if (task == TaskId::vqa) return make_toy_vqa(count, options.seed, options.image_size, split);
    if (root.empty()) {
        switch (task) {
        case TaskId::sentiment: return make_sentiment(split, count, options.seed);
        case TaskId::text_recon: return make_parliament_sentences(split, count, options.seed);
        default: return make_shape_images(task, split, count, options.seed, options.image_size);
        }
    }
    if (task == TaskId::retrieval || task == TaskId::image_recon)
        return load_cifar(task, split, root, count, options.image_size, options.use_cache);

    const auto file = task == TaskId::sentiment ? root / "sentiment" / (std::string(to_string(split)) + ".tsv")
                                                : root / "text_recon" / (std::string(to_string(split)) + ".txt");
    require_file(file);
    check_manifest(root, file, file_crc32(file));
    Dataset ds{task, split, {}};
    for (const auto& line : read_lines(file)) {
        if (static_cast<int>(ds.samples.size()) >= count) break;
        Sample s;
        if (task == TaskId::sentiment) {
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw Error(ErrorCode::invalid_argument, file.string() + ": expected 'label<TAB>sentence'");
            s.label = std::stoi(line.substr(0, tab)) != 0 ? 1 : 0;
            s.text = trim(line.substr(tab + 1));
        } else {
            s.text = line;
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw Error(ErrorCode::missing_file, file.string() + " holds no samples");
    return ds;
}

Dataset tokenize_dataset(Dataset dataset, const Vocabulary& vocab, int max_len) {
    for (Sample& s : dataset.samples)
        if (!s.text.empty()) s.tokens = tokenize_text(s.text, vocab, max_len);
    return dataset;
}

DataBundle load_all(const std::vector<TaskId>& tasks, const std::filesystem::path& root, const DataOptions& options) {
    DataBundle bundle;
    std::vector<std::string> corpus;
    std::map<TaskId, Dataset> raw_train, raw_test;
    for (TaskId t : tasks) {
        raw_train[t] = load_task_dataset(t, Split::train, root, options);
        raw_test[t] = load_task_dataset(t, Split::test, root, options);
        if (task_spec(t).uses_text)
            for (const auto& s : raw_train[t].samples) corpus.push_back(s.text);
    }
    // VQA questions are always part of the vocabulary so a text-free task set
    // still yields a usable text encoder.
    if (!raw_train.count(TaskId::vqa))
        for (const auto& s : make_toy_vqa(200, options.seed, options.image_size).samples) corpus.push_back(s.text);
    bundle.vocab = Vocabulary::build(corpus);
    for (auto& [t, ds] : raw_train) bundle.train[t] = tokenize_dataset(std::move(ds), bundle.vocab, options.text_len);
    for (auto& [t, ds] : raw_test) bundle.test[t] = tokenize_dataset(std::move(ds), bundle.vocab, options.text_len);
    return bundle;
}

// ------------------------------------------------------------ cache/manifest

void save_dataset_cache(const Dataset& dataset, const std::filesystem::path& file, std::uint32_t source_crc) {
    std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write cache " + file.string());
    out.write(kCacheMagic.data(), kCacheMagic.size());
    cereal::BinaryOutputArchive ar(out);
    ar(kCacheSchemaVersion, source_crc, dataset);
}

std::optional<Dataset> load_dataset_cache(const std::filesystem::path& file, std::uint32_t source_crc) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return std::nullopt;
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kCacheMagic) return std::nullopt;
    try {
        cereal::BinaryInputArchive ar(in);
        std::uint32_t version = 0, crc = 0;
        ar(version, crc);
        if (version != kCacheSchemaVersion || crc != source_crc) return std::nullopt;
        Dataset ds;
        ar(ds);
        return ds;
    } catch (const cereal::Exception&) {
        return std::nullopt;
    }
}

std::uint32_t file_crc32(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_file, "cannot open " + file.string());
    uLong crc = crc32(0L, Z_NULL, 0);
    std::vector<char> buf(1 << 16);
    while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0)
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(in.gcount()));
    return static_cast<std::uint32_t>(crc);
}

void write_manifest(const std::filesystem::path& root, const DataBundle& bundle) {
    nlohmann::json j;
    j["schema_version"] = kCacheSchemaVersion;
    j["vocab_size"] = bundle.vocab.size();
    for (const auto& [t, ds] : bundle.train) j["sizes"][std::string(to_string(t))]["train"] = ds.size();
    for (const auto& [t, ds] : bundle.test) j["sizes"][std::string(to_string(t))]["test"] = ds.size();
    j["checksums"] = nlohmann::json::object();
    if (std::filesystem::exists(root))
        for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            const auto rel = std::filesystem::relative(entry.path(), root).generic_string();
            if (rel == "manifest.json" || rel.rfind(".udsc-cache", 0) == 0) continue;
            j["checksums"][rel] = file_crc32(entry.path());
        }
    std::filesystem::create_directories(root);
    std::ofstream out(root / "manifest.json");
    out << j.dump(2) << "\n";
}

} // namespace udsc::datasets
