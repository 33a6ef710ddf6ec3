#pragma once

// Desk-scale datasets for the five tasks: procedural shape images (image
// reconstruction and class-based retrieval), a synthetic toy VQA set,
// templated sentiment and parliamentary sentences, plus loaders for CIFAR-10
// binary batches and plain-text corpora when a data root is supplied.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "udsc/autodiff.hpp"
#include "udsc/tasks.hpp"

namespace udsc::datasets {

using ad::Matrix;
using Rng = std::mt19937_64;

struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;  // HWC, values in [0,1]

    float at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    float& at(int y, int x, int c) { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
    bool operator==(const Image&) const = default;
};

enum class ShapeKind { disk, square, triangle, diamond, ring };

struct Rgb {
    double r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

struct Shape {
    ShapeKind kind = ShapeKind::disk;
    double cx = 0, cy = 0, radius = 0;  // in pixels
    Rgb color;
    int color_id = -1;  // palette index for VQA scenes
    bool operator==(const Shape&) const = default;
};

struct Scene {
    Rgb top, bottom;  // vertical background gradient
    std::vector<Shape> shapes;
    bool operator==(const Scene&) const = default;
};

struct VqaQuestion {
    enum class Kind { color_of_shape, shape_of_color, exists } kind = Kind::color_of_shape;
    ShapeKind shape = ShapeKind::disk;
    int color_id = 0;
    bool operator==(const VqaQuestion&) const = default;
};

struct Sample {
    std::optional<Image> image;
    std::optional<std::vector<int>> tokens;
    std::string text;
    int label = -1;  // class id, answer id or retrieval class; -1 for reconstruction
    std::optional<Scene> scene;
    std::optional<VqaQuestion> question;
    bool operator==(const Sample&) const = default;
};

struct Dataset {
    TaskId task = TaskId::sentiment;
    Split split = Split::train;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool operator==(const Dataset&) const = default;
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnknown = 3;

    Vocabulary();
    // Most frequent words first (ties alphabetical), capped at max_size ids.
    static Vocabulary build(const std::vector<std::string>& sentences, std::size_t max_size = 10000);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }
    static Vocabulary from_tokens(std::vector<std::string> tokens);

private:
    void add(const std::string& token);
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

std::vector<std::string> split_words(const std::string& text);
std::vector<int> tokenize_text(const std::string& text, const Vocabulary& vocab, int max_len);
// Tokens up to the first pad, mapped back to words.
std::vector<std::string> detokenize(std::span<const int> ids, const Vocabulary& vocab);

// Non-overlapping patches in row-major patch order; each row is the patch
// flattened as (y, x, channel).
Matrix patchify_image(const Image& image, int patch_size);
Image unpatchify_image(const Matrix& patches, int height, int width, int channels, int patch_size);

// ---- procedural generators ----
Image render_scene(const Scene& scene, int size, int channels = 3);

inline constexpr int kImageClasses = 10;
// Ten classes: five shape kinds x {warm, cool} hue families.
Dataset make_shape_images(TaskId task, Split split, int num_samples, std::uint64_t seed, int image_size);

const std::vector<std::string>& vqa_color_names();
const std::vector<Rgb>& vqa_palette();
const std::vector<std::string>& vqa_answers();
std::string shape_name(ShapeKind kind);
std::string question_text(const VqaQuestion& q);
int answer_for(const Scene& scene, const VqaQuestion& q);

Dataset make_toy_vqa(int num_samples, std::uint64_t seed, int image_size = 32, Split split = Split::train);
Dataset make_sentiment(Split split, int num_samples, std::uint64_t seed);
Dataset make_parliament_sentences(Split split, int num_samples, std::uint64_t seed);

// ---- retrieval triplets ----
struct Triplet {
    std::size_t anchor, positive, negative;
};
Triplet triplet_sample(const Dataset& dataset, Rng& rng);

// ---- loading ----
struct DataOptions {
    std::map<TaskId, int> train_size = {{TaskId::sentiment, 2000},
                                        {TaskId::vqa, 4000},
                                        {TaskId::retrieval, 2000},
                                        {TaskId::image_recon, 2000},
                                        {TaskId::text_recon, 2000}};
    int test_size = 500;
    std::uint64_t seed = 2024;
    int image_size = 32;
    int text_len = 12;
    bool use_cache = true;
};

// Empty root: procedural substitutes. Otherwise CIFAR-10 binary batches
// (cifar-10-batches-bin/) back the image tasks and sentiment/{split}.tsv,
// text_recon/{split}.txt back the text tasks; toy VQA is always generated.
// Text samples come back untokenised (see tokenize_dataset).
Dataset load_task_dataset(TaskId task, Split split, const std::filesystem::path& root,
                          const DataOptions& options = {});

Dataset tokenize_dataset(Dataset dataset, const Vocabulary& vocab, int max_len);

// Every dataset, tokenised with a vocabulary built from the train splits.
struct DataBundle {
    Vocabulary vocab;
    std::map<TaskId, Dataset> train;
    std::map<TaskId, Dataset> test;
};
DataBundle load_all(const std::vector<TaskId>& tasks, const std::filesystem::path& root,
                    const DataOptions& options = {});

// ---- cache and manifest ----
inline constexpr std::uint32_t kCacheSchemaVersion = 1;
void save_dataset_cache(const Dataset& dataset, const std::filesystem::path& file, std::uint32_t source_crc);
// Empty when the file is missing, has another schema version, or was built
// from a source with a different checksum.
std::optional<Dataset> load_dataset_cache(const std::filesystem::path& file, std::uint32_t source_crc);

std::uint32_t file_crc32(const std::filesystem::path& file);
// Writes manifest.json with per-dataset sizes and source checksums.
void write_manifest(const std::filesystem::path& root, const DataBundle& bundle);

} // namespace udsc::datasets
