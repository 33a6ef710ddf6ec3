#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "udsc/datasets.hpp"
#include "udsc/error.hpp"

using namespace udsc;
using namespace udsc::datasets;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("udsc_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("patchify and unpatchify round trip") {
    const Dataset ds = make_shape_images(TaskId::image_recon, Split::test, 3, 9, 32);
    for (const Sample& s : ds.samples) {
        const Matrix p = patchify_image(*s.image, 8);
        CHECK(p.rows() == 16);
        CHECK(p.cols() == 8 * 8 * 3);
        CHECK(unpatchify_image(p, 32, 32, 3, 8) == *s.image);
        // Patch 1 starts at pixel (0, 8).
        CHECK(p(1, 0) == doctest::Approx(s.image->at(0, 8, 0)));
        CHECK(p(4, 3) == doctest::Approx(s.image->at(8, 1, 0)));
    }
    CHECK_THROWS_AS(patchify_image(*ds.samples[0].image, 7), Error);
}

TEST_CASE("shape images are deterministic, in range and cover ten classes") {
    const Dataset a = make_shape_images(TaskId::retrieval, Split::train, 400, 1, 32);
    const Dataset b = make_shape_images(TaskId::retrieval, Split::train, 400, 1, 32);
    CHECK(a == b);
    CHECK_FALSE(a == make_shape_images(TaskId::retrieval, Split::test, 400, 1, 32));
    std::set<int> classes;
    for (const Sample& s : a.samples) {
        classes.insert(s.label);
        const auto [lo, hi] = std::minmax_element(s.image->pixels.begin(), s.image->pixels.end());
        CHECK(*lo >= 0.0f);
        CHECK(*hi <= 1.0f);
    }
    CHECK(classes.size() == static_cast<std::size_t>(kImageClasses));
}

TEST_CASE("toy VQA answers agree with an independent re-render and scene check") {
    const Dataset ds = make_toy_vqa(300, 17, 32);
    const auto& answers = vqa_answers();
    const auto& colors = vqa_color_names();
    for (const Sample& s : ds.samples) {
        REQUIRE(s.scene);
        REQUIRE(s.question);
        CHECK(render_scene(*s.scene, 32) == *s.image);
        CHECK(s.label == answer_for(*s.scene, *s.question));
        REQUIRE(s.label >= 0);
        REQUIRE(s.label < static_cast<int>(answers.size()));
        const VqaQuestion& q = *s.question;
        int match = 0;
        for (const Shape& sh : s.scene->shapes) {
            if (q.kind == VqaQuestion::Kind::color_of_shape && sh.kind == q.shape) {
                ++match;
                CHECK(answers[s.label] == colors[sh.color_id]);
            }
            if (q.kind == VqaQuestion::Kind::shape_of_color && sh.color_id == q.color_id) {
                ++match;
                CHECK(answers[s.label] == shape_name(sh.kind));
            }
            if (q.kind == VqaQuestion::Kind::exists && sh.color_id == q.color_id && sh.kind == q.shape) ++match;
        }
        if (q.kind == VqaQuestion::Kind::exists) CHECK(answers[s.label] == (match > 0 ? "yes" : "no"));
        else CHECK(match == 1);
        CHECK(s.text == question_text(q));
    }
}

TEST_CASE("vocabulary ordering, tokenisation and detokenisation") {
    const Vocabulary v = Vocabulary::build({"b a c a", "a b"});
    CHECK(v.token(Vocabulary::kPad) == v.tokens()[0]);
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == 5);
    CHECK(v.id("c") == 6);
    CHECK(v.id("zzz") == Vocabulary::kUnknown);
    const std::vector<int> ids = tokenize_text("a c unknownword b b", v, 4);
    CHECK(ids == std::vector<int>{4, 6, Vocabulary::kUnknown, 5});
    CHECK(tokenize_text("a", v, 3) == std::vector<int>{4, 0, 0});
    CHECK(detokenize(std::vector<int>{5, 4, 0, 6}, v) == std::vector<std::string>{"b", "a"});
    CHECK(Vocabulary::from_tokens(v.tokens()).tokens() == v.tokens());
    CHECK(Vocabulary::build({"x y z w"}, 6).size() == 6);
}

TEST_CASE("text datasets are deterministic with balanced sentiment labels") {
    const Dataset s = make_sentiment(Split::train, 1000, 3);
    CHECK(s == make_sentiment(Split::train, 1000, 3));
    int positive = 0;
    for (const Sample& x : s.samples) {
        CHECK((x.label == 0 || x.label == 1));
        CHECK_FALSE(x.text.empty());
        CHECK(split_words(x.text).size() <= 11);
        positive += x.label;
    }
    CHECK(positive > 400);
    CHECK(positive < 600);
    const Dataset p = make_parliament_sentences(Split::test, 50, 3);
    for (const Sample& x : p.samples) CHECK(x.label == -1);
}

TEST_CASE("retrieval triplets respect class constraints") {
    const Dataset ds = make_shape_images(TaskId::retrieval, Split::train, 200, 5, 32);
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        const Triplet t = triplet_sample(ds, rng);
        CHECK(t.anchor != t.positive);
        CHECK(ds.samples[t.anchor].label == ds.samples[t.positive].label);
        CHECK(ds.samples[t.anchor].label != ds.samples[t.negative].label);
    }
    Dataset one_class = ds;
    for (Sample& s : one_class.samples) s.label = 0;
    CHECK_THROWS_AS(triplet_sample(one_class, rng), Error);
}

TEST_CASE("load_all tokenises every split with a shared vocabulary") {
    DataOptions o;
    for (auto& [t, n] : o.train_size) n = 40;
    o.test_size = 10;
    o.use_cache = false;
    const DataBundle b = load_all({TaskId::sentiment, TaskId::vqa, TaskId::image_recon}, "", o);
    CHECK(b.train.size() == 3);
    CHECK(b.test.at(TaskId::vqa).size() == 10);
    for (const Sample& s : b.train.at(TaskId::sentiment).samples) {
        REQUIRE(s.tokens);
        CHECK(s.tokens->size() == 12);
        for (int id : *s.tokens) CHECK(id < b.vocab.size());
    }
    CHECK_FALSE(b.train.at(TaskId::image_recon).samples[0].tokens);
}

TEST_CASE("dataset cache round trip and invalidation") {
    const auto dir = temp_dir("cache");
    const Dataset ds = make_toy_vqa(5, 2, 32, Split::test);
    save_dataset_cache(ds, dir / "vqa.bin", 1234);
    const auto back = load_dataset_cache(dir / "vqa.bin", 1234);
    REQUIRE(back);
    CHECK(*back == ds);
    CHECK_FALSE(load_dataset_cache(dir / "vqa.bin", 999));
    CHECK_FALSE(load_dataset_cache(dir / "missing.bin", 1234));
    std::filesystem::remove_all(dir);
}

TEST_CASE("missing data root is reported") {
    CHECK_THROWS_AS(load_task_dataset(TaskId::image_recon, Split::train, "/nonexistent/udsc"), Error);
}
