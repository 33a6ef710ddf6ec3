#pragma once

#include <memory>

#include "udsc/datasets.hpp"
#include "udsc/model.hpp"

namespace testing {

inline udsc::ModelConfig tiny_config(int vocab_size) {
    udsc::ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.ff_dim = 32;
    c.image_layers = 1;
    c.text_layers = 1;
    c.decoder_layers = 8;
    c.symbols_per_row = 4;
    c.retrieval_dim = 8;
    c.vocab_size = vocab_size;
    c.num_answers = static_cast<int>(udsc::datasets::vqa_answers().size());
    return c;
}

inline udsc::datasets::DataBundle tiny_bundle(int train = 48, int test = 16) {
    udsc::datasets::DataOptions o;
    for (auto& [t, n] : o.train_size) n = train;
    o.test_size = test;
    o.use_cache = false;
    return udsc::datasets::load_all({udsc::kAllTasks.begin(), udsc::kAllTasks.end()}, "", o);
}

inline std::unique_ptr<udsc::model::UnifiedModel> tiny_model(const udsc::datasets::DataBundle& b,
                                                              std::uint64_t seed = 1) {
    const udsc::ModelConfig c = tiny_config(b.vocab.size());
    return std::make_unique<udsc::model::UnifiedModel>(
        c, udsc::adaptation::PartitionMap::make_default(c.image_rows(), c.text_len), udsc::ExitTable{}, seed);
}

inline udsc::model::TaskBatch first_batch(const udsc::datasets::DataBundle& b, udsc::TaskId task,
                                          const udsc::ModelConfig& c, int n = 4) {
    if (task == udsc::TaskId::retrieval) {
        std::mt19937_64 rng(3);
        return udsc::model::make_triplet_batch(b.train.at(task), n, c, rng);
    }
    std::vector<std::size_t> idx;
    for (int i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(i));
    return udsc::model::make_batch(b.train.at(task), idx, c);
}

} // namespace testing
