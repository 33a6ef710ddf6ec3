#include "udsc/decoder.hpp"

#include <string>

#include "udsc/error.hpp"

namespace udsc::decoder {

ChannelDecoder::ChannelDecoder(nn::ParameterStore& store, const ModelConfig& cfg, nn::Rng& rng)
    : hidden_(store, "chdec.hidden", 2 * cfg.symbols_per_row, cfg.d_model, rng),
      out_(store, "chdec.out", cfg.d_model, cfg.d_model, rng) {}

Var ChannelDecoder::operator()(Tape& t, Var received_rows) const {
    return out_(t, ad::relu(hidden_(t, received_rows)));
}

SemanticDecoder::SemanticDecoder(nn::ParameterStore& store, const ModelConfig& cfg, nn::Rng& rng) {
    for (int i = 0; i < cfg.decoder_layers; ++i)
        layers_.emplace_back(store, "dec.layer" + std::to_string(i), cfg.d_model, cfg.heads, cfg.ff_dim, rng);
    for (TaskId t : kAllTasks) {
        const std::string name(to_string(t));
        queries_[t] = &store.create("dec.query." + name, 1, cfg.d_model, nn::Init::normal, rng);
        int len = 1;
        if (t == TaskId::image_recon) len = cfg.image_rows();
        if (t == TaskId::text_recon) len = cfg.text_len;
        query_len_[t] = len;
        if (task_spec(t).reconstruction)
            position_queries_[t] = &store.create("dec.posquery." + name, len, cfg.d_model, nn::Init::normal, rng);
    }
}

int SemanticDecoder::query_length(TaskId task) const {
    auto it = query_len_.find(task);
    if (it == query_len_.end()) throw Error(ErrorCode::unknown_task, "decoder has no query for task");
    return it->second;
}

SemanticDecoder::Run SemanticDecoder::decode(Tape& t, Var memory, int batch, TaskId task, int exit_layer) const {
    if (exit_layer < 1 || exit_layer > layer_count())
        throw Error(ErrorCode::invalid_argument, "exit layer " + std::to_string(exit_layer) + " outside [1, " +
                                                     std::to_string(layer_count()) + "]");
    const int len = query_length(task);
    Var x = ad::gather_rows(t.param(*queries_.at(task)), std::vector<int>(static_cast<std::size_t>(batch * len), 0));
    if (auto it = position_queries_.find(task); it != position_queries_.end())
        x = ad::add_tiled(x, t.param(*it->second));
    Run run;
    for (int i = 0; i < exit_layer; ++i) {
        x = layers_[static_cast<std::size_t>(i)](t, x, memory, batch);
        run.states.push_back(x);
    }
    run.executed = exit_layer;
    return run;
}

namespace {

int head_width(const ModelConfig& cfg, TaskId task) {
    switch (task) {
    case TaskId::sentiment: return 2;
    case TaskId::vqa:
        if (cfg.num_answers <= 0) throw Error(ErrorCode::config_invalid, "vqa head needs an answer set");
        return cfg.num_answers;
    case TaskId::retrieval: return cfg.retrieval_dim;
    case TaskId::image_recon: return cfg.patch_dim();
    case TaskId::text_recon:
        if (cfg.vocab_size <= 0) throw Error(ErrorCode::config_invalid, "text head needs a vocabulary");
        return cfg.vocab_size;
    }
    throw Error(ErrorCode::unknown_task, "no head for task");
}

} // namespace

TaskHead::TaskHead(nn::ParameterStore& store, const ModelConfig& cfg, TaskId task, nn::Rng& rng)
    : task_(task),
      width_(head_width(cfg, task)),
      norm_(store, "head." + std::string(to_string(task)) + ".norm", cfg.d_model, rng),
      proj_(store, "head." + std::string(to_string(task)) + ".proj", cfg.d_model, width_, rng) {}

Var TaskHead::raw(Tape& t, Var state) const { return proj_(t, norm_(t, state)); }

Var TaskHead::operator()(Tape& t, Var state) const {
    Var y = raw(t, state);
    if (task_ == TaskId::image_recon) return ad::sigmoid(y);
    if (task_ == TaskId::retrieval) return ad::l2_normalize_rows(y);
    return y;
}

} // namespace udsc::decoder
