#pragma once

// Unified channel decoder, task-query driven transformer decoder with
// multi-exit states, and the light task heads attached at each task's exit.

#include <map>
#include <vector>

#include "udsc/model_config.hpp"
#include "udsc/nn.hpp"
#include "udsc/tasks.hpp"

namespace udsc::decoder {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct ExitBundle {
    std::vector<Matrix> states;  // one per executed decoder layer
    int executed_layer_count = 0;
    Matrix output;               // exit-layer state
};

struct TaskOutput {
    TaskId task;
    Matrix values;  // logits, embedding, pixels in [0,1] or token logits
};

// Shared across modalities: 2k reals -> d (ReLU) -> d.
class ChannelDecoder {
public:
    ChannelDecoder(nn::ParameterStore& store, const ModelConfig& cfg, nn::Rng& rng);
    Var operator()(Tape& t, Var received_rows) const;

private:
    nn::Linear hidden_, out_;
};

class SemanticDecoder {
public:
    SemanticDecoder(nn::ParameterStore& store, const ModelConfig& cfg, nn::Rng& rng);

    int layer_count() const { return static_cast<int>(layers_.size()); }
    int query_length(TaskId task) const;

    struct Run {
        std::vector<Var> states;
        int executed = 0;
    };
    // Runs exactly `exit_layer` layers over `batch` query groups attending to
    // `memory` (batch groups of equal length).
    Run decode(Tape& t, Var memory, int batch, TaskId task, int exit_layer) const;

private:
    std::vector<nn::DecoderLayer> layers_;
    std::map<TaskId, ad::Parameter*> queries_;
    std::map<TaskId, ad::Parameter*> position_queries_;
    std::map<TaskId, int> query_len_;
};

class TaskHead {
public:
    TaskHead(nn::ParameterStore& store, const ModelConfig& cfg, TaskId task, nn::Rng& rng);
    TaskId task() const { return task_; }
    int output_width() const { return width_; }

    // Raw head output (logits / pre-sigmoid pixels / unnormalised embedding).
    Var raw(Tape& t, Var state) const;
    // Output with the task's activation applied (sigmoid, L2 normalisation).
    Var operator()(Tape& t, Var state) const;

private:
    TaskId task_;
    int width_;
    nn::LayerNorm norm_;
    nn::Linear proj_;
};

} // namespace udsc::decoder
