#pragma once

// The unified multi-task model: per-modality semantic and channel encoders,
// task-specific row selection, the simulated channel, the shared channel
// decoder, the query-driven multi-exit semantic decoder and the task heads.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "udsc/adaptation.hpp"
#include "udsc/channel.hpp"
#include "udsc/datasets.hpp"
#include "udsc/decoder.hpp"
#include "udsc/encoders.hpp"
#include "udsc/model_config.hpp"
#include "udsc/nn.hpp"
#include "udsc/tasks.hpp"

namespace udsc::model {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// One mini-batch of a single task. Retrieval batches hold 3n samples laid out
// as [anchors; positives; negatives].
struct TaskBatch {
    TaskId task = TaskId::sentiment;
    int size = 0;
    Matrix patches;           // size * image_rows x patch_dim
    std::vector<int> tokens;  // size * text_len
    std::vector<int> labels;  // class / answer / retrieval class per sample
};

TaskBatch make_batch(const datasets::Dataset& dataset, std::span<const std::size_t> indices,
                     const ModelConfig& cfg);
TaskBatch make_triplet_batch(const datasets::Dataset& dataset, int triplets, const ModelConfig& cfg,
                             std::mt19937_64& rng);

struct ForwardOptions {
    channel::ChannelConfig channel;
    bool noiseless = false;  // bypass the channel (upper bound)
    bool with_loss = true;   // false: outputs only, labels may be absent
};

struct TaskForward {
    Var loss;              // invalid when computed without loss
    Var output;            // head output after the task activation
    Var private_rows;      // per-sample private rows, sample-major
    Var shared_rows;       // per-sample shared rows, sample-major
    int private_per_sample = 0;
    int shared_per_sample = 0;
    adaptation::TransmitRecord record;
    int executed_layers = 0;
};

class UnifiedModel {
public:
    UnifiedModel(ModelConfig cfg, adaptation::PartitionMap partition, ExitTable exits, std::uint64_t seed);
    UnifiedModel(const UnifiedModel&) = delete;
    UnifiedModel& operator=(const UnifiedModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const adaptation::PartitionMap& partition() const { return partition_; }
    const ExitTable& exits() const { return exits_; }
    nn::ParameterStore& parameters() { return store_; }
    const nn::ParameterStore& parameters() const { return store_; }

    TaskForward forward(Tape& t, const TaskBatch& batch, const ForwardOptions& options,
                        std::mt19937_64& rng) const;

    // Single-sample, non-recording counterparts of the pipeline stages.
    Matrix encode_image(const Matrix& patches, TaskId task) const;
    Matrix encode_text(std::span<const int> tokens, TaskId task) const;
    encoders::ChannelSymbols channel_encode(const Matrix& features, Modality modality) const;
    Matrix channel_decode(const channel::ComplexVector& received,
                          const std::vector<encoders::SymbolSource>& index_map) const;
    // Row-wise [image; text] with receiver-side row-position and modality
    // embeddings; `*_rows` give each row's index in the encoder output
    // (defaults to 0..n-1).
    Matrix assemble_decoder_input(const std::optional<Matrix>& image, const std::optional<Matrix>& text,
                                  std::span<const int> image_rows = {}, std::span<const int> text_rows = {}) const;
    decoder::ExitBundle semantic_decode(const Matrix& memory, TaskId task, int exit_layer) const;
    decoder::TaskOutput task_head(const decoder::ExitBundle& bundle, TaskId task) const;
    int exit_layer_for(TaskId task) const { return exits_.exit_layer_for(task); }

    // Whether a parameter belongs to the stripped single-task model of `task`.
    bool in_scope(const std::string& name, TaskId task) const;
    long long count_parameters() const { return store_.count(); }
    long long count_parameters(TaskId task) const;
    // Parameters needed by at least one of `tasks`.
    long long count_parameters(std::span<const TaskId> tasks) const;

private:
    Var receive(Tape& t, Var received_rows, Modality m, std::span<const int> rows, int batch) const;
    Var rx_embed(Tape& t, Var decoded, Modality m, std::span<const int> rows) const;

    ModelConfig cfg_;
    adaptation::PartitionMap partition_;
    ExitTable exits_;
    nn::ParameterStore store_;
    nn::Rng init_rng_;
    encoders::SemanticEncoder image_encoder_;
    encoders::SemanticEncoder text_encoder_;
    encoders::ChannelEncoder image_channel_;
    encoders::ChannelEncoder text_channel_;
    decoder::ChannelDecoder channel_decoder_;
    ad::Parameter* rx_type_image_;
    ad::Parameter* rx_type_text_;
    ad::Parameter* rx_pos_image_;
    ad::Parameter* rx_pos_text_;
    decoder::SemanticDecoder decoder_;
    std::map<TaskId, decoder::TaskHead> heads_;
};

} // namespace udsc::model
