#include "udsc/tasks.hpp"

#include <algorithm>

#include "udsc/error.hpp"

namespace udsc {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::unknown_task: return "unknown_task";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::insufficient_classes: return "insufficient_classes";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::corrupted_stream: return "corrupted_stream";
    case ErrorCode::non_finite_loss: return "non_finite_loss";
    case ErrorCode::config_invalid: return "config_invalid";
    case ErrorCode::schema_mismatch: return "schema_mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::output_exists: return "output_exists";
    }
    return "unknown";
}

std::string_view to_string(TaskId task) {
    switch (task) {
    case TaskId::sentiment: return "sentiment";
    case TaskId::vqa: return "vqa";
    case TaskId::retrieval: return "retrieval";
    case TaskId::image_recon: return "image_recon";
    case TaskId::text_recon: return "text_recon";
    }
    return "?";
}

std::string_view to_string(Modality modality) {
    return modality == Modality::image ? "image" : "text";
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

TaskId task_from_string(std::string_view name) {
    for (TaskId t : kAllTasks)
        if (to_string(t) == name) return t;
    throw Error(ErrorCode::unknown_task, "unknown task '" + std::string(name) + "'");
}

Split split_from_string(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    throw Error(ErrorCode::invalid_argument, "unknown split '" + std::string(name) + "'");
}

const TaskSpec& task_spec(TaskId task) {
    static const std::array<TaskSpec, 5> specs = {{
        {TaskId::sentiment, false, true, LossKind::cross_entropy, MetricKind::accuracy, false},
        {TaskId::vqa, true, true, LossKind::cross_entropy, MetricKind::accuracy, false},
        {TaskId::retrieval, true, false, LossKind::triplet, MetricKind::recall_at_1, false},
        {TaskId::image_recon, true, false, LossKind::mse, MetricKind::psnr, true},
        {TaskId::text_recon, false, true, LossKind::token_cross_entropy, MetricKind::bleu, true},
    }};
    return specs.at(static_cast<std::size_t>(task));
}

std::string_view metric_name(MetricKind metric) {
    switch (metric) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::recall_at_1: return "recall_at_1";
    case MetricKind::psnr: return "psnr_db";
    case MetricKind::bleu: return "bleu";
    }
    return "?";
}

ExitTable::ExitTable()
    : layers_{{TaskId::vqa, 8},
              {TaskId::retrieval, 6},
              {TaskId::image_recon, 4},
              {TaskId::text_recon, 3},
              {TaskId::sentiment, 2}} {}

int ExitTable::exit_layer_for(TaskId task) const {
    auto it = layers_.find(task);
    if (it == layers_.end())
        throw Error(ErrorCode::unknown_task, "no exit layer for task " + std::string(to_string(task)));
    return it->second;
}

void ExitTable::set(TaskId task, int layer) {
    if (layer < 1 || layer > kMaxLayers)
        throw Error(ErrorCode::invalid_argument,
                    "exit layer " + std::to_string(layer) + " for " + std::string(to_string(task)) +
                        " outside [1, " + std::to_string(kMaxLayers) + "]");
    layers_[task] = layer;
}

int ExitTable::max_layer() const {
    int m = 0;
    for (const auto& [task, layer] : layers_) m = std::max(m, layer);
    return m;
}

} // namespace udsc
