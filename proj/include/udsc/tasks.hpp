#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>

namespace udsc {

enum class TaskId { sentiment, vqa, retrieval, image_recon, text_recon };
enum class Modality { image, text };
enum class Split { train, test };

inline constexpr std::array<TaskId, 5> kAllTasks = {
    TaskId::sentiment, TaskId::vqa, TaskId::retrieval, TaskId::image_recon, TaskId::text_recon};

std::string_view to_string(TaskId task);
std::string_view to_string(Modality modality);
std::string_view to_string(Split split);
TaskId task_from_string(std::string_view name);
Split split_from_string(std::string_view name);

enum class LossKind { cross_entropy, triplet, mse, token_cross_entropy };
enum class MetricKind { accuracy, recall_at_1, psnr, bleu };

struct TaskSpec {
    TaskId id;
    bool uses_image = false;
    bool uses_text = false;
    LossKind loss;
    MetricKind metric;
    bool reconstruction = false;

    bool uses(Modality m) const { return m == Modality::image ? uses_image : uses_text; }
};

const TaskSpec& task_spec(TaskId task);
std::string_view metric_name(MetricKind metric);

// Decoder depth at which each task's head is attached.
class ExitTable {
public:
    static constexpr int kMaxLayers = 8;

    ExitTable();  // vqa 8, retrieval 6, image_recon 4, text_recon 3, sentiment 2

    int exit_layer_for(TaskId task) const;
    void set(TaskId task, int layer);
    int max_layer() const;

private:
    std::map<TaskId, int> layers_;
};

} // namespace udsc
