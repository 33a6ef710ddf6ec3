#pragma once

// Joint multi-task training over sampled task pairs, single-task training,
// SNR-sweep evaluation and checkpoints.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udsc/adaptation.hpp"
#include "udsc/channel.hpp"
#include "udsc/datasets.hpp"
#include "udsc/model.hpp"
#include "udsc/nn.hpp"
#include "udsc/objectives.hpp"

namespace udsc::training {

using Rng = std::mt19937_64;

struct TrainConfig {
    std::vector<TaskId> tasks{kAllTasks.begin(), kAllTasks.end()};
    int iterations = 2000;
    int batch_size = 32;
    nn::AdamWConfig optimizer;
    int warmup_iterations = 0;  // linear learning-rate warm-up
    channel::ChannelConfig channel;  // snr_db is the training SNR
    bool adaptation = true;
    bool adaptation_normalized = false;
    double sampling_exponent = 1.0;  // pair weights are size^exponent
    std::map<TaskId, double> loss_weights;  // missing tasks weigh 1
    std::uint64_t seed = 1;
    int log_every = 50;
    int checkpoint_every = 0;  // multiple of log_every; 0 disables

    void validate() const;
};

// Normalised size^exponent weights in `tasks` order.
std::vector<double> sampling_weights(std::span<const TaskId> tasks, const std::map<TaskId, std::size_t>& sizes,
                                     double exponent = 1.0);

// Task A is drawn with the given weights; task B from the remaining tasks
// with their weights renormalised, so A != B.
std::pair<TaskId, TaskId> sample_task_pair(std::span<const TaskId> tasks, std::span<const double> weights,
                                           Rng& rng);

struct StepOptions {
    channel::ChannelConfig channel;
    bool adaptation = true;
    bool normalized = false;
    std::map<TaskId, double> loss_weights;

    double weight(TaskId task) const;
};

// One optimizer step on L_A + L_B + L_a, where each task loss carries its
// weight and the bundle reports the weighted values (b may be null for single-task
// training, in which case only L_A is used). Throws non_finite_loss before
// touching the weights when the loss is NaN or infinite.
adaptation::LossBundle train_step(model::UnifiedModel& model, nn::AdamW& optimizer, const model::TaskBatch& a,
                                  const model::TaskBatch* b, const StepOptions& options, Rng& rng);

// Mean over paired samples of the adaptation loss between two forward passes.
ad::Var pairwise_adaptation(const model::TaskForward& a, const model::TaskForward& b, bool normalized);

// Cycles through shuffled epochs of each dataset.
class BatchSampler {
public:
    BatchSampler(const std::map<TaskId, datasets::Dataset>& data, const ModelConfig& cfg, std::uint64_t seed);
    model::TaskBatch next(TaskId task, int batch_size);

private:
    const std::map<TaskId, datasets::Dataset>& data_;
    ModelConfig cfg_;
    Rng rng_;
    std::map<TaskId, std::vector<std::size_t>> order_;
    std::map<TaskId, std::size_t> cursor_;
};

struct LossRecord {
    long iteration = 0;
    TaskId task_a = TaskId::sentiment;
    std::optional<TaskId> task_b;
    adaptation::LossBundle loss;
};

struct TrainResult {
    long iterations = 0;
    std::vector<LossRecord> history;  // every log_every-th iteration
    std::map<TaskId, long> task_counts;
    double seconds = 0.0;
};

using LogCallback = std::function<void(const LossRecord&)>;

TrainResult train(model::UnifiedModel& model, const datasets::DataBundle& data, const TrainConfig& cfg,
                  const LogCallback& on_log = {});
TrainResult train_single_task(model::UnifiedModel& model, const datasets::DataBundle& data, TaskId task,
                              const TrainConfig& cfg, const LogCallback& on_log = {});

void write_loss_csv(const std::filesystem::path& file, const std::vector<LossRecord>& history);

// ---- evaluation ----
struct EvalOptions {
    std::vector<double> snr_grid{-6, -3, 0, 3, 6, 9, 12, 15, 18};
    channel::Mode mode = channel::Mode::awgn;
    int n_t = 1;
    int n_r = 1;
    bool noiseless = false;
    int seeds = 3;
    std::uint64_t seed = 1000;
    int batch_size = 64;
    int max_samples = 0;  // 0: the whole test split
};

// Task metric on `test` under one channel realisation stream.
double evaluate_once(const model::UnifiedModel& model, const datasets::Dataset& test,
                     const model::ForwardOptions& options, Rng& rng, int batch_size = 64, int max_samples = 0);

// One report per SNR (mean and standard deviation over seeds).
std::vector<objectives::MetricReport> evaluate(const model::UnifiedModel& model, const datasets::Dataset& test,
                                               const EvalOptions& options);

// Fraction of the most frequent label; the majority-class accuracy.
double majority_fraction(const datasets::Dataset& dataset);

// ---- checkpoints ----
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    std::string system = "udeepsc";
    ModelConfig model_config;
    std::map<TaskId, int> exit_layers;
    std::vector<std::tuple<TaskId, Modality, std::vector<int>, std::vector<int>>> partition;
    std::vector<std::string> vocabulary;
    std::string config_json;
    long iteration = 0;
    std::map<std::string, double> best_metrics;
    std::uint64_t init_seed = 0;
    std::map<std::string, ad::Matrix> parameters;
};

Checkpoint make_checkpoint(const model::UnifiedModel& model, const datasets::Vocabulary& vocab,
                           std::uint64_t init_seed);
std::unique_ptr<model::UnifiedModel> restore_model(const Checkpoint& checkpoint);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& file);
// Throws missing_file, corrupted_stream or schema_mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& file);

} // namespace udsc::training
