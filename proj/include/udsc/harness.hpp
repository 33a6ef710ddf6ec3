#pragma once

// Experiment orchestration: YAML configuration with dotted overrides, run
// manifests, the shared results CSV schema, SVG plots and the train / sweep /
// ablate-adaptation / params / plot commands.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "udsc/baselines.hpp"
#include "udsc/datasets.hpp"
#include "udsc/model.hpp"
#include "udsc/training.hpp"

namespace udsc::harness {

namespace fs = std::filesystem;

struct PartitionSettings {
    int private_rows = 2;
    int shared_rows = 2;
    // Explicit per-(task, modality) entries replacing the default layout.
    std::vector<std::tuple<TaskId, Modality, adaptation::RowPartition>> overrides;
};

struct EvalSettings {
    double snr_min = -6.0;
    double snr_max = 18.0;
    double snr_step = 3.0;
    int seeds = 3;
    std::uint64_t seed = 1000;
    int max_samples = 0;
    int batch_size = 64;
    double ablation_snr_db = 12.0;

    std::vector<double> grid() const;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    fs::path output_dir = "runs/default";
    std::vector<TaskId> tasks{kAllTasks.begin(), kAllTasks.end()};
    fs::path data_root;
    datasets::DataOptions data;
    ModelConfig model;
    ExitTable exits;
    PartitionSettings partition;
    training::TrainConfig train;
    EvalSettings eval;
    baselines::CodecConfig baseline;

    adaptation::PartitionMap partition_map() const;
    // Cross-reference checks; throws config_invalid.
    void validate() const;
};

// Parses YAML (JSON is accepted as a YAML subset). `overrides` are
// "dotted.key=value" strings applied before validation. Errors carry
// "file:line: message". A run manifest may be given instead of a config; its
// embedded config is used after checking the recorded hash.
ExperimentConfig load_config(const fs::path& file, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {},
                              const std::string& origin = "<config>");

// Canonical JSON text (sorted keys) and its FNV-1a 64-bit hash in hex; the
// hash ignores output_dir.
std::string config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

std::string version_string();

struct RunManifest {
    std::string run_id;
    std::string command;
    std::string config_hash;
    std::string config;  // canonical JSON
    std::uint64_t seed = 0;
    std::string version;
    std::string started;
    std::string finished;
    std::map<std::string, std::string> artifacts;
};

void write_manifest(const RunManifest& manifest, const fs::path& file);
RunManifest read_manifest(const fs::path& file);

// ---- results CSV ----
inline constexpr const char* kResultsSchema = "# udeepsc-results v1";

struct ResultRow {
    std::string system;  // udeepsc, tdeepsc, conventional, upper_bound
    TaskId task = TaskId::sentiment;
    double snr_db = 0.0;
    std::string metric;
    double value = 0.0;
    double std = 0.0;
    int n = 0;
    std::uint64_t seed = 0;
    std::string model_tag;
    int exit_layer = 0;
    int rows_selected = 0;
    int rows_total = 0;
    int symbols_sent = 0;
    std::string codec_deviation;
};

const std::vector<std::string>& results_columns();
void write_results_csv(const fs::path& file, const std::vector<ResultRow>& rows);
// Validates the schema line, header and every field; throws schema_mismatch.
std::vector<ResultRow> read_results_csv(const fs::path& file);

// One SVG per task (metric vs SNR, one line per system/model tag). Returns
// the written paths.
std::vector<fs::path> plot_results(const std::vector<ResultRow>& rows, const fs::path& out_dir);

// ---- commands ----
struct CommandOptions {
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out;
    std::optional<TaskId> task;
    bool noiseless = false;
    bool conventional = false;
    bool force = false;
    bool quiet = false;
};

// Refuses to reuse a non-empty directory unless force is set.
void prepare_output_dir(const fs::path& dir, bool force);

RunManifest cmd_train(const fs::path& config_path, const CommandOptions& options);
RunManifest cmd_train(ExperimentConfig cfg, const CommandOptions& options);

// Evaluates a checkpoint over [snr_min, snr_max] and writes results.csv.
std::vector<ResultRow> cmd_sweep(const fs::path& checkpoint, const std::vector<TaskId>& tasks, double snr_min,
                                 double snr_max, double snr_step, const CommandOptions& options);

struct AblationRow {
    TaskId task;
    std::string metric;
    double without_adaptation = 0.0;
    double with_adaptation = 0.0;
    double reference_without = 0.0;
    double reference_with = 0.0;
};
std::vector<AblationRow> cmd_ablate_adaptation(ExperimentConfig cfg, const CommandOptions& options);
std::vector<AblationRow> cmd_ablate_adaptation(const fs::path& config_path, const CommandOptions& options);

struct ParamRow {
    std::string label;  // task name or "stored"
    long long tdeepsc = 0;
    long long udeepsc = 0;
};
struct ParamTable {
    std::vector<ParamRow> rows;
    long long unified = 0;
    long long summed = 0;
    double reduction = 0.0;  // 1 - unified / summed
};
// Stripped single-task counts of a model.
ParamTable parameter_table(const model::UnifiedModel& model, const std::vector<TaskId>& tasks);
ParamTable cmd_params(const std::vector<fs::path>& checkpoints, const CommandOptions& options);

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& csv_files, const CommandOptions& options);

// Rebuilds the datasets a checkpoint was trained on (vocabulary from the
// checkpoint).
datasets::DataBundle load_checkpoint_data(const training::Checkpoint& checkpoint, const ExperimentConfig& cfg);

} // namespace udsc::harness
