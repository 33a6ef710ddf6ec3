#pragma once

// Private/shared partition of encoded feature rows, the cross-task
// domain-adaptation loss and the selection of rows that go on air.

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "udsc/autodiff.hpp"
#include "udsc/tasks.hpp"

namespace udsc::adaptation {

using ad::Matrix;

struct RowPartition {
    std::vector<int> private_rows;
    std::vector<int> shared_rows;
};

class PartitionMap {
public:
    // Non-reconstruction tasks get `private_rows` exclusive rows each after a
    // pool of `shared_rows` rows common to every such task of that modality;
    // reconstruction tasks own every row.
    static PartitionMap make_default(int image_rows, int text_rows, int private_rows = 2,
                                     int shared_rows = 2);

    bool has(TaskId task, Modality modality) const;
    const RowPartition& at(TaskId task, Modality modality) const;
    void set(TaskId task, Modality modality, RowPartition partition);

    // Sorted union of private and shared rows.
    std::vector<int> selected(TaskId task, Modality modality) const;

    // Throws config_invalid when a task of `tasks` lacks an entry for a
    // modality it uses, when sets overlap, or when an index is out of range.
    void validate(std::span<const TaskId> tasks, int image_rows, int text_rows) const;

    const std::map<std::pair<TaskId, Modality>, RowPartition>& entries() const { return entries_; }

private:
    std::map<std::pair<TaskId, Modality>, RowPartition> entries_;
};

struct FeaturePartition {
    Matrix private_part;
    Matrix shared_part;
};

struct LossBundle {
    double task_loss_a = 0.0;
    double task_loss_b = 0.0;
    double adaptation = 0.0;
    double total = 0.0;
};

struct TransmitRecord {
    TaskId task;
    int rows_selected = 0;
    int rows_total = 0;
    int symbols_sent = 0;

    double overhead_ratio() const {
        return rows_total == 0 ? 0.0 : static_cast<double>(rows_selected) / rows_total;
    }
};

struct Selection {
    std::optional<Matrix> image;
    std::optional<Matrix> text;
    TransmitRecord record;
};

// Gathers rows in map order. Throws index_out_of_range for bad indices.
FeaturePartition partition_features(const Matrix& features, TaskId task, Modality modality,
                                    const PartitionMap& map);

// Places the partition's rows back at their original indices of a zero
// matrix with `rows` rows.
Matrix scatter_partition(const FeaturePartition& part, const RowPartition& rows_of, int rows);

// Rows are feature vectors: ||E1 E2^T||_F, the norm of all cross inner
// products. Row counts may differ; widths must match.
double similarity(const Matrix& e1, const Matrix& e2);

// ||Ep_A Ep_B^T||_F - ||Es_A Es_B^T||_F; an empty side zeroes its term.
// `normalized` divides each term by sqrt(numel(E1) * numel(E2)).
double adaptation_loss(const FeaturePartition& a, const FeaturePartition& b, bool normalized = false);

// Graph form of adaptation_loss.
ad::Var adaptation_loss(ad::Var private_a, ad::Var shared_a, ad::Var private_b, ad::Var shared_b,
                        bool normalized = false);

Selection select_transmit(const std::optional<Matrix>& image, const std::optional<Matrix>& text,
                          TaskId task, const PartitionMap& map, int symbols_per_row);

} // namespace udsc::adaptation
