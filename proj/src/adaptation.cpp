#include "udsc/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "udsc/error.hpp"

namespace udsc::adaptation {

namespace {

Matrix gather(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= m.rows())
            throw Error(ErrorCode::index_out_of_range,
                        "partition row " + std::to_string(rows[i]) + " outside [0, " +
                            std::to_string(m.rows()) + ")");
        out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    }
    return out;
}

std::vector<int> iota_rows(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

double size_norm(Eigen::Index n1, Eigen::Index n2) {
    return std::sqrt(static_cast<double>(n1) * static_cast<double>(n2));
}

} // namespace

PartitionMap PartitionMap::make_default(int image_rows, int text_rows, int private_rows, int shared_rows) {
    PartitionMap map;
    for (Modality m : {Modality::image, Modality::text}) {
        const int total = m == Modality::image ? image_rows : text_rows;
        int next = shared_rows;
        std::vector<int> shared = iota_rows(shared_rows);
        for (TaskId t : kAllTasks) {
            const TaskSpec& spec = task_spec(t);
            if (!spec.uses(m)) continue;
            if (spec.reconstruction) {
                map.set(t, m, {iota_rows(total), {}});
                continue;
            }
            RowPartition p;
            for (int i = 0; i < private_rows; ++i) p.private_rows.push_back(next++);
            p.shared_rows = shared;
            map.set(t, m, std::move(p));
        }
        if (next > total)
            throw Error(ErrorCode::config_invalid,
                        std::string(to_string(m)) + " partition needs " + std::to_string(next) +
                            " rows but the encoder produces " + std::to_string(total));
    }
    return map;
}

bool PartitionMap::has(TaskId task, Modality modality) const {
    return entries_.count({task, modality}) > 0;
}

const RowPartition& PartitionMap::at(TaskId task, Modality modality) const {
    auto it = entries_.find({task, modality});
    if (it == entries_.end())
        throw Error(ErrorCode::unknown_task, "no partition for " + std::string(to_string(task)) + "/" +
                                                 std::string(to_string(modality)));
    return it->second;
}

void PartitionMap::set(TaskId task, Modality modality, RowPartition partition) {
    entries_[{task, modality}] = std::move(partition);
}

std::vector<int> PartitionMap::selected(TaskId task, Modality modality) const {
    const RowPartition& p = at(task, modality);
    std::vector<int> rows = p.private_rows;
    rows.insert(rows.end(), p.shared_rows.begin(), p.shared_rows.end());
    std::sort(rows.begin(), rows.end());
    return rows;
}

void PartitionMap::validate(std::span<const TaskId> tasks, int image_rows, int text_rows) const {
    for (TaskId t : tasks) {
        for (Modality m : {Modality::image, Modality::text}) {
            if (!task_spec(t).uses(m)) continue;
            const std::string where = "partition." + std::string(to_string(t)) + "." + std::string(to_string(m));
            if (!has(t, m)) throw Error(ErrorCode::config_invalid, where + ": missing entry");
            const RowPartition& p = at(t, m);
            const int total = m == Modality::image ? image_rows : text_rows;
            std::set<int> seen;
            for (const auto* set : {&p.private_rows, &p.shared_rows})
                for (int r : *set) {
                    if (r < 0 || r >= total)
                        throw Error(ErrorCode::config_invalid,
                                    where + ": row " + std::to_string(r) + " outside [0, " + std::to_string(total) + ")");
                    if (!seen.insert(r).second)
                        throw Error(ErrorCode::config_invalid,
                                    where + ": row " + std::to_string(r) + " listed twice");
                }
            if (seen.empty()) throw Error(ErrorCode::config_invalid, where + ": no rows selected");
        }
    }
}

FeaturePartition partition_features(const Matrix& features, TaskId task, Modality modality,
                                    const PartitionMap& map) {
    const RowPartition& p = map.at(task, modality);
    return {gather(features, p.private_rows), gather(features, p.shared_rows)};
}

Matrix scatter_partition(const FeaturePartition& part, const RowPartition& rows_of, int rows) {
    Matrix out = Matrix::Zero(rows, part.private_part.cols());
    for (std::size_t i = 0; i < rows_of.private_rows.size(); ++i)
        out.row(rows_of.private_rows[i]) = part.private_part.row(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < rows_of.shared_rows.size(); ++i)
        out.row(rows_of.shared_rows[i]) = part.shared_part.row(static_cast<Eigen::Index>(i));
    return out;
}

double similarity(const Matrix& e1, const Matrix& e2) {
    if (e1.cols() != e2.cols())
        throw Error(ErrorCode::dimension_mismatch, "similarity: feature widths " + std::to_string(e1.cols()) +
                                                       " and " + std::to_string(e2.cols()) + " differ");
    if (e1.rows() == 0 || e2.rows() == 0) return 0.0;
    return (e1 * e2.transpose()).norm();
}

double adaptation_loss(const FeaturePartition& a, const FeaturePartition& b, bool normalized) {
    const Eigen::Index width = a.private_part.cols();
    for (const Matrix* m : {&b.private_part, &a.shared_part, &b.shared_part})
        if (m->cols() != width)
            throw Error(ErrorCode::dimension_mismatch, "adaptation_loss: feature widths differ");
    double priv = similarity(a.private_part, b.private_part);
    double shared = similarity(a.shared_part, b.shared_part);
    if (normalized) {
        if (priv != 0.0) priv /= size_norm(a.private_part.size(), b.private_part.size());
        if (shared != 0.0) shared /= size_norm(a.shared_part.size(), b.shared_part.size());
    }
    return priv - shared;
}

ad::Var adaptation_loss(ad::Var private_a, ad::Var shared_a, ad::Var private_b, ad::Var shared_b,
                        bool normalized) {
    ad::Var priv = ad::frobenius_of_product(private_a, private_b);
    ad::Var shared = ad::frobenius_of_product(shared_a, shared_b);
    if (normalized) {
        if (private_a.rows() > 0 && private_b.rows() > 0)
            priv = ad::scale(priv, 1.0 / size_norm(private_a.value().size(), private_b.value().size()));
        if (shared_a.rows() > 0 && shared_b.rows() > 0)
            shared = ad::scale(shared, 1.0 / size_norm(shared_a.value().size(), shared_b.value().size()));
    }
    return ad::sub(priv, shared);
}

Selection select_transmit(const std::optional<Matrix>& image, const std::optional<Matrix>& text,
                          TaskId task, const PartitionMap& map, int symbols_per_row) {
    const TaskSpec& spec = task_spec(task);
    if (spec.uses_image != image.has_value() || spec.uses_text != text.has_value())
        throw Error(ErrorCode::invalid_argument,
                    "select_transmit: modalities do not match task " + std::string(to_string(task)));
    Selection sel;
    sel.record.task = task;
    if (image) {
        sel.image = gather(*image, map.selected(task, Modality::image));
        sel.record.rows_selected += static_cast<int>(sel.image->rows());
        sel.record.rows_total += static_cast<int>(image->rows());
    }
    if (text) {
        sel.text = gather(*text, map.selected(task, Modality::text));
        sel.record.rows_selected += static_cast<int>(sel.text->rows());
        sel.record.rows_total += static_cast<int>(text->rows());
    }
    sel.record.symbols_sent = sel.record.rows_selected * symbols_per_row;
    return sel;
}

} // namespace udsc::adaptation
