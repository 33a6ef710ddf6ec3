#include "udsc/objectives.hpp"

#include <limits>

namespace udsc::objectives {

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows() || labels.empty())
        throw Error(ErrorCode::dimension_mismatch, "cross_entropy: one label per row required");
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols())
            throw Error(ErrorCode::invalid_argument, "cross_entropy: invalid label " + std::to_string(y));
        const double mx = logits.row(i).maxCoeff();
        const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        total += lse - logits(i, y);
    }
    return total / static_cast<double>(logits.rows());
}

double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "distance: size mismatch");
    return (a - b).squaredNorm();
}

double triplet_loss(const TripletBatch& batch) {
    if (batch.margin < 0.0) throw Error(ErrorCode::invalid_argument, "triplet margin must be >= 0");
    const double dp = squared_distance(batch.anchor, batch.positive);
    const double dn = squared_distance(batch.anchor, batch.negative);
    return std::max(dp - dn + batch.margin, 0.0);
}

double mse(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty())
        throw Error(ErrorCode::dimension_mismatch, "mse: shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return acc / static_cast<double>(x.size());
}

double mse(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw Error(ErrorCode::dimension_mismatch, "mse: shapes differ");
    return mse(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
               std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

double psnr_from_mse(double mse_value, double max_val, double cap_db) {
    if (max_val <= 0.0) throw Error(ErrorCode::invalid_argument, "psnr: max_val must be positive");
    if (mse_value < kPsnrZeroMse) return cap_db;
    return std::min(cap_db, 10.0 * std::log10(max_val * max_val / mse_value));
}

double psnr(std::span<const double> x, std::span<const double> y, double max_val, double cap_db) {
    return psnr_from_mse(mse(x, y), max_val, cap_db);
}

double recall_at_1(const Matrix& queries, std::span<const int> query_labels, const Matrix& gallery,
                   std::span<const int> gallery_labels, bool exclude_self) {
    if (queries.rows() == 0) throw Error(ErrorCode::invalid_argument, "recall_at_1: no queries");
    if (gallery.rows() < 2 || queries.cols() != gallery.cols())
        throw Error(ErrorCode::invalid_argument, "recall_at_1: degenerate gallery");
    if (static_cast<Eigen::Index>(query_labels.size()) != queries.rows() ||
        static_cast<Eigen::Index>(gallery_labels.size()) != gallery.rows())
        throw Error(ErrorCode::dimension_mismatch, "recall_at_1: label count mismatch");
    if (exclude_self && queries.rows() > gallery.rows())
        throw Error(ErrorCode::invalid_argument, "recall_at_1: self exclusion needs aligned gallery");
    int hits = 0;
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index arg = -1;
        for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
            if (exclude_self && g == q) continue;
            const double d = (gallery.row(g) - queries.row(q)).squaredNorm();
            if (d < best) {
                best = d;
                arg = g;
            }
        }
        if (gallery_labels[static_cast<std::size_t>(arg)] == query_labels[static_cast<std::size_t>(q)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.rows());
}

double recall_at_1(const Matrix& embeddings, std::span<const int> labels) {
    return recall_at_1(embeddings, labels, embeddings, labels, true);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size() || labels.empty())
        throw Error(ErrorCode::dimension_mismatch, "accuracy: length mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

} // namespace udsc::objectives
