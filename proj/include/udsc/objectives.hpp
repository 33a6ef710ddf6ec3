#pragma once

// Task losses and evaluation metrics: cross entropy, triplet hinge, MSE,
// PSNR, sentence BLEU, Recall@1 and accuracy.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "udsc/autodiff.hpp"
#include "udsc/error.hpp"
#include "udsc/tasks.hpp"

namespace udsc::objectives {

using ad::Matrix;

inline constexpr double kDefaultMargin = 0.2;
inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kPsnrZeroMse = 1e-12;

struct TripletBatch {
    Eigen::VectorXd anchor;
    Eigen::VectorXd positive;
    Eigen::VectorXd negative;
    double margin = kDefaultMargin;
};

struct MetricReport {
    TaskId task;
    double snr_db = 0.0;
    std::string metric;
    double value = 0.0;
    double std = 0.0;
    int sample_count = 0;
    std::uint64_t seed = 0;
};

double cross_entropy(const Matrix& logits, std::span<const int> labels);

double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// max(d(a,p) - d(a,n) + m, 0) with d the squared Euclidean distance.
double triplet_loss(const TripletBatch& batch);

double mse(std::span<const double> x, std::span<const double> y);
double mse(const Matrix& x, const Matrix& y);

double psnr_from_mse(double mse_value, double max_val, double cap_db = kPsnrCapDb);
double psnr(std::span<const double> x, std::span<const double> y, double max_val,
            double cap_db = kPsnrCapDb);

// Sentence BLEU: uniform weights over 1..4-gram precisions, brevity penalty,
// add-one smoothing on orders 2..4. Zero when no unigram matches.
template <typename Token>
double bleu(std::span<const Token> reference, std::span<const Token> hypothesis, int max_order = 4) {
    if (reference.empty()) throw Error(ErrorCode::invalid_argument, "bleu: empty reference");
    if (hypothesis.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_order; ++n) {
        std::map<std::vector<Token>, int> ref_counts;
        for (std::size_t i = 0; i + n <= reference.size(); ++i)
            ++ref_counts[std::vector<Token>(reference.begin() + i, reference.begin() + i + n)];
        std::map<std::vector<Token>, int> hyp_counts;
        int total = 0;
        for (std::size_t i = 0; i + n <= hypothesis.size(); ++i, ++total)
            ++hyp_counts[std::vector<Token>(hypothesis.begin() + i, hypothesis.begin() + i + n)];
        int matched = 0;
        for (const auto& [gram, c] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(c, it->second);
        }
        double precision;
        if (n == 1) {
            if (matched == 0) return 0.0;
            precision = static_cast<double>(matched) / total;
        } else {
            precision = (matched + 1.0) / (total + 1.0);
        }
        log_sum += std::log(precision) / max_order;
    }
    const double r = static_cast<double>(reference.size());
    const double c = static_cast<double>(hypothesis.size());
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum);
}

template <typename Token>
double bleu(const std::vector<Token>& reference, const std::vector<Token>& hypothesis) {
    return bleu(std::span<const Token>(reference), std::span<const Token>(hypothesis));
}

// Fraction of queries whose Euclidean nearest gallery row shares the query's
// label. With exclude_self, gallery row i is not a candidate for query i.
// Ties resolve to the lowest gallery index.
double recall_at_1(const Matrix& queries, std::span<const int> query_labels, const Matrix& gallery,
                   std::span<const int> gallery_labels, bool exclude_self);
double recall_at_1(const Matrix& embeddings, std::span<const int> labels);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

} // namespace udsc::objectives
