#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace testing {

using Dense = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense triple loop: sqrt(sum_ij (sum_k a_ik b_jk)^2).
inline double oracle_similarity(const Dense& a, const Dense& b) {
    double total = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            double dot = 0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) dot += a(i, k) * b(j, k);
            total += dot * dot;
        }
    return std::sqrt(total);
}

// BLEU that counts n-grams by pairwise comparison instead of hashing.
inline double brute_bleu(const std::vector<int>& ref, const std::vector<int>& hyp) {
    if (hyp.empty()) return 0.0;
    double log_sum = 0;
    for (int n = 1; n <= 4; ++n) {
        const int hyp_grams = std::max(0, static_cast<int>(hyp.size()) - n + 1);
        const int ref_grams = std::max(0, static_cast<int>(ref.size()) - n + 1);
        auto same = [n](const std::vector<int>& a, int i, const std::vector<int>& b, int j) {
            for (int k = 0; k < n; ++k)
                if (a[i + k] != b[j + k]) return false;
            return true;
        };
        int matched = 0;
        for (int i = 0; i < hyp_grams; ++i) {
            bool first = true;
            for (int p = 0; p < i; ++p)
                if (same(hyp, p, hyp, i)) first = false;
            if (!first) continue;
            int in_hyp = 0, in_ref = 0;
            for (int p = 0; p < hyp_grams; ++p) in_hyp += same(hyp, p, hyp, i);
            for (int p = 0; p < ref_grams; ++p) in_ref += same(ref, p, hyp, i);
            matched += std::min(in_hyp, in_ref);
        }
        double precision;
        if (n == 1) {
            if (matched == 0) return 0.0;
            precision = static_cast<double>(matched) / hyp_grams;
        } else {
            precision = (matched + 1.0) / (hyp_grams + 1.0);
        }
        log_sum += 0.25 * std::log(precision);
    }
    const double r = static_cast<double>(ref.size()), c = static_cast<double>(hyp.size());
    return (c > r ? 1.0 : std::exp(1 - r / c)) * std::exp(log_sum);
}

// Exhaustive leave-one-out nearest-neighbour scan; ties keep the lowest index.
inline double scan_recall_at_1(const Dense& e, const std::vector<int>& labels) {
    int hits = 0;
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        Eigen::Index best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < e.rows(); ++k) {
            if (k == i) continue;
            double d = 0;
            for (Eigen::Index j = 0; j < e.cols(); ++j) d += (e(i, j) - e(k, j)) * (e(i, j) - e(k, j));
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        hits += labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(e.rows());
}

} // namespace testing
