#pragma once

#include <functional>
#include <random>
#include <vector>

#include "udsc/autodiff.hpp"

namespace testing {

using udsc::ad::Matrix;
using udsc::ad::Parameter;
using udsc::ad::Tape;
using udsc::ad::Var;

inline Parameter make_param(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Parameter p;
    p.value = Matrix(rows, cols);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
    p.grad = Matrix::Zero(rows, cols);
    return p;
}

// Largest relative error between tape gradients and central differences.
inline double gradient_error(std::vector<Parameter*> params,
                             const std::function<Var(Tape&, std::vector<Var>&)>& f, double h = 1e-6) {
    for (Parameter* p : params) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
    {
        Tape t;
        std::vector<Var> vs;
        for (Parameter* p : params) vs.push_back(t.param(*p));
        t.backward(f(t, vs));
    }
    auto eval = [&] {
        Tape t(false);
        std::vector<Var> vs;
        for (Parameter* p : params) vs.push_back(t.param(*p));
        return f(t, vs).scalar();
    };
    double worst = 0.0;
    for (Parameter* p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double keep = p->value.data()[i];
            p->value.data()[i] = keep + h;
            const double up = eval();
            p->value.data()[i] = keep - h;
            const double down = eval();
            p->value.data()[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad.data()[i];
            const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace testing
