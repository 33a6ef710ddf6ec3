#include "doctest.h"
#include "gradcheck.hpp"

#include "udsc/error.hpp"

using namespace udsc;
using namespace udsc::ad;
using testing::gradient_error;
using testing::make_param;

namespace {
constexpr double kTol = 1e-6;
// Fixed random linear functional so that matrix-valued ops reduce to a scalar
// with a non-trivial upstream gradient.
Var probe(Tape& t, Var x, std::uint64_t seed = 99) {
    Parameter w = make_param(static_cast<int>(x.rows()), static_cast<int>(x.cols()), seed);
    return sum(mul(x, t.constant(w.value)));
}
} // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
    Parameter a = make_param(3, 4, 1), b = make_param(3, 4, 2), w = make_param(4, 5, 3), bias = make_param(1, 5, 4);
    CHECK(gradient_error({&a, &b}, [](Tape& t, auto& v) { return probe(t, add(v[0], v[1])); }) < kTol);
    CHECK(gradient_error({&a, &b}, [](Tape& t, auto& v) { return probe(t, sub(v[0], v[1])); }) < kTol);
    CHECK(gradient_error({&a, &b}, [](Tape& t, auto& v) { return probe(t, mul(v[0], v[1])); }) < kTol);
    CHECK(gradient_error({&a}, [](Tape& t, auto& v) { return probe(t, scale(add_scalar(v[0], 0.5), -1.7)); }) < kTol);
    CHECK(gradient_error({&a}, [](Tape& t, auto& v) { return probe(t, square(v[0])); }) < kTol);
    CHECK(gradient_error({&a}, [](Tape& t, auto& v) { return probe(t, sigmoid(v[0])); }) < kTol);
    CHECK(gradient_error({&a}, [](Tape& t, auto& v) { return probe(t, relu(v[0])); }) < kTol);
    CHECK(gradient_error({&a, &w}, [](Tape& t, auto& v) { return probe(t, matmul(v[0], v[1])); }) < kTol);
    CHECK(gradient_error({&a, &w, &bias}, [](Tape& t, auto& v) { return probe(t, linear(v[0], v[1], v[2])); }) < kTol);
    CHECK(gradient_error({&a}, [](Tape&, auto& v) { return mean(v[0]); }) < kTol);
}

TEST_CASE("shape ops match finite differences") {
    Parameter a = make_param(4, 3, 5), b = make_param(2, 3, 6), p = make_param(2, 3, 7);
    CHECK(gradient_error({&a, &b}, [](Tape& t, auto& v) {
              std::vector<Var> parts{v[0], v[1]};
              return probe(t, concat_rows(parts));
          }) < kTol);
    CHECK(gradient_error({&a}, [](Tape& t, auto& v) {
              std::vector<int> idx{3, 0, 3, 1, 3};
              return probe(t, gather_rows(v[0], idx));
          }) < kTol);
    CHECK(gradient_error({&a, &p}, [](Tape& t, auto& v) { return probe(t, add_tiled(v[0], v[1])); }) < kTol);
}

TEST_CASE("gather_rows rejects out-of-range indices") {
    Tape t;
    Var x = t.constant(Matrix::Zero(2, 2));
    std::vector<int> idx{0, 2};
    CHECK_THROWS_AS(gather_rows(x, idx), Error);
}

TEST_CASE("normalisation ops match finite differences") {
    Parameter x = make_param(5, 6, 8), g = make_param(1, 6, 9), b = make_param(1, 6, 10);
    CHECK(gradient_error({&x, &g, &b}, [](Tape& t, auto& v) { return probe(t, layer_norm(v[0], v[1], v[2])); }) < kTol);
    CHECK(gradient_error({&x}, [](Tape& t, auto& v) { return probe(t, layer_norm(v[0], Var{}, Var{})); }) < kTol);
    CHECK(gradient_error({&x}, [](Tape& t, auto& v) { return probe(t, l2_normalize_rows(v[0])); }) < kTol);
    Parameter y = make_param(6, 4, 11);
    CHECK(gradient_error({&y}, [](Tape& t, auto& v) { return probe(t, power_normalize_blocks(v[0], 2)); }) < kTol);
}

TEST_CASE("power normalisation gives unit mean symbol power per block") {
    Parameter y = make_param(6, 4, 12, 3.0);
    Tape t(false);
    Matrix out = power_normalize_blocks(t.param(y), 3).value();
    for (int blk = 0; blk < 2; ++blk) {
        const Matrix part = out.middleRows(blk * 3, 3);
        const double symbols = part.size() / 2.0;
        CHECK(part.squaredNorm() / symbols == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("multi-head attention matches finite differences and a dense oracle") {
    Parameter q = make_param(4, 6, 13), k = make_param(6, 6, 14), v = make_param(6, 6, 15);
    CHECK(gradient_error({&q, &k, &v}, [](Tape& t, auto& vs) {
              return probe(t, multi_head_attention(vs[0], vs[1], vs[2], 2, 2));
          }) < kTol);

    Tape t(false);
    Matrix got = multi_head_attention(t.param(q), t.param(k), t.param(v), 2, 2).value();
    // Oracle: explicit loops over blocks and heads.
    for (int blk = 0; blk < 2; ++blk)
        for (int h = 0; h < 2; ++h)
            for (int i = 0; i < 2; ++i) {
                const int qi = blk * 2 + i;
                std::vector<double> s(3);
                double mx = -1e300;
                for (int j = 0; j < 3; ++j) {
                    double dot = 0;
                    for (int c = 0; c < 3; ++c) dot += q.value(qi, h * 3 + c) * k.value(blk * 3 + j, h * 3 + c);
                    s[j] = dot / std::sqrt(3.0);
                    mx = std::max(mx, s[j]);
                }
                double z = 0;
                for (double& e : s) z += (e = std::exp(e - mx));
                for (int c = 0; c < 3; ++c) {
                    double o = 0;
                    for (int j = 0; j < 3; ++j) o += s[j] / z * v.value(blk * 3 + j, h * 3 + c);
                    CHECK(got(qi, h * 3 + c) == doctest::Approx(o).epsilon(1e-12));
                }
            }
}

TEST_CASE("losses match finite differences") {
    Parameter logits = make_param(4, 5, 16);
    std::vector<int> labels{0, 4, 2, 2};
    CHECK(gradient_error({&logits}, [&](Tape&, auto& v) { return cross_entropy(v[0], labels); }) < kTol);
    Parameter x = make_param(3, 3, 17);
    Matrix target = make_param(3, 3, 18).value;
    CHECK(gradient_error({&x}, [&](Tape&, auto& v) { return mse(v[0], target); }) < kTol);
    Parameter a = make_param(4, 3, 19), p = make_param(4, 3, 20), n = make_param(4, 3, 21);
    CHECK(gradient_error({&a, &p, &n}, [](Tape&, auto& v) { return triplet(v[0], v[1], v[2], 2.0); }) < kTol);
    Parameter e1 = make_param(3, 4, 22), e2 = make_param(5, 4, 23);
    CHECK(gradient_error({&e1, &e2}, [](Tape&, auto& v) { return frobenius_of_product(v[0], v[1]); }) < kTol);
}

TEST_CASE("frobenius_of_product of empty inputs is zero") {
    Tape t;
    Var e = t.constant(Matrix(0, 4));
    Var f = t.constant(Matrix::Ones(2, 4));
    CHECK(frobenius_of_product(e, f).scalar() == 0.0);
}

TEST_CASE("unused parameters receive exactly zero gradient") {
    Parameter used = make_param(2, 2, 24), unused = make_param(2, 2, 25);
    used.zero_grad();
    unused.zero_grad();
    Tape t;
    Var u = t.param(used);
    t.backward(sum(square(u)));
    CHECK(unused.grad.isZero(0.0));
    CHECK_FALSE(unused.touched);
    CHECK(used.touched);
}

TEST_CASE("backward requires a scalar") {
    Tape t;
    Var x = t.constant(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(x), Error);
}
