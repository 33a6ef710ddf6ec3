#include "udsc/autodiff.hpp"

#include <cmath>
#include <memory>

#include "udsc/error.hpp"

namespace udsc::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorCode::dimension_mismatch,
                    std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

Matrix scalar_matrix(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
}

} // namespace

void Parameter::zero_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
        grad = Matrix::Zero(value.rows(), value.cols());
    else
        grad.setZero();
    touched = false;
}

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
    Node n{p.value, {}, {}, nullptr, false};
    if (record_) {
        n.param = &p;
        n.needs_grad = true;
        p.touched = true;
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (record_)
        for (const Var& v : inputs)
            if (v.valid() && needs_grad(v)) needs = true;
    Node n{std::move(value), {}, {}, nullptr, needs};
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

Matrix& Tape::grad_buffer(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var out) {
    if (!record_) throw Error(ErrorCode::invalid_argument, "backward on a non-recording tape");
    if (out.rows() != 1 || out.cols() != 1)
        throw Error(ErrorCode::dimension_mismatch, "backward requires a 1x1 output");
    Node& root = nodes_[static_cast<std::size_t>(out.id)];
    if (!root.needs_grad) return;
    root.grad = scalar_matrix(1.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, n.grad, n.value);
        if (n.param) n.param->grad += n.grad;
    }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    return a.tape->push(a.value() + b.value(), {a, b},
                        [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            t.accumulate(a, g);
                            t.accumulate(b, g);
                        });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    return a.tape->push(a.value() - b.value(), {a, b},
                        [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            t.accumulate(a, g);
                            t.accumulate(b, -g);
                        });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    return a.tape->push(a.value().cwiseProduct(b.value()), {a, b},
                        [a, b](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                            if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                        });
}

Var scale(Var a, double s) {
    return a.tape->push(a.value() * s, {a},
                        [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
    return a.tape->push(a.value().array() + s, {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g); });
}

Var add_constant(Var a, const Matrix& c) {
    require_same_shape(a.value(), c, "add_constant");
    return a.tape->push(a.value() + c, {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g); });
}

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows())
        throw Error(ErrorCode::dimension_mismatch, "matmul: inner dimensions differ");
    Matrix out = a.value() * b.value();
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_buffer(a).noalias() += g * b.value().transpose();
        if (t.needs_grad(b)) t.grad_buffer(b).noalias() += a.value().transpose() * g;
    });
}

Var linear(Var x, Var w, Var b) {
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
        throw Error(ErrorCode::dimension_mismatch, "linear: shape mismatch");
    Matrix out = x.value() * w.value();
    out.rowwise() += b.value().row(0);
    return x.tape->push(std::move(out), {x, w, b},
                        [x, w, b](Tape& t, const Matrix& g, const Matrix&) {
                            if (t.needs_grad(x)) t.grad_buffer(x).noalias() += g * w.value().transpose();
                            if (t.needs_grad(w)) t.grad_buffer(w).noalias() += x.value().transpose() * g;
                            if (t.needs_grad(b)) t.grad_buffer(b) += g.colwise().sum();
                        });
}

Var relu(Var a) {
    return a.tape->push(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

Var sigmoid(Var a) {
    Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return a.tape->push(std::move(y), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
        t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var square(Var a) {
    return a.tape->push(a.value().array().square().matrix(), {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) {
                            t.accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
                        });
}

Var sum(Var a) {
    return a.tape->push(scalar_matrix(a.value().sum()), {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) {
                            t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                        });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return a.tape->push(scalar_matrix(a.value().sum() / n), {a},
                        [a, n](Tape& t, const Matrix& g, const Matrix&) {
                            t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
                        });
}

Var sum_scalars(std::span<const Var> xs) {
    if (xs.empty()) throw Error(ErrorCode::invalid_argument, "sum_scalars: empty input");
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error(ErrorCode::invalid_argument, "concat_rows: no inputs");
    const Eigen::Index cols = parts[0].cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw Error(ErrorCode::dimension_mismatch, "concat_rows: width mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].tape->push(std::move(out), parts,
                               [saved](Tape& t, const Matrix& g, const Matrix&) {
                                   Eigen::Index r = 0;
                                   for (const Var& p : saved) {
                                       if (t.needs_grad(p)) t.grad_buffer(p) += g.middleRows(r, p.rows());
                                       r += p.rows();
                                   }
                               });
}

Var gather_rows(Var a, std::span<const int> index) {
    const Matrix& src = a.value();
    Matrix out(static_cast<Eigen::Index>(index.size()), src.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= src.rows())
            throw Error(ErrorCode::index_out_of_range,
                        "gather_rows: row " + std::to_string(index[i]) + " outside [0, " +
                            std::to_string(src.rows()) + ")");
        out.row(static_cast<Eigen::Index>(i)) = src.row(index[i]);
    }
    std::vector<int> idx(index.begin(), index.end());
    return a.tape->push(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g, const Matrix&) {
        Matrix& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var add_tiled(Var a, Var p) {
    const Eigen::Index r = p.rows();
    if (r == 0 || a.rows() % r != 0 || a.cols() != p.cols())
        throw Error(ErrorCode::dimension_mismatch, "add_tiled: rows must be a multiple of the tile");
    const Eigen::Index n = a.rows() / r;
    Matrix out = a.value();
    for (Eigen::Index b = 0; b < n; ++b) out.middleRows(b * r, r) += p.value();
    return a.tape->push(std::move(out), {a, p}, [a, p, r, n](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(a, g);
        if (t.needs_grad(p)) {
            Matrix& gp = t.grad_buffer(p);
            for (Eigen::Index b = 0; b < n; ++b) gp += g.middleRows(b * r, r);
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Matrix& v = x.value();
    const Eigen::Index n = v.rows(), d = v.cols();
    Matrix xhat(n, d);
    auto inv_std = std::make_shared<Vector>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = v.row(i).mean();
        const double var = (v.row(i).array() - mu).square().mean();
        (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (v.row(i).array() - mu) * (*inv_std)(i);
    }
    const bool affine = gamma.valid();
    Matrix out = xhat;
    if (affine) {
        out.array().rowwise() *= gamma.value().row(0).array();
        out.rowwise() += beta.value().row(0);
    }
    std::vector<Var> inputs = {x};
    if (affine) {
        inputs.push_back(gamma);
        inputs.push_back(beta);
    }
    auto saved_xhat = std::make_shared<Matrix>(std::move(xhat));
    return x.tape->push(
        std::move(out), inputs,
        [x, gamma, beta, affine, inv_std, saved_xhat](Tape& t, const Matrix& g, const Matrix&) {
            const Matrix& xh = *saved_xhat;
            Matrix dxhat = g;
            if (affine) {
                dxhat.array().rowwise() *= gamma.value().row(0).array();
                if (t.needs_grad(gamma)) t.grad_buffer(gamma) += g.cwiseProduct(xh).colwise().sum();
                if (t.needs_grad(beta)) t.grad_buffer(beta) += g.colwise().sum();
            }
            if (!t.needs_grad(x)) return;
            Matrix& gx = t.grad_buffer(x);
            for (Eigen::Index i = 0; i < xh.rows(); ++i) {
                const double m1 = dxhat.row(i).mean();
                const double m2 = dxhat.row(i).cwiseProduct(xh.row(i)).mean();
                gx.row(i).array() +=
                    (*inv_std)(i) * (dxhat.row(i).array() - m1 - xh.row(i).array() * m2);
            }
        });
}

Var l2_normalize_rows(Var x, double eps) {
    const Matrix& v = x.value();
    Vector norms = v.rowwise().norm().cwiseMax(eps);
    Matrix out = v.array().colwise() / norms.array();
    return x.tape->push(std::move(out), {x}, [x, norms](Tape& t, const Matrix& g, const Matrix& y) {
        Vector dots = y.cwiseProduct(g).rowwise().sum();
        Matrix gx = g - (y.array().colwise() * dots.array()).matrix();
        gx.array().colwise() /= norms.array();
        t.accumulate(x, gx);
    });
}

Var power_normalize_blocks(Var x, int rows_per_block) {
    const Matrix& v = x.value();
    if (rows_per_block <= 0 || v.rows() % rows_per_block != 0 || v.cols() % 2 != 0)
        throw Error(ErrorCode::dimension_mismatch, "power_normalize_blocks: bad block layout");
    const Eigen::Index blocks = v.rows() / rows_per_block;
    const double n_sym = static_cast<double>(rows_per_block * v.cols() / 2);
    Vector scales(blocks);
    Matrix out = v;
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const double energy = v.middleRows(b * rows_per_block, rows_per_block).squaredNorm();
        scales(b) = energy > 0.0 ? std::sqrt(energy / n_sym) : 0.0;
        if (scales(b) > 0.0) out.middleRows(b * rows_per_block, rows_per_block) /= scales(b);
    }
    return x.tape->push(std::move(out), {x},
                        [x, scales, rows_per_block, n_sym](Tape& t, const Matrix& g, const Matrix&) {
                            Matrix& gx = t.grad_buffer(x);
                            const Matrix& v = x.value();
                            for (Eigen::Index b = 0; b < scales.size(); ++b) {
                                auto gb = g.middleRows(b * rows_per_block, rows_per_block);
                                auto xb = v.middleRows(b * rows_per_block, rows_per_block);
                                const double s = scales(b);
                                if (s == 0.0) {
                                    gx.middleRows(b * rows_per_block, rows_per_block) += gb;
                                    continue;
                                }
                                const double dot = xb.cwiseProduct(gb).sum();
                                gx.middleRows(b * rows_per_block, rows_per_block) +=
                                    gb / s - xb * (dot / (n_sym * s * s * s));
                            }
                        });
}

Var multi_head_attention(Var q, Var k, Var v, int heads, int blocks) {
    const Matrix& Q = q.value();
    const Matrix& K = k.value();
    const Matrix& V = v.value();
    if (heads <= 0 || blocks <= 0 || Q.cols() % heads != 0 || Q.cols() != K.cols() ||
        K.cols() != V.cols() || K.rows() != V.rows() || Q.rows() % blocks != 0 ||
        K.rows() % blocks != 0)
        throw Error(ErrorCode::dimension_mismatch, "multi_head_attention: shape mismatch");
    const Eigen::Index lq = Q.rows() / blocks, lk = K.rows() / blocks;
    const Eigen::Index dh = Q.cols() / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<Matrix>>();
    if (q.tape->recording()) probs->reserve(static_cast<std::size_t>(blocks * heads));
    Matrix out(Q.rows(), Q.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto qb = Q.block(b * lq, h * dh, lq, dh);
            auto kb = K.block(b * lk, h * dh, lk, dh);
            auto vb = V.block(b * lk, h * dh, lk, dh);
            Matrix s = (qb * kb.transpose()) * sc;
            for (Eigen::Index i = 0; i < lq; ++i) {
                const double mx = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - mx).exp();
                s.row(i) /= s.row(i).sum();
            }
            out.block(b * lq, h * dh, lq, dh).noalias() = s * vb;
            if (q.tape->recording()) probs->push_back(std::move(s));
        }
    }
    return q.tape->push(
        std::move(out), {q, k, v},
        [q, k, v, heads, blocks, lq, lk, dh, sc, probs](Tape& t, const Matrix& g, const Matrix&) {
            const Matrix& Q = q.value();
            const Matrix& K = k.value();
            const Matrix& V = v.value();
            Matrix gq = Matrix::Zero(Q.rows(), Q.cols());
            Matrix gk = Matrix::Zero(K.rows(), K.cols());
            Matrix gv = Matrix::Zero(V.rows(), V.cols());
            for (Eigen::Index b = 0; b < blocks; ++b) {
                for (Eigen::Index h = 0; h < heads; ++h) {
                    const Matrix& a = (*probs)[static_cast<std::size_t>(b * heads + h)];
                    auto go = g.block(b * lq, h * dh, lq, dh);
                    auto qb = Q.block(b * lq, h * dh, lq, dh);
                    auto kb = K.block(b * lk, h * dh, lk, dh);
                    auto vb = V.block(b * lk, h * dh, lk, dh);
                    Matrix da = go * vb.transpose();
                    gv.block(b * lk, h * dh, lk, dh).noalias() += a.transpose() * go;
                    Vector rs = a.cwiseProduct(da).rowwise().sum();
                    Matrix ds = a.array() * (da.array().colwise() - rs.array());
                    gq.block(b * lq, h * dh, lq, dh).noalias() += (ds * kb) * sc;
                    gk.block(b * lk, h * dh, lk, dh).noalias() += (ds.transpose() * qb) * sc;
                }
            }
            t.accumulate(q, gq);
            t.accumulate(k, gk);
            t.accumulate(v, gv);
        });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    const Matrix& z = logits.value();
    if (static_cast<Eigen::Index>(labels.size()) != z.rows())
        throw Error(ErrorCode::dimension_mismatch, "cross_entropy: label count differs from rows");
    const Eigen::Index n = z.rows();
    Matrix probs(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= z.cols())
            throw Error(ErrorCode::invalid_argument, "cross_entropy: label " + std::to_string(y) +
                                                         " outside [0, " + std::to_string(z.cols()) + ")");
        const double mx = z.row(i).maxCoeff();
        probs.row(i) = (z.row(i).array() - mx).exp();
        const double denom = probs.row(i).sum();
        probs.row(i) /= denom;
        loss += -(z(i, y) - mx - std::log(denom));
    }
    loss /= static_cast<double>(n);
    std::vector<int> ys(labels.begin(), labels.end());
    return logits.tape->push(scalar_matrix(loss), {logits},
                             [logits, ys, probs](Tape& t, const Matrix& g, const Matrix&) {
                                 Matrix gz = probs;
                                 for (std::size_t i = 0; i < ys.size(); ++i)
                                     gz(static_cast<Eigen::Index>(i), ys[i]) -= 1.0;
                                 gz *= g(0, 0) / static_cast<double>(ys.size());
                                 t.accumulate(logits, gz);
                             });
}

Var mse(Var x, const Matrix& target) {
    require_same_shape(x.value(), target, "mse");
    Matrix diff = x.value() - target;
    const double n = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / n;
    return x.tape->push(scalar_matrix(loss), {x}, [x, diff, n](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(x, diff * (2.0 * g(0, 0) / n));
    });
}

Var triplet(Var a, Var p, Var n, double margin) {
    require_same_shape(a.value(), p.value(), "triplet");
    require_same_shape(a.value(), n.value(), "triplet");
    const Matrix dp = a.value() - p.value();
    const Matrix dn = a.value() - n.value();
    const Eigen::Index rows = dp.rows();
    Vector hinge = dp.rowwise().squaredNorm() - dn.rowwise().squaredNorm();
    hinge.array() += margin;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) loss += std::max(hinge(i), 0.0);
    loss /= static_cast<double>(rows);
    return a.tape->push(
        scalar_matrix(loss), {a, p, n}, [a, p, n, dp, dn, hinge](Tape& t, const Matrix& g, const Matrix&) {
            const double w = g(0, 0) / static_cast<double>(hinge.size());
            Matrix ga = Matrix::Zero(dp.rows(), dp.cols());
            Matrix gp = ga, gn = ga;
            for (Eigen::Index i = 0; i < hinge.size(); ++i) {
                if (hinge(i) <= 0.0) continue;
                ga.row(i) = 2.0 * w * (dp.row(i) - dn.row(i));
                gp.row(i) = -2.0 * w * dp.row(i);
                gn.row(i) = 2.0 * w * dn.row(i);
            }
            t.accumulate(a, ga);
            t.accumulate(p, gp);
            t.accumulate(n, gn);
        });
}

Var frobenius_of_product(Var e1, Var e2) {
    if (e1.cols() != e2.cols())
        throw Error(ErrorCode::dimension_mismatch,
                    "similarity: feature widths " + std::to_string(e1.cols()) + " and " +
                        std::to_string(e2.cols()) + " differ");
    if (e1.rows() == 0 || e2.rows() == 0)
        return e1.tape->constant(scalar_matrix(0.0));
    Matrix prod = e1.value() * e2.value().transpose();
    const double norm = prod.norm();
    return e1.tape->push(scalar_matrix(norm), {e1, e2},
                         [e1, e2, prod, norm](Tape& t, const Matrix& g, const Matrix&) {
                             if (norm == 0.0) return;
                             const Matrix dp = prod * (g(0, 0) / norm);
                             if (t.needs_grad(e1)) t.grad_buffer(e1).noalias() += dp * e2.value();
                             if (t.needs_grad(e2)) t.grad_buffer(e2).noalias() += dp.transpose() * e1.value();
                         });
}

} // namespace udsc::ad
