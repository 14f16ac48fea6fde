#include "nlsd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nlsd/errors.hpp"

namespace nlsd::ad {

namespace {

std::string shape_str(const Dense& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Dense& a, const Dense& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
    }
}

}  // namespace

// ---- Tape -------------------------------------------------------------------

Var Tape::constant(Dense value) {
    if (!value.allFinite()) throw ShapeError("non-finite entry in tape leaf");
    nodes_.push_back(Node{std::move(value), Dense(), nullptr, false, false});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(Dense value) {
    if (!value.allFinite()) throw ShapeError("non-finite entry in tape leaf");
    nodes_.push_back(Node{std::move(value), Dense(), nullptr, true, false});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Dense value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Dense value, std::span<const Var> parents, BackwardFn fn) {
    bool rg = false;
    for (Var p : parents) rg = rg || nodes_.at(p.id).requires_grad;
    nodes_.push_back(Node{std::move(value), Dense(), rg ? std::move(fn) : nullptr, rg, false});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Dense Tape::grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (!n.has_grad) return Dense::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Dense& Tape::grad_ref(std::uint32_t id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Dense::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    const auto& ln = nodes_.at(loss.id);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
        throw NotScalar("backward requires a 1x1 loss, got " + shape_str(ln.value));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    grad_ref(loss.id)(0, 0) = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.has_grad && n.backward) n.backward(*this, i);
    }
}

// ---- elementwise / linear algebra -----------------------------------------

Var matmul(Tape& t, Var a, Var b) {
    const Dense& A = t.value(a);
    const Dense& B = t.value(b);
    if (A.cols() != B.rows()) throw ShapeError("matmul: " + shape_str(A) + " * " + shape_str(B));
    Dense out = A * B;
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
        if (t.requires_grad(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    });
}

Var add(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Dense out = t.value(a) + t.value(b);
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(a)) t.grad_ref(a) += g;
        if (t.requires_grad(b)) t.grad_ref(b) += g;
    });
}

Var sub(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    Dense out = t.value(a) - t.value(b);
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(a)) t.grad_ref(a) += g;
        if (t.requires_grad(b)) t.grad_ref(b) -= g;
    });
}

Var hadamard(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "hadamard");
    Dense out = t.value(a).cwiseProduct(t.value(b));
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(a)) t.grad_ref(a) += g.cwiseProduct(t.value(b));
        if (t.requires_grad(b)) t.grad_ref(b) += g.cwiseProduct(t.value(a));
    });
}

Var scale(Tape& t, Var a, double s) {
    Dense out = s * t.value(a);
    return t.record(std::move(out), {a}, [a, s](Tape& t, std::uint32_t self) {
        t.grad_ref(a) += s * t.out_grad(self);
    });
}

Var add_scalar(Tape& t, Var a, double s) {
    Dense out = t.value(a).array() + s;
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) { t.grad_ref(a) += t.out_grad(self); });
}

Var add_row(Tape& t, Var a, Var bias) {
    const Dense& A = t.value(a);
    const Dense& b = t.value(bias);
    if (b.rows() != 1 || b.cols() != A.cols()) throw ShapeError("add_row: bias must be 1x" + std::to_string(A.cols()));
    Dense out = A.rowwise() + b.row(0);
    return t.record(std::move(out), {a, bias}, [a, bias](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(a)) t.grad_ref(a) += g;
        if (t.requires_grad(bias)) t.grad_ref(bias) += g.colwise().sum();
    });
}

Var relu(Tape& t, Var a) {
    const Dense& A = t.value(a);
    if (t.watching_kinks()) {
        for (Eigen::Index i = 0; i < A.size(); ++i) t.check_kink(A.data()[i]);
    }
    Dense out = A.cwiseMax(0.0);
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& x = t.value(a);
        Dense& ga = t.grad_ref(a);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
        }
    });
}

Var elu(Tape& t, Var a) {
    const Dense& A = t.value(a);
    Dense out = A.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& x = t.value(a);
        Dense& ga = t.grad_ref(a);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double xi = x.data()[i];
            ga.data()[i] += g.data()[i] * (xi > 0.0 ? 1.0 : std::exp(xi));
        }
    });
}

Var tanh(Tape& t, Var a) {
    Dense out = t.value(a).array().tanh();
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& y = t.value(Var{self});
        t.grad_ref(a).array() += t.out_grad(self).array() * (1.0 - y.array().square());
    });
}

Var sigmoid(Tape& t, Var a) {
    Dense out = t.value(a).unaryExpr([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& y = t.value(Var{self});
        t.grad_ref(a).array() += t.out_grad(self).array() * y.array() * (1.0 - y.array());
    });
}

Var softplus(Tape& t, Var a) {
    Dense out = t.value(a).unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& x = t.value(a);
        const Dense sig = x.unaryExpr([](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        });
        t.grad_ref(a) += t.out_grad(self).cwiseProduct(sig);
    });
}

Var abs(Tape& t, Var a) {
    const Dense& A = t.value(a);
    if (t.watching_kinks()) {
        for (Eigen::Index i = 0; i < A.size(); ++i) t.check_kink(A.data()[i]);
    }
    Dense out = A.cwiseAbs();
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& x = t.value(a);
        Dense& ga = t.grad_ref(a);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double xi = x.data()[i];
            ga.data()[i] += xi > 0.0 ? g.data()[i] : (xi < 0.0 ? -g.data()[i] : 0.0);
        }
    });
}

// ---- structural -------------------------------------------------------------

Var concat_cols(Tape& t, std::initializer_list<Var> parts) {
    if (parts.size() == 0) throw ShapeError("concat_cols: no inputs");
    const Eigen::Index rows = t.value(*parts.begin()).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += t.value(p).cols();
    }
    Dense out(rows, cols);
    std::vector<Var> vars(parts);
    Eigen::Index c0 = 0;
    for (Var p : vars) {
        out.middleCols(c0, t.value(p).cols()) = t.value(p);
        c0 += t.value(p).cols();
    }
    return t.record(std::move(out), std::span<const Var>(vars), [vars](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Eigen::Index c = 0;
        for (Var p : vars) {
            const Eigen::Index w = t.value(p).cols();
            if (t.requires_grad(p)) t.grad_ref(p) += g.middleCols(c, w);
            c += w;
        }
    });
}

Var gather_rows(Tape& t, Var a, Index rows) {
    const Dense& A = t.value(a);
    Dense out(static_cast<Eigen::Index>(rows->size()), A.cols());
    for (std::size_t i = 0; i < rows->size(); ++i) {
        const int r = (*rows)[i];
        if (r < 0 || r >= A.rows()) throw ShapeError("gather_rows: row index out of range");
        out.row(static_cast<Eigen::Index>(i)) = A.row(r);
    }
    return t.record(std::move(out), {a}, [a, rows](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < rows->size(); ++i) ga.row((*rows)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
    const Dense& A = t.value(a);
    if (rows * cols != A.size()) throw ShapeError("reshape: element count mismatch");
    Dense out = ConstDenseMap(A.data(), rows, cols);
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& ga = t.grad_ref(a);
        DenseMap(ga.data(), g.rows(), g.cols()) += g;
    });
}

Var row_mean(Tape& t, Var a) {
    const Dense& A = t.value(a);
    if (A.cols() == 0) throw ShapeError("row_mean: no columns");
    Dense out = A.rowwise().mean();
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& ga = t.grad_ref(a);
        const double inv = 1.0 / static_cast<double>(ga.cols());
        ga.colwise() += g.col(0) * inv;
    });
}

Var row_squared_norm(Tape& t, Var a) {
    Dense out = t.value(a).rowwise().squaredNorm();
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& x = t.value(a);
        t.grad_ref(a) += 2.0 * (x.array().colwise() * g.col(0).array()).matrix();
    });
}

Var sum(Tape& t, Var a) {
    Dense out(1, 1);
    out(0, 0) = t.value(a).sum();
    return t.record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        t.grad_ref(a).array() += t.out_grad(self)(0, 0);
    });
}

Var stalk_scale(Tape& t, Var x, Var v) {
    const Dense& X = t.value(x);
    const Dense& s = t.value(v);
    if (s.rows() != 1) throw ShapeError("stalk_scale: scale must be a row vector");
    const Eigen::Index d = s.cols();
    if (d == 0 || X.rows() % d != 0) throw ShapeError("stalk_scale: row count is not a multiple of d");
    Dense out(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) out.row(r) = X.row(r) * s(0, r % d);
    return t.record(std::move(out), {x, v}, [x, v, d](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& X = t.value(x);
        const Dense& s = t.value(v);
        if (t.requires_grad(x)) {
            Dense& gx = t.grad_ref(x);
            for (Eigen::Index r = 0; r < X.rows(); ++r) gx.row(r) += g.row(r) * s(0, r % d);
        }
        if (t.requires_grad(v)) {
            Dense& gv = t.grad_ref(v);
            for (Eigen::Index r = 0; r < X.rows(); ++r) gv(0, r % d) += g.row(r).dot(X.row(r));
        }
    });
}

// ---- block-sparse -----------------------------------------------------------

Var block_apply(Tape& t, std::shared_ptr<const BlockPattern> pattern, Var blocks, Var x, bool transpose) {
    const Dense& B = t.value(blocks);
    const Dense& X = t.value(x);
    const int d = pattern->block;
    if (B.cols() != d || B.rows() != static_cast<Eigen::Index>(pattern->nnz()) * d) {
        throw ShapeError("block_apply: block storage must be (nnz*d) x d");
    }
    const Eigen::Index in_rows = static_cast<Eigen::Index>(transpose ? pattern->block_rows : pattern->block_cols) * d;
    const Eigen::Index out_rows = static_cast<Eigen::Index>(transpose ? pattern->block_cols : pattern->block_rows) * d;
    if (X.rows() != in_rows) {
        throw ShapeError("block_apply: operand has " + std::to_string(X.rows()) + " rows, expected " +
                         std::to_string(in_rows));
    }
    Dense out = Dense::Zero(out_rows, X.cols());
    kernels::block_apply(*pattern, B, X, out, transpose);
    return t.record(std::move(out), {blocks, x}, [pattern, blocks, x, transpose](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        if (t.requires_grad(x)) kernels::block_apply(*pattern, t.value(blocks), g, t.grad_ref(x), !transpose);
        if (t.requires_grad(blocks)) {
            kernels::block_apply_grad_blocks(*pattern, t.value(x), g, t.grad_ref(blocks), transpose);
        }
    });
}

Var block_left_mul(Tape& t, Var w, Var x) {
    const Dense& W = t.value(w);
    const Dense& X = t.value(x);
    const Eigen::Index d = W.rows();
    if (W.cols() != d || d == 0 || X.rows() % d != 0) throw ShapeError("block_left_mul: W must be d x d, rows(x) % d == 0");
    const Eigen::Index n = X.rows() / d;
    Dense out(X.rows(), X.cols());
    for (Eigen::Index v = 0; v < n; ++v) out.middleRows(v * d, d).noalias() = W * X.middleRows(v * d, d);
    return t.record(std::move(out), {w, x}, [w, x, d, n](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& W = t.value(w);
        const Dense& X = t.value(x);
        if (t.requires_grad(x)) {
            Dense& gx = t.grad_ref(x);
            for (Eigen::Index v = 0; v < n; ++v) gx.middleRows(v * d, d).noalias() += W.transpose() * g.middleRows(v * d, d);
        }
        if (t.requires_grad(w)) {
            Dense& gw = t.grad_ref(w);
            for (Eigen::Index v = 0; v < n; ++v) gw.noalias() += g.middleRows(v * d, d) * X.middleRows(v * d, d).transpose();
        }
    });
}

Var block_gather_matmul(Tape& t, Var a, Var b, Index idx) {
    const Dense& A = t.value(a);
    const Dense& B = t.value(b);
    const Eigen::Index d = A.cols();
    if (B.cols() != d || d == 0 || A.rows() != static_cast<Eigen::Index>(idx->size()) * d || B.rows() % d != 0) {
        throw ShapeError("block_gather_matmul: incompatible block stacks");
    }
    const Eigen::Index nb = B.rows() / d;
    Dense out(A.rows(), d);
    for (std::size_t k = 0; k < idx->size(); ++k) {
        const int m = (*idx)[k];
        if (m < 0 || m >= nb) throw ShapeError("block_gather_matmul: index out of range");
        const auto ki = static_cast<Eigen::Index>(k);
        out.middleRows(ki * d, d).noalias() = A.middleRows(ki * d, d) * B.middleRows(m * d, d);
    }
    return t.record(std::move(out), {a, b}, [a, b, idx, d](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& A = t.value(a);
        const Dense& B = t.value(b);
        const bool ga_on = t.requires_grad(a);
        const bool gb_on = t.requires_grad(b);
        for (std::size_t k = 0; k < idx->size(); ++k) {
            const auto ki = static_cast<Eigen::Index>(k);
            const Eigen::Index m = (*idx)[k];
            if (ga_on) t.grad_ref(a).middleRows(ki * d, d).noalias() += g.middleRows(ki * d, d) * B.middleRows(m * d, d).transpose();
            if (gb_on) t.grad_ref(b).middleRows(m * d, d).noalias() += A.middleRows(ki * d, d).transpose() * g.middleRows(ki * d, d);
        }
    });
}

Var block_gram_scatter(Tape& t, Var a, Index idx, int count) {
    const Dense& A = t.value(a);
    const Eigen::Index d = A.cols();
    if (d == 0 || A.rows() != static_cast<Eigen::Index>(idx->size()) * d) throw ShapeError("block_gram_scatter: bad block stack");
    Dense out = Dense::Zero(static_cast<Eigen::Index>(count) * d, d);
    for (std::size_t k = 0; k < idx->size(); ++k) {
        const int m = (*idx)[k];
        if (m < 0 || m >= count) throw ShapeError("block_gram_scatter: index out of range");
        const auto ki = static_cast<Eigen::Index>(k);
        out.middleRows(m * d, d).noalias() += A.middleRows(ki * d, d).transpose() * A.middleRows(ki * d, d);
    }
    return t.record(std::move(out), {a}, [a, idx, d](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& A = t.value(a);
        Dense& ga = t.grad_ref(a);
        for (std::size_t k = 0; k < idx->size(); ++k) {
            const auto ki = static_cast<Eigen::Index>(k);
            const Eigen::Index m = (*idx)[k];
            const Dense gs = g.middleRows(m * d, d) + g.middleRows(m * d, d).transpose();
            ga.middleRows(ki * d, d).noalias() += A.middleRows(ki * d, d) * gs;
        }
    });
}

// ---- loss -------------------------------------------------------------------

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const std::uint8_t> mask) {
    const Dense& Z = t.value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != Z.rows() || mask.size() != labels.size()) {
        throw ShapeError("softmax_cross_entropy: labels/mask must have one entry per row");
    }
    std::size_t m = 0;
    for (auto b : mask) m += b ? 1 : 0;
    if (m == 0) throw EmptyMask("loss mask selects no nodes");

    Dense probs(Z.rows(), Z.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        const double mx = Z.row(i).maxCoeff();
        const double lse = mx + std::log((Z.row(i).array() - mx).exp().sum());
        probs.row(i) = (Z.row(i).array() - lse).exp();
        if (mask[static_cast<std::size_t>(i)]) {
            const int y = labels[static_cast<std::size_t>(i)];
            if (y < 0 || y >= Z.cols()) throw ShapeError("softmax_cross_entropy: label out of range");
            total += lse - Z(i, y);
        }
    }
    Dense out(1, 1);
    out(0, 0) = total / static_cast<double>(m);
    std::vector<int> lab(labels.begin(), labels.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    return t.record(std::move(out), {logits},
                    [logits, probs = std::move(probs), lab = std::move(lab), msk = std::move(msk), m](Tape& t, std::uint32_t self) {
                        const double g = t.out_grad(self)(0, 0) / static_cast<double>(m);
                        Dense& gz = t.grad_ref(logits);
                        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                            if (!msk[static_cast<std::size_t>(i)]) continue;
                            gz.row(i) += g * probs.row(i);
                            gz(i, lab[static_cast<std::size_t>(i)]) -= g;
                        }
                    });
}

}  // namespace nlsd::ad
