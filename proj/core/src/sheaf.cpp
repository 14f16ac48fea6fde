#include "nlsd/sheaf.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <string>

#include "nlsd/errors.hpp"

namespace nlsd {

SheafLayout SheafLayout::build(const Graph& g, int d) {
    if (d < 1) throw ShapeError("stalk dimension must be >= 1");
    SheafLayout l;
    l.n = g.num_nodes();
    l.d = d;
    l.num_edges = g.num_edges();
    std::vector<int> inc_node, inc_other, lo, hi;
    inc_node.reserve(2 * l.num_edges);
    inc_other.reserve(2 * l.num_edges);
    auto pattern = std::make_shared<BlockPattern>();
    pattern->block = d;
    pattern->block_rows = static_cast<int>(l.num_edges);
    pattern->block_cols = l.n;
    int e = 0;
    for (const auto& edge : g.edges()) {
        inc_node.push_back(edge.lo);
        inc_other.push_back(edge.hi);
        inc_node.push_back(edge.hi);
        inc_other.push_back(edge.lo);
        lo.push_back(edge.lo);
        hi.push_back(edge.hi);
        pattern->push(e, edge.lo, edge.head() == edge.lo ? 1.0 : -1.0);
        pattern->push(e, edge.hi, edge.head() == edge.hi ? 1.0 : -1.0);
        ++e;
    }
    l.incidence_node = ad::make_index(std::move(inc_node));
    l.incidence_other = ad::make_index(std::move(inc_other));
    l.edge_lo = ad::make_index(std::move(lo));
    l.edge_hi = ad::make_index(std::move(hi));
    l.coboundary = std::move(pattern);
    return l;
}

int learner_outputs(int d, MapKind kind) {
    return kind == MapKind::Diagonal ? d : d * (d - 1) / 2;
}

Dense stalk_summary(const Dense& x, int d) {
    if (d < 1 || x.rows() % d != 0) throw ShapeError("stalk_summary: rows must be a multiple of d");
    const Dense means = x.rowwise().mean();
    return ConstDenseMap(means.data(), x.rows() / d, d);
}

Dense cayley(std::span<const double> params, int d) {
    if (static_cast<int>(params.size()) != d * (d - 1) / 2) throw ShapeError("cayley: wrong parameter count");
    Dense a = Dense::Zero(d, d);
    std::size_t k = 0;
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            a(i, j) = params[k];
            a(j, i) = -params[k];
            ++k;
        }
    }
    const Dense eye = Dense::Identity(d, d);
    const Dense inv = (eye + a).partialPivLu().inverse();
    return (eye - a) * inv;
}

Sheaf learn_restriction_maps(const Dense& x, const Graph& g, const Dense& w, MapKind kind, int d) {
    if (w.rows() != 2 * d || w.cols() != learner_outputs(d, kind)) {
        throw ShapeError("learner weights must be " + std::to_string(2 * d) + "x" +
                         std::to_string(learner_outputs(d, kind)));
    }
    if (x.rows() != static_cast<Eigen::Index>(g.num_nodes()) * d) throw ShapeError("features must be (n*d) x f");
    const auto layout = SheafLayout::build(g, d);
    ad::Tape t;
    const auto xv = t.constant(x);
    const auto wv = t.constant(w);
    const auto maps = ad::learn_maps(t, xv, layout, wv, kind);
    return Sheaf{d, kind, t.value(maps)};
}

BlockSparse assemble_coboundary(const Sheaf& s, const Graph& g) {
    if (s.maps.cols() != s.d || s.maps.rows() != static_cast<Eigen::Index>(2 * g.num_edges()) * s.d) {
        throw IncompleteSheaf("sheaf provides " + std::to_string(s.num_incidences()) + " maps for " +
                              std::to_string(2 * g.num_edges()) + " incidences");
    }
    const auto layout = SheafLayout::build(g, s.d);
    return BlockSparse(layout.coboundary, s.maps);
}

BlockSparse sheaf_laplacian(const BlockSparse& coboundary) { return gram(coboundary); }

Dense apply_laplacian_local(const Sheaf& s, const Graph& g, const Dense& x) {
    const int d = s.d;
    if (x.rows() != static_cast<Eigen::Index>(g.num_nodes()) * d) throw ShapeError("apply_laplacian_local: bad x");
    if (s.maps.rows() != static_cast<Eigen::Index>(2 * g.num_edges()) * d) throw IncompleteSheaf("missing incidence maps");
    Dense out = Dense::Zero(x.rows(), x.cols());
    std::size_t e = 0;
    for (const auto& edge : g.edges()) {
        const auto f_lo = s.map(2 * e);
        const auto f_hi = s.map(2 * e + 1);
        const auto x_lo = x.middleRows(static_cast<Eigen::Index>(edge.lo) * d, d);
        const auto x_hi = x.middleRows(static_cast<Eigen::Index>(edge.hi) * d, d);
        const Dense disagreement = f_lo * x_lo - f_hi * x_hi;
        out.middleRows(static_cast<Eigen::Index>(edge.lo) * d, d) += f_lo.transpose() * disagreement;
        out.middleRows(static_cast<Eigen::Index>(edge.hi) * d, d) -= f_hi.transpose() * disagreement;
        ++e;
    }
    return out;
}

BlockDegree block_degree(const Sheaf& s, const Graph& g) {
    const int d = s.d;
    if (s.maps.rows() != static_cast<Eigen::Index>(2 * g.num_edges()) * d) throw IncompleteSheaf("missing incidence maps");
    BlockDegree out{d, Dense::Zero(static_cast<Eigen::Index>(g.num_nodes()) * d, d)};
    std::size_t e = 0;
    for (const auto& edge : g.edges()) {
        const auto f_lo = s.map(2 * e);
        const auto f_hi = s.map(2 * e + 1);
        out.blocks.middleRows(static_cast<Eigen::Index>(edge.lo) * d, d) += f_lo.transpose() * f_lo;
        out.blocks.middleRows(static_cast<Eigen::Index>(edge.hi) * d, d) += f_hi.transpose() * f_hi;
        ++e;
    }
    return out;
}

BlockDegree block_degree(const BlockSparse& laplacian) {
    const auto& p = laplacian.pattern();
    const int d = p.block;
    BlockDegree out{d, Dense::Zero(static_cast<Eigen::Index>(p.block_rows) * d, d)};
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        if (p.row[k] != p.col[k]) continue;
        out.blocks.middleRows(static_cast<Eigen::Index>(p.row[k]) * d, d) +=
            p.coeff[k] * laplacian.blocks().middleRows(static_cast<Eigen::Index>(k) * d, d);
    }
    return out;
}

Dense sym_inv_sqrt(const Dense& block, double floor) {
    const auto d = block.rows();
    if (block.isZero(0.0)) return Dense::Identity(d, d);
    const Dense sym = 0.5 * (block + block.transpose());
    Eigen::SelfAdjointEigenSolver<Dense> es(sym);
    const Eigen::VectorXd f = es.eigenvalues().unaryExpr([floor](double l) { return 1.0 / std::sqrt(std::max(l, floor)); });
    return es.eigenvectors() * f.asDiagonal() * es.eigenvectors().transpose();
}

BlockSparse d_inv_sqrt(const BlockDegree& degree, double floor) {
    const int d = degree.d;
    const auto n = static_cast<int>(degree.blocks.rows() / d);
    auto p = std::make_shared<BlockPattern>();
    p->block = d;
    p->block_rows = n;
    p->block_cols = n;
    Dense blocks(degree.blocks.rows(), d);
    for (int v = 0; v < n; ++v) {
        p->push(v, v, 1.0);
        blocks.middleRows(static_cast<Eigen::Index>(v) * d, d) = sym_inv_sqrt(degree.blocks.middleRows(static_cast<Eigen::Index>(v) * d, d), floor);
    }
    return BlockSparse(std::move(p), std::move(blocks));
}

namespace {

// Diagonal block v of a block-diagonal operator.
Dense diagonal_block(const BlockSparse& diag, int v) {
    const auto& p = diag.pattern();
    const int d = p.block;
    if (static_cast<std::size_t>(v) < p.nnz() && p.row[static_cast<std::size_t>(v)] == v && p.col[static_cast<std::size_t>(v)] == v) {
        return p.coeff[static_cast<std::size_t>(v)] * diag.blocks().middleRows(static_cast<Eigen::Index>(v) * d, d);
    }
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        if (p.row[k] == v && p.col[k] == v) return p.coeff[k] * diag.blocks().middleRows(static_cast<Eigen::Index>(k) * d, d);
    }
    return Dense::Zero(d, d);
}

}  // namespace

BlockSparse normalized_laplacian(const BlockSparse& laplacian, const BlockSparse& d_inv_sqrt) {
    const auto& p = laplacian.pattern();
    const int d = p.block;
    if (d_inv_sqrt.block_size() != d || d_inv_sqrt.pattern().block_rows != p.block_rows) {
        throw ShapeError("normalized_laplacian: D^{-1/2} does not match L");
    }
    std::vector<Dense> dis(static_cast<std::size_t>(p.block_rows));
    for (int v = 0; v < p.block_rows; ++v) dis[static_cast<std::size_t>(v)] = diagonal_block(d_inv_sqrt, v);
    Dense blocks(laplacian.blocks().rows(), d);
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        blocks.middleRows(ki * d, d) = dis[static_cast<std::size_t>(p.row[k])] *
                                       laplacian.blocks().middleRows(ki * d, d) * dis[static_cast<std::size_t>(p.col[k])];
    }
    return BlockSparse(laplacian.pattern_ptr(), std::move(blocks));
}

BlockSparse normalize_coboundary(const BlockSparse& coboundary, const BlockSparse& d_inv_sqrt) {
    const auto& p = coboundary.pattern();
    const int d = p.block;
    if (d_inv_sqrt.block_size() != d || d_inv_sqrt.pattern().block_rows != p.block_cols) {
        throw ShapeError("normalize_coboundary: D^{-1/2} does not match delta");
    }
    Dense blocks(coboundary.blocks().rows(), d);
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        blocks.middleRows(ki * d, d) = coboundary.blocks().middleRows(ki * d, d) * diagonal_block(d_inv_sqrt, p.col[k]);
    }
    return BlockSparse(coboundary.pattern_ptr(), std::move(blocks));
}

HarmonicSpace harmonic_space(const Sheaf& s, const Graph& g) {
    const auto nd = static_cast<Eigen::Index>(g.num_nodes()) * s.d;
    if (nd > 200) throw TooLarge("harmonic_space is a dense oracle limited to n*d <= 200, got " + std::to_string(nd));
    const Dense lap = sheaf_laplacian(assemble_coboundary(s, g)).to_dense();
    Eigen::JacobiSVD<Dense> svd(lap, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    int dim = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) dim += sv(i) < 1e-8 ? 1 : 0;
    HarmonicSpace out;
    out.dimension = dim;
    // singular values are sorted descending: the null space is the trailing block of V
    out.basis = svd.matrixV().rightCols(dim);
    return out;
}

namespace ad {

Var cayley_maps(Tape& t, Var params, int d) {
    const Dense& P = t.value(params);
    const int m = d * (d - 1) / 2;
    if (P.cols() != m) throw ShapeError("cayley_maps: expected " + std::to_string(m) + " parameters per map");
    const Eigen::Index k_count = P.rows();
    Dense out(k_count * d, d);
    // (I + A)^{-1} per map, kept for the backward pass
    auto inverses = std::make_shared<Dense>(k_count * d, d);
    const Dense eye = Dense::Identity(d, d);
    Dense a(d, d);
    for (Eigen::Index k = 0; k < k_count; ++k) {
        a.setZero();
        int c = 0;
        for (int i = 0; i < d; ++i) {
            for (int j = i + 1; j < d; ++j) {
                a(i, j) = P(k, c);
                a(j, i) = -P(k, c);
                ++c;
            }
        }
        const Dense inv = (eye + a).partialPivLu().inverse();
        inverses->middleRows(k * d, d) = inv;
        out.middleRows(k * d, d).noalias() = (eye - a) * inv;
    }
    return t.record(std::move(out), {params}, [params, d, inverses](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& f = t.value(Var{self});
        Dense& gp = t.grad_ref(params);
        const Dense eye = Dense::Identity(d, d);
        for (Eigen::Index k = 0; k < gp.rows(); ++k) {
            // dF = -(I + F) dA (I + A)^{-1}
            const Dense ga = -(eye + f.middleRows(k * d, d)).transpose() * g.middleRows(k * d, d) *
                             inverses->middleRows(k * d, d).transpose();
            int c = 0;
            for (int i = 0; i < d; ++i) {
                for (int j = i + 1; j < d; ++j) {
                    gp(k, c) += ga(i, j) - ga(j, i);
                    ++c;
                }
            }
        }
    });
}

Var diag_maps(Tape& t, Var diagonal) {
    const Dense& v = t.value(diagonal);
    const Eigen::Index d = v.cols();
    Dense out = Dense::Zero(v.rows() * d, d);
    for (Eigen::Index k = 0; k < v.rows(); ++k) {
        for (Eigen::Index i = 0; i < d; ++i) out(k * d + i, i) = v(k, i);
    }
    return t.record(std::move(out), {diagonal}, [diagonal, d](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& gv = t.grad_ref(diagonal);
        for (Eigen::Index k = 0; k < gv.rows(); ++k) {
            for (Eigen::Index i = 0; i < d; ++i) gv(k, i) += g(k * d + i, i);
        }
    });
}

Var sym_inv_sqrt_blocks(Tape& t, Var blocks, double floor) {
    const Dense& B = t.value(blocks);
    const Eigen::Index d = B.cols();
    if (d == 0 || B.rows() % d != 0) throw ShapeError("sym_inv_sqrt_blocks: bad block stack");
    const Eigen::Index count = B.rows() / d;
    Dense out(B.rows(), d);
    // eigenvectors (d rows per block) and eigenvalues (one row per block); zero blocks are flagged with NaN
    auto vecs = std::make_shared<Dense>(B.rows(), d);
    auto vals = std::make_shared<Dense>(count, d);
    for (Eigen::Index k = 0; k < count; ++k) {
        const auto blk = B.middleRows(k * d, d);
        if (blk.isZero(0.0)) {
            out.middleRows(k * d, d).setIdentity();
            vals->row(k).setConstant(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const Dense sym = 0.5 * (blk + blk.transpose());
        Eigen::SelfAdjointEigenSolver<Dense> es(sym);
        for (Eigen::Index i = 0; i < d; ++i) t.check_kink(es.eigenvalues()(i) - floor);
        const Eigen::VectorXd f = es.eigenvalues().unaryExpr([floor](double l) { return 1.0 / std::sqrt(std::max(l, floor)); });
        out.middleRows(k * d, d).noalias() = es.eigenvectors() * f.asDiagonal() * es.eigenvectors().transpose();
        vecs->middleRows(k * d, d) = es.eigenvectors();
        vals->row(k) = es.eigenvalues().transpose();
    }
    return t.record(std::move(out), {blocks}, [blocks, d, floor, vecs, vals](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& gb = t.grad_ref(blocks);
        auto fn = [floor](double l) { return 1.0 / std::sqrt(std::max(l, floor)); };
        auto dfn = [floor](double l) { return l > floor ? -0.5 / (l * std::sqrt(l)) : 0.0; };
        Dense kmat(d, d);
        for (Eigen::Index k = 0; k < vals->rows(); ++k) {
            if (std::isnan((*vals)(k, 0))) continue;
            const auto u = vecs->middleRows(k * d, d);
            const Dense gsym = 0.5 * (g.middleRows(k * d, d) + g.middleRows(k * d, d).transpose());
            Dense inner = u.transpose() * gsym * u;
            for (Eigen::Index i = 0; i < d; ++i) {
                for (Eigen::Index j = 0; j < d; ++j) {
                    const double li = (*vals)(k, i);
                    const double lj = (*vals)(k, j);
                    const double gap = li - lj;
                    kmat(i, j) = std::abs(gap) > 1e-10 * std::max(1.0, std::abs(li)) ? (fn(li) - fn(lj)) / gap
                                                                                     : dfn(0.5 * (li + lj));
                }
            }
            inner = inner.cwiseProduct(kmat);
            gb.middleRows(k * d, d).noalias() += u * inner * u.transpose();
        }
    });
}

Var learn_maps(Tape& t, Var x, const SheafLayout& layout, Var w, MapKind kind) {
    const int d = layout.d;
    const Dense& X = t.value(x);
    if (X.rows() != static_cast<Eigen::Index>(layout.n) * d) throw ShapeError("learn_maps: features must be (n*d) x f");
    const Dense& W = t.value(w);
    if (W.rows() != 2 * d || W.cols() != learner_outputs(d, kind)) throw ShapeError("learn_maps: learner weight shape");
    const Var summary = reshape(t, row_mean(t, x), layout.n, d);
    const Var input = concat_cols(t, {gather_rows(t, summary, layout.incidence_node), gather_rows(t, summary, layout.incidence_other)});
    const Var raw = matmul(t, input, w);
    if (kind == MapKind::Diagonal) return diag_maps(t, ad::tanh(t, raw));
    return cayley_maps(t, raw, d);
}

Var normalize_maps(Tape& t, Var maps, const SheafLayout& layout, double floor) {
    const Var degree = block_gram_scatter(t, maps, layout.incidence_node, layout.n);
    const Var dis = sym_inv_sqrt_blocks(t, degree, floor);
    return block_gather_matmul(t, maps, dis, layout.incidence_node);
}

Var coboundary_apply(Tape& t, const SheafLayout& layout, Var maps, Var x, bool transpose) {
    return block_apply(t, layout.coboundary, maps, x, transpose);
}

}  // namespace ad

}  // namespace nlsd
