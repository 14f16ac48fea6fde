#include "nlsd/block_sparse.hpp"

#include <map>
#include <set>
#include <string>
#include <utility>

#include "nlsd/errors.hpp"

namespace nlsd {

void BlockPattern::validate() const {
    if (block < 1) throw ShapeError("block size must be positive");
    if (row.size() != col.size() || row.size() != coeff.size()) throw ShapeError("pattern arrays disagree in length");
    std::set<std::pair<int, int>> seen;
    for (std::size_t k = 0; k < row.size(); ++k) {
        if (row[k] < 0 || row[k] >= block_rows || col[k] < 0 || col[k] >= block_cols) {
            throw ShapeError("block position out of range");
        }
        if (!seen.emplace(row[k], col[k]).second) {
            throw ShapeError("duplicate block at (" + std::to_string(row[k]) + ", " + std::to_string(col[k]) + ")");
        }
    }
}

BlockSparse::BlockSparse(std::shared_ptr<const BlockPattern> pattern, Dense blocks)
    : pattern_(std::move(pattern)), blocks_(std::move(blocks)) {
    const auto d = pattern_->block;
    if (blocks_.cols() != d || blocks_.rows() != static_cast<Eigen::Index>(pattern_->nnz()) * d) {
        throw ShapeError("block storage must be (nnz*d) x d");
    }
}

Dense BlockSparse::apply(const Dense& x) const {
    if (x.rows() != cols()) throw ShapeError("block-sparse apply: operand has wrong row count");
    Dense out = Dense::Zero(rows(), x.cols());
    kernels::block_apply(*pattern_, blocks_, x, out, false);
    return out;
}

Dense BlockSparse::apply_transpose(const Dense& x) const {
    if (x.rows() != rows()) throw ShapeError("block-sparse transpose apply: operand has wrong row count");
    Dense out = Dense::Zero(cols(), x.cols());
    kernels::block_apply(*pattern_, blocks_, x, out, true);
    return out;
}

Dense BlockSparse::to_dense() const {
    const int d = pattern_->block;
    Dense out = Dense::Zero(rows(), cols());
    for (std::size_t k = 0; k < pattern_->nnz(); ++k) {
        out.block(static_cast<Eigen::Index>(pattern_->row[k]) * d, static_cast<Eigen::Index>(pattern_->col[k]) * d, d, d) +=
            pattern_->coeff[k] * blocks_.block(static_cast<Eigen::Index>(k) * d, 0, d, d);
    }
    return out;
}

BlockSparse BlockSparse::transpose() const {
    auto p = std::make_shared<BlockPattern>();
    p->block = pattern_->block;
    p->block_rows = pattern_->block_cols;
    p->block_cols = pattern_->block_rows;
    p->row = pattern_->col;
    p->col = pattern_->row;
    p->coeff = pattern_->coeff;
    const int d = pattern_->block;
    Dense b(blocks_.rows(), d);
    for (std::size_t k = 0; k < pattern_->nnz(); ++k) {
        b.block(static_cast<Eigen::Index>(k) * d, 0, d, d) = blocks_.block(static_cast<Eigen::Index>(k) * d, 0, d, d).transpose();
    }
    return BlockSparse(std::move(p), std::move(b));
}

namespace kernels {

void block_apply(const BlockPattern& p, const Dense& blocks, const Dense& x, Dense& out, bool transpose) {
    const int d = p.block;
    const Eigen::Index f = x.cols();
    const double* bdata = blocks.data();
    const double* xdata = x.data();
    double* odata = out.data();
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        const double s = p.coeff[k];
        const double* b = bdata + static_cast<std::ptrdiff_t>(k) * d * d;
        const int src = transpose ? p.row[k] : p.col[k];
        const int dst = transpose ? p.col[k] : p.row[k];
        const double* xs = xdata + static_cast<std::ptrdiff_t>(src) * d * f;
        double* od = odata + static_cast<std::ptrdiff_t>(dst) * d * f;
        for (int i = 0; i < d; ++i) {
            double* orow = od + i * f;
            for (int j = 0; j < d; ++j) {
                const double bij = s * (transpose ? b[j * d + i] : b[i * d + j]);
                if (bij == 0.0) continue;
                const double* xrow = xs + j * f;
                for (Eigen::Index c = 0; c < f; ++c) orow[c] += bij * xrow[c];
            }
        }
    }
}

void block_apply_grad_blocks(const BlockPattern& p, const Dense& x, const Dense& gout, Dense& gblocks,
                             bool transpose) {
    const int d = p.block;
    const Eigen::Index f = x.cols();
    for (std::size_t k = 0; k < p.nnz(); ++k) {
        const double s = p.coeff[k];
        double* gb = gblocks.data() + static_cast<std::ptrdiff_t>(k) * d * d;
        // forward (no transpose): out[r] += s * B x[c]  -> dB = s * gout[r] x[c]^T
        // forward (transpose):    out[c] += s * B^T x[r] -> dB = s * x[r] gout[c]^T
        const int a = p.row[k];
        const int b = p.col[k];
        const double* left = transpose ? x.data() + static_cast<std::ptrdiff_t>(a) * d * f
                                       : gout.data() + static_cast<std::ptrdiff_t>(a) * d * f;
        const double* right = transpose ? gout.data() + static_cast<std::ptrdiff_t>(b) * d * f
                                        : x.data() + static_cast<std::ptrdiff_t>(b) * d * f;
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                const double* li = left + i * f;
                const double* rj = right + j * f;
                for (Eigen::Index c = 0; c < f; ++c) acc += li[c] * rj[c];
                gb[i * d + j] += s * acc;
            }
        }
    }
}

}  // namespace kernels

BlockSparse gram(const BlockSparse& a) {
    const auto& p = a.pattern();
    const int d = p.block;
    // group nonzeros by block row; every pair inside a row contributes A_ri^T A_rj to (i, j)
    std::vector<std::vector<std::size_t>> by_row(static_cast<std::size_t>(p.block_rows));
    for (std::size_t k = 0; k < p.nnz(); ++k) by_row[static_cast<std::size_t>(p.row[k])].push_back(k);

    std::map<std::pair<int, int>, Dense> acc;
    for (const auto& ks : by_row) {
        for (std::size_t ki : ks) {
            const Dense bi = p.coeff[ki] * a.blocks().block(static_cast<Eigen::Index>(ki) * d, 0, d, d);
            for (std::size_t kj : ks) {
                const Dense bj = p.coeff[kj] * a.blocks().block(static_cast<Eigen::Index>(kj) * d, 0, d, d);
                auto [it, inserted] = acc.try_emplace({p.col[ki], p.col[kj]}, Dense::Zero(d, d));
                it->second.noalias() += bi.transpose() * bj;
            }
        }
    }
    auto out = std::make_shared<BlockPattern>();
    out->block = d;
    out->block_rows = p.block_cols;
    out->block_cols = p.block_cols;
    Dense blocks(static_cast<Eigen::Index>(acc.size()) * d, d);
    Eigen::Index k = 0;
    for (const auto& [pos, blk] : acc) {
        out->push(pos.first, pos.second, 1.0);
        blocks.block(k * d, 0, d, d) = blk;
        ++k;
    }
    return BlockSparse(std::move(out), std::move(blocks));
}

}  // namespace nlsd
