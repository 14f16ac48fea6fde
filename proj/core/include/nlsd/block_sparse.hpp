#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "nlsd/dense.hpp"

namespace nlsd {

/// Sparsity structure of a square-block matrix: block k sits at
/// (row[k], col[k]) and is scaled by coeff[k] when applied.
struct BlockPattern {
    int block = 1;
    int block_rows = 0;  // number of block rows
    int block_cols = 0;  // number of block columns
    std::vector<int> row;
    std::vector<int> col;
    std::vector<double> coeff;

    std::size_t nnz() const noexcept { return row.size(); }
    void push(int r, int c, double s = 1.0) {
        row.push_back(r);
        col.push_back(c);
        coeff.push_back(s);
    }
    /// Throws ShapeError on out-of-range or repeated positions.
    void validate() const;
};

/// Block-sparse matrix. `blocks` stacks the d x d blocks vertically
/// ((nnz*d) x d), in pattern order.
class BlockSparse {
public:
    BlockSparse() = default;
    BlockSparse(std::shared_ptr<const BlockPattern> pattern, Dense blocks);

    const BlockPattern& pattern() const { return *pattern_; }
    std::shared_ptr<const BlockPattern> pattern_ptr() const { return pattern_; }
    const Dense& blocks() const noexcept { return blocks_; }
    int block_size() const noexcept { return pattern_->block; }
    Eigen::Index rows() const noexcept { return static_cast<Eigen::Index>(pattern_->block_rows) * pattern_->block; }
    Eigen::Index cols() const noexcept { return static_cast<Eigen::Index>(pattern_->block_cols) * pattern_->block; }

    Dense apply(const Dense& x) const;
    Dense apply_transpose(const Dense& x) const;
    Dense to_dense() const;
    BlockSparse transpose() const;

private:
    std::shared_ptr<const BlockPattern> pattern_;
    Dense blocks_;
};

namespace kernels {

// out[row_k] += coeff_k * B_k * x[col_k]   (transpose: out[col_k] += coeff_k * B_k^T * x[row_k])
void block_apply(const BlockPattern& p, const Dense& blocks, const Dense& x, Dense& out, bool transpose);

// Gradient of block_apply with respect to the stacked blocks, accumulated into gblocks.
void block_apply_grad_blocks(const BlockPattern& p, const Dense& x, const Dense& gout, Dense& gblocks,
                             bool transpose);

}  // namespace kernels

/// L = A^T A for a block-sparse A, assembled blockwise (no densification).
BlockSparse gram(const BlockSparse& a);

}  // namespace nlsd
