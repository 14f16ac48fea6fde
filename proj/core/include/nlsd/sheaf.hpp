#pragma once

#include <memory>

#include "nlsd/block_sparse.hpp"
#include "nlsd/dense.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/tape.hpp"

namespace nlsd {

enum class MapKind { Diagonal, Orthogonal };

inline constexpr double kDegreeFloor = 1e-8;

/// Restriction maps of a cellular sheaf with node and edge stalks of dimension d.
///
/// `maps` stacks one d x d block per incidence: block 2e is F_{lo <| e} and
/// block 2e+1 is F_{hi <| e} for edge e = {lo, hi}. Storage is keyed by the
/// endpoints, not by the orientation, so flipping edges keeps the maps.
struct Sheaf {
    int d = 1;
    MapKind kind = MapKind::Diagonal;
    Dense maps;

    Eigen::Index num_incidences() const { return d > 0 ? maps.rows() / d : 0; }
    auto map(std::size_t incidence) const { return maps.middleRows(static_cast<Eigen::Index>(incidence) * d, d); }
};

/// Index arrays and coboundary structure shared by every sheaf on one graph.
struct SheafLayout {
    int n = 0;
    int d = 1;
    std::size_t num_edges = 0;
    ad::Index incidence_node;   // 2E entries: node of each incidence (lo, hi, lo, hi, ...)
    ad::Index incidence_other;  // 2E entries: the opposite endpoint
    ad::Index edge_lo;          // E entries
    ad::Index edge_hi;          // E entries
    std::shared_ptr<const BlockPattern> coboundary;  // E x n blocks, +1 on head, -1 on tail

    static SheafLayout build(const Graph& g, int d);
};

/// Number of learner outputs per incidence: d (diagonal) or d(d-1)/2 (Cayley).
int learner_outputs(int d, MapKind kind);

/// Per-node stalk summary: mean over the f channels of each node's d x f block, n x d.
Dense stalk_summary(const Dense& x, int d);

/// Cayley transform (I - A)(I + A)^{-1} of the skew matrix whose strict upper
/// triangle, read row by row, is `params`.
Dense cayley(std::span<const double> params, int d);

/// Restriction maps from features: F_{v <| e} = map(W^T [s_v || s_u]) with
/// s the stalk summary; tanh on the diagonal or Cayley for orthogonal maps.
/// W has shape 2d x learner_outputs(d, kind).
Sheaf learn_restriction_maps(const Dense& x, const Graph& g, const Dense& w, MapKind kind, int d);

/// Coboundary delta (E*d x n*d): row block e holds +F_{head} at column head and -F_{tail} at column tail.
BlockSparse assemble_coboundary(const Sheaf& s, const Graph& g);

/// L = delta^T delta.
BlockSparse sheaf_laplacian(const BlockSparse& coboundary);

/// (L x)_v = sum_{e ~ v} F_{v<|e}^T (F_{v<|e} x_v - F_{u<|e} x_u), evaluated edge by edge.
Dense apply_laplacian_local(const Sheaf& s, const Graph& g, const Dense& x);

/// Per-node degree blocks D_v = sum_{v <| e} F^T F, stacked (n*d) x d.
struct BlockDegree {
    int d = 1;
    Dense blocks;
};

BlockDegree block_degree(const Sheaf& s, const Graph& g);
BlockDegree block_degree(const BlockSparse& laplacian);

/// Inverse square root of a symmetric PSD block; eigenvalues floored at `floor`,
/// an all-zero block (isolated node) maps to the identity.
Dense sym_inv_sqrt(const Dense& block, double floor = kDegreeFloor);

/// Block-diagonal D^{-1/2}.
BlockSparse d_inv_sqrt(const BlockDegree& degree, double floor = kDegreeFloor);

/// D^{-1/2} L D^{-1/2}.
BlockSparse normalized_laplacian(const BlockSparse& laplacian, const BlockSparse& d_inv_sqrt);

/// delta D^{-1/2}: each block at (e, v) right-multiplied by D_v^{-1/2}.
BlockSparse normalize_coboundary(const BlockSparse& coboundary, const BlockSparse& d_inv_sqrt);

struct HarmonicSpace {
    Dense basis;  // (n*d) x dim, orthonormal columns
    int dimension = 0;
};

/// Null space of L via dense SVD (singular values below 1e-8 count as zero).
/// Throws TooLarge when n*d > 200.
HarmonicSpace harmonic_space(const Sheaf& s, const Graph& g);

namespace ad {

/// Stacked d x d orthogonal maps from K x d(d-1)/2 skew parameters.
Var cayley_maps(Tape& t, Var params, int d);
/// Stacked diagonal maps from a K x d matrix of diagonal entries.
Var diag_maps(Tape& t, Var diagonal);
/// Blockwise inverse square root with eigenvalue floor (differentiable).
Var sym_inv_sqrt_blocks(Tape& t, Var blocks, double floor = kDegreeFloor);

/// Learner on the tape: x is (n*d) x f, w is 2d x learner_outputs.
Var learn_maps(Tape& t, Var x, const SheafLayout& layout, Var w, MapKind kind);

/// F_{v<|e} D_v^{-1/2} for every incidence (the blocks of delta D^{-1/2}).
Var normalize_maps(Tape& t, Var maps, const SheafLayout& layout, double floor = kDegreeFloor);

/// delta x (transpose=false) or delta^T y (transpose=true) with the given incidence blocks.
Var coboundary_apply(Tape& t, const SheafLayout& layout, Var maps, Var x, bool transpose = false);

}  // namespace ad

}  // namespace nlsd
