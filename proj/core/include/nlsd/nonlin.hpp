#pragma once

#include <span>
#include <vector>

#include "nlsd/block_sparse.hpp"
#include "nlsd/dense.hpp"
#include "nlsd/tape.hpp"

namespace nlsd {

/// Shape of the bounded-confidence potential psi and its derivative psi'.
///   Psi2: psi'(x) = 1 for x < D, 0 for x >= D;           psi(x) = min(x, D)
///   Psi3: psi'(x) = sin(pi x / D) for x < D, 0 beyond;   psi(x) = D/pi (1 - cos(pi min(x, D) / D))
enum class PsiShape { Psi2, Psi3 };

enum class ThresholdMode {
    Single,   // one softplus(theta) shared by all edges of a layer
    PerEdge,  // softplus(w . |s_v - s_u| + b) per edge
};

struct NonlinearitySpec {
    enum class Kind { Identity, BoundedConfidence, Mlp };

    Kind kind = Kind::Identity;
    PsiShape psi = PsiShape::Psi2;
    ThresholdMode thresholds = ThresholdMode::Single;
    int mlp_layers = 2;  // 1..4 linear layers, relu between them
    int mlp_hidden = 0;  // 0 means "use d"

    static NonlinearitySpec identity() { return {}; }
    static NonlinearitySpec bounded_confidence(PsiShape psi, ThresholdMode mode) {
        return {Kind::BoundedConfidence, psi, mode, 2, 0};
    }
    static NonlinearitySpec mlp(int layers = 2, int hidden = 0) {
        return {Kind::Mlp, PsiShape::Psi2, ThresholdMode::Single, layers, hidden};
    }
};

/// Weights of the per-stalk-vector MLP; weights[i] is in x out, biases[i] is 1 x out.
struct MlpWeights {
    std::vector<Dense> weights;
    std::vector<Dense> biases;
};

/// Layer widths d -> hidden -> ... -> d for an MLP nonlinearity.
std::vector<int> mlp_widths(const NonlinearitySpec& spec, int d);

/// psi'(x) for x = ||y||^2 >= 0. Throws InvalidNorm on negative input.
double psi_prime(double sq_norm, double threshold, PsiShape shape);
/// psi(x), the edge potential as a function of the squared norm.
double psi(double sq_norm, double threshold, PsiShape shape);

double softplus(double x);
/// theta with softplus(theta) = value (value > 0).
double inverse_softplus(double value);

/// Single mode: `inputs` is ignored apart from its row count and params = {theta (1x1)}.
/// PerEdge mode: `inputs` holds |s_v - s_u| (E x d) and params = {w (d x 1), b (1 x 1)}.
Dense edge_thresholds(const Dense& inputs, ThresholdMode mode, std::span<const Dense> params);

/// Phi applied to an edge signal Y ((E*d) x f). Each d-vector y_{e,c} is
/// handled independently: gated by psi'(||y||^2, D_e) or passed through the MLP.
Dense apply_phi(const Dense& y, int d, const NonlinearitySpec& spec, const Dense& thresholds = {},
                const MlpWeights& mlp = {});

/// delta^T Phi(delta x) for a (possibly normalised) coboundary.
Dense apply_nonlinear_laplacian(const BlockSparse& coboundary, const NonlinearitySpec& spec, const Dense& x,
                                const Dense& thresholds = {}, const MlpWeights& mlp = {});

/// sum_{e,c} psi(||y_{e,c}||^2, D_e). Identity uses psi(x) = x; Mlp throws NoPotential.
double potential_energy(const Dense& y, int d, const NonlinearitySpec& spec, const Dense& thresholds = {});

namespace ad {

/// Per-(edge, channel) bounded-confidence gate on Y ((E*d) x f) with thresholds E x 1.
/// The jump of Psi2 has zero derivative; threshold gradients only flow for Psi3.
Var bc_gate(Tape& t, Var y, Var thresholds, int d, PsiShape shape);

/// (E*d) x f  ->  (E*f) x d, row (e, c) holding y_{e,c}.
Var edge_channel_vectors(Tape& t, Var y, int d);
/// Inverse of edge_channel_vectors.
Var from_edge_channel_vectors(Tape& t, Var v, int d, Eigen::Index channels);

Var thresholds_single(Tape& t, Var theta, std::size_t num_edges);
Var thresholds_per_edge(Tape& t, Var abs_diff, Var w, Var b);

struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

/// The MLP applied to every stalk vector y_{e,c}, shared across edges and channels.
Var mlp_phi(Tape& t, Var y, int d, const MlpVars& mlp);

}  // namespace ad

}  // namespace nlsd
