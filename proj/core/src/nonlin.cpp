#include "nlsd/nonlin.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nlsd/errors.hpp"

namespace nlsd {

std::vector<int> mlp_widths(const NonlinearitySpec& spec, int d) {
    if (spec.mlp_layers < 1 || spec.mlp_layers > 4) throw ConfigError("MLP nonlinearity needs 1 to 4 layers");
    const int hidden = spec.mlp_hidden > 0 ? spec.mlp_hidden : d;
    std::vector<int> widths{d};
    for (int i = 1; i < spec.mlp_layers; ++i) widths.push_back(hidden);
    widths.push_back(d);
    return widths;
}

double psi_prime(double sq_norm, double threshold, PsiShape shape) {
    if (sq_norm < 0.0 || std::isnan(sq_norm)) throw InvalidNorm("squared norm must be non-negative");
    if (sq_norm >= threshold) return 0.0;
    switch (shape) {
        case PsiShape::Psi2: return 1.0;
        case PsiShape::Psi3: return std::sin(std::numbers::pi * sq_norm / threshold);
    }
    return 0.0;
}

double psi(double sq_norm, double threshold, PsiShape shape) {
    if (sq_norm < 0.0 || std::isnan(sq_norm)) throw InvalidNorm("squared norm must be non-negative");
    const double x = std::min(sq_norm, threshold);
    switch (shape) {
        case PsiShape::Psi2: return x;
        case PsiShape::Psi3: return threshold / std::numbers::pi * (1.0 - std::cos(std::numbers::pi * x / threshold));
    }
    return 0.0;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double value) {
    if (!(value > 0.0)) throw ConfigError("softplus output must be positive");
    // log(exp(v) - 1) = v + log(1 - exp(-v))
    return value + std::log(-std::expm1(-value));
}

Dense edge_thresholds(const Dense& inputs, ThresholdMode mode, std::span<const Dense> params) {
    ad::Tape t;
    if (mode == ThresholdMode::Single) {
        if (params.size() != 1 || params[0].size() != 1) throw ShapeError("single threshold takes one scalar parameter");
        return t.value(ad::thresholds_single(t, t.constant(params[0]), static_cast<std::size_t>(inputs.rows())));
    }
    if (params.size() != 2) throw ShapeError("per-edge thresholds take a weight vector and a bias");
    return t.value(ad::thresholds_per_edge(t, t.constant(inputs), t.constant(params[0]), t.constant(params[1])));
}

Dense apply_phi(const Dense& y, int d, const NonlinearitySpec& spec, const Dense& thresholds, const MlpWeights& mlp) {
    if (d < 1 || y.rows() % d != 0) throw ShapeError("apply_phi: rows must be a multiple of d");
    switch (spec.kind) {
        case NonlinearitySpec::Kind::Identity: return y;
        case NonlinearitySpec::Kind::BoundedConfidence: {
            ad::Tape t;
            return t.value(ad::bc_gate(t, t.constant(y), t.constant(thresholds), d, spec.psi));
        }
        case NonlinearitySpec::Kind::Mlp: {
            ad::Tape t;
            ad::MlpVars vars;
            for (const auto& w : mlp.weights) vars.weights.push_back(t.constant(w));
            for (const auto& b : mlp.biases) vars.biases.push_back(t.constant(b));
            return t.value(ad::mlp_phi(t, t.constant(y), d, vars));
        }
    }
    return y;
}

Dense apply_nonlinear_laplacian(const BlockSparse& coboundary, const NonlinearitySpec& spec, const Dense& x,
                                const Dense& thresholds, const MlpWeights& mlp) {
    const Dense y = coboundary.apply(x);
    return coboundary.apply_transpose(apply_phi(y, coboundary.block_size(), spec, thresholds, mlp));
}

double potential_energy(const Dense& y, int d, const NonlinearitySpec& spec, const Dense& thresholds) {
    if (spec.kind == NonlinearitySpec::Kind::Mlp) throw NoPotential("an MLP nonlinearity is not a gradient field");
    if (d < 1 || y.rows() % d != 0) throw ShapeError("potential_energy: rows must be a multiple of d");
    const Eigen::Index edges = y.rows() / d;
    const bool bc = spec.kind == NonlinearitySpec::Kind::BoundedConfidence;
    if (bc && thresholds.rows() != edges) throw ShapeError("potential_energy: one threshold per edge required");
    double total = 0.0;
    for (Eigen::Index e = 0; e < edges; ++e) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            const double s = y.block(e * d, c, d, 1).squaredNorm();
            total += bc ? psi(s, thresholds(e, 0), spec.psi) : s;
        }
    }
    return total;
}

namespace ad {

Var bc_gate(Tape& t, Var y, Var thresholds, int d, PsiShape shape) {
    const Dense& Y = t.value(y);
    const Dense& D = t.value(thresholds);
    if (d < 1 || Y.rows() % d != 0) throw ShapeError("bc_gate: rows must be a multiple of d");
    const Eigen::Index edges = Y.rows() / d;
    if (D.rows() != edges || D.cols() != 1) throw ShapeError("bc_gate: thresholds must be E x 1");
    const Eigen::Index f = Y.cols();
    Dense out(Y.rows(), f);
    for (Eigen::Index e = 0; e < edges; ++e) {
        const double th = D(e, 0);
        for (Eigen::Index c = 0; c < f; ++c) {
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += Y(e * d + i, c) * Y(e * d + i, c);
            t.check_kink(s - th);
            const double gate = psi_prime(s, th, shape);
            for (int i = 0; i < d; ++i) out(e * d + i, c) = gate * Y(e * d + i, c);
        }
    }
    return t.record(std::move(out), {y, thresholds}, [y, thresholds, d, shape](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        const Dense& Y = t.value(y);
        const Dense& D = t.value(thresholds);
        const Eigen::Index edges = Y.rows() / d;
        const bool gy = t.requires_grad(y);
        const bool gd = t.requires_grad(thresholds);
        for (Eigen::Index e = 0; e < edges; ++e) {
            const double th = D(e, 0);
            for (Eigen::Index c = 0; c < Y.cols(); ++c) {
                double s = 0.0;
                double yg = 0.0;
                for (int i = 0; i < d; ++i) {
                    s += Y(e * d + i, c) * Y(e * d + i, c);
                    yg += Y(e * d + i, c) * g(e * d + i, c);
                }
                const double gate = psi_prime(s, th, shape);
                double dgate_ds = 0.0;
                double dgate_dth = 0.0;
                if (shape == PsiShape::Psi3 && s < th) {
                    const double cs = std::cos(std::numbers::pi * s / th);
                    dgate_ds = std::numbers::pi / th * cs;
                    dgate_dth = -std::numbers::pi * s / (th * th) * cs;
                }
                if (gy) {
                    Dense& gyr = t.grad_ref(y);
                    for (int i = 0; i < d; ++i) {
                        gyr(e * d + i, c) += gate * g(e * d + i, c) + 2.0 * dgate_ds * yg * Y(e * d + i, c);
                    }
                }
                if (gd) t.grad_ref(thresholds)(e, 0) += dgate_dth * yg;
            }
        }
    });
}

Var edge_channel_vectors(Tape& t, Var y, int d) {
    const Dense& Y = t.value(y);
    if (d < 1 || Y.rows() % d != 0) throw ShapeError("edge_channel_vectors: rows must be a multiple of d");
    const Eigen::Index edges = Y.rows() / d;
    const Eigen::Index f = Y.cols();
    Dense out(edges * f, d);
    for (Eigen::Index e = 0; e < edges; ++e) {
        for (int i = 0; i < d; ++i) {
            for (Eigen::Index c = 0; c < f; ++c) out(e * f + c, i) = Y(e * d + i, c);
        }
    }
    return t.record(std::move(out), {y}, [y, d, f, edges](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& gy = t.grad_ref(y);
        for (Eigen::Index e = 0; e < edges; ++e) {
            for (int i = 0; i < d; ++i) {
                for (Eigen::Index c = 0; c < f; ++c) gy(e * d + i, c) += g(e * f + c, i);
            }
        }
    });
}

Var from_edge_channel_vectors(Tape& t, Var v, int d, Eigen::Index channels) {
    const Dense& V = t.value(v);
    if (V.cols() != d || channels < 1 || V.rows() % channels != 0) throw ShapeError("from_edge_channel_vectors: bad shape");
    const Eigen::Index edges = V.rows() / channels;
    Dense out(edges * d, channels);
    for (Eigen::Index e = 0; e < edges; ++e) {
        for (int i = 0; i < d; ++i) {
            for (Eigen::Index c = 0; c < channels; ++c) out(e * d + i, c) = V(e * channels + c, i);
        }
    }
    return t.record(std::move(out), {v}, [v, d, channels, edges](Tape& t, std::uint32_t self) {
        const Dense& g = t.out_grad(self);
        Dense& gv = t.grad_ref(v);
        for (Eigen::Index e = 0; e < edges; ++e) {
            for (int i = 0; i < d; ++i) {
                for (Eigen::Index c = 0; c < channels; ++c) gv(e * channels + c, i) += g(e * d + i, c);
            }
        }
    });
}

Var thresholds_single(Tape& t, Var theta, std::size_t num_edges) {
    if (t.value(theta).size() != 1) throw ShapeError("single threshold parameter must be 1x1");
    const Var ones = t.constant(Dense::Ones(static_cast<Eigen::Index>(num_edges), 1));
    return matmul(t, ones, softplus(t, theta));
}

Var thresholds_per_edge(Tape& t, Var abs_diff, Var w, Var b) {
    const Dense& A = t.value(abs_diff);
    if (t.value(w).rows() != A.cols() || t.value(w).cols() != 1 || t.value(b).size() != 1) {
        throw ShapeError("per-edge threshold perceptron must be d x 1 plus a 1 x 1 bias");
    }
    return softplus(t, add_row(t, matmul(t, abs_diff, w), b));
}

Var mlp_phi(Tape& t, Var y, int d, const MlpVars& mlp) {
    if (mlp.weights.empty() || mlp.weights.size() != mlp.biases.size()) throw ShapeError("mlp_phi: weights/biases mismatch");
    const Eigen::Index channels = t.value(y).cols();
    Var h = edge_channel_vectors(t, y, d);
    for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
        h = add_row(t, matmul(t, h, mlp.weights[i]), mlp.biases[i]);
        if (i + 1 < mlp.weights.size()) h = relu(t, h);
    }
    if (t.value(h).cols() != d) throw ShapeError("mlp_phi: last layer must output d values");
    return from_edge_channel_vectors(t, h, d, channels);
}

}  // namespace ad

}  // namespace nlsd
