#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "generators.hpp"
#include "nlsd/errors.hpp"
#include "nlsd/grad_check.hpp"
#include "nlsd/nonlin.hpp"
#include "nlsd/sheaf.hpp"
#include "oracles.hpp"

using namespace nlsd;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Oracle for the gate: loops over (edge, channel) and rescales the d-vector.
Dense gate_oracle(const Dense& y, int d, const Dense& thr, PsiShape shape) {
    Dense out = y;
    const Eigen::Index E = y.rows() / d;
    for (Eigen::Index e = 0; e < E; ++e) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            double sq = 0.0;
            for (int i = 0; i < d; ++i) sq += y(e * d + i, c) * y(e * d + i, c);
            const double D = thr(e, 0);
            double g = 0.0;
            if (sq < D) g = shape == PsiShape::Psi2 ? 1.0 : std::sin(std::numbers::pi * sq / D);
            for (int i = 0; i < d; ++i) out(e * d + i, c) *= g;
        }
    }
    return out;
}

MlpWeights random_mlp(testgen::Engine& eng, const std::vector<int>& widths, bool zero_bias) {
    MlpWeights m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        m.weights.push_back(testgen::random_dense(eng, widths[i], widths[i + 1]));
        m.biases.push_back(zero_bias ? Dense::Zero(1, widths[i + 1]) : testgen::random_dense(eng, 1, widths[i + 1]));
    }
    return m;
}

Dense mlp_oracle(const Dense& y, int d, const MlpWeights& m) {
    Dense out(y.rows(), y.cols());
    for (Eigen::Index e = 0; e < y.rows() / d; ++e) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            Eigen::RowVectorXd h = y.block(e * d, c, d, 1).transpose();
            for (std::size_t l = 0; l < m.weights.size(); ++l) {
                h = h * Eigen::MatrixXd(m.weights[l]) + Eigen::RowVectorXd(m.biases[l]);
                if (l + 1 < m.weights.size()) h = h.cwiseMax(0.0);
            }
            out.block(e * d, c, d, 1) = h.transpose();
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("nonlin") {

TEST_CASE("psi_prime values") {
    CHECK(psi_prime(0.5, 1.0, PsiShape::Psi2) == 1.0);
    CHECK(psi_prime(2.0, 1.0, PsiShape::Psi2) == 0.0);
    CHECK(psi_prime(1.0, 1.0, PsiShape::Psi2) == 0.0);
    CHECK(psi_prime(0.75, 1.5, PsiShape::Psi3) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(psi_prime(3.0, 1.5, PsiShape::Psi3) == 0.0);
    CHECK_THROWS_AS(psi_prime(-0.1, 1.0, PsiShape::Psi2), InvalidNorm);
}

TEST_CASE("psi is an antiderivative of psi_prime") {
    for (PsiShape shape : {PsiShape::Psi2, PsiShape::Psi3}) {
        for (double D : {0.3, 1.0, 4.0}) {
            CHECK(psi(0.0, D, shape) == 0.0);
            const int steps = 30000;  // D falls on a grid point
            const double hi = 1.5 * D, h = hi / steps;
            double integral = 0.0;
            for (int i = 0; i < steps; ++i) integral += h * psi_prime((i + 0.5) * h, D, shape);
            CHECK(psi(hi, D, shape) == doctest::Approx(integral).epsilon(1e-6));
        }
    }
}

TEST_CASE("softplus and inverse") {
    for (double v : {1e-6, 0.1, 0.7, 1.0, 5.0, 40.0}) CHECK(softplus(inverse_softplus(v)) == doctest::Approx(v).epsilon(1e-12));
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
    CHECK(std::isfinite(softplus(1000.0)));
}

TEST_CASE("edge thresholds") {
    const Dense inputs = Dense::Ones(5, 3);
    const Dense theta = Dense::Constant(1, 1, inverse_softplus(0.7));
    const Dense single = edge_thresholds(inputs, ThresholdMode::Single, std::vector<Dense>{theta});
    CHECK(single.rows() == 5);
    for (Eigen::Index e = 0; e < 5; ++e) CHECK(single(e, 0) == doctest::Approx(0.7).epsilon(1e-14));

    const Dense b = Dense::Constant(1, 1, -0.3);
    const Dense zero = edge_thresholds(inputs, ThresholdMode::PerEdge, std::vector<Dense>{Dense::Zero(3, 1), b});
    for (Eigen::Index e = 0; e < 5; ++e) CHECK(zero(e, 0) == doctest::Approx(softplus(-0.3)).epsilon(1e-15));

    testgen::Engine eng(1);
    const Dense many = testgen::random_dense(eng, 10000, 3, 0.0, 5.0);
    const Dense pe = edge_thresholds(many, ThresholdMode::PerEdge,
                                     std::vector<Dense>{testgen::random_dense(eng, 3, 1, -3, 3), b});
    CHECK(pe.minCoeff() > 0.0);
    CHECK_THROWS_AS(edge_thresholds(many, ThresholdMode::PerEdge, std::vector<Dense>{Dense::Zero(2, 1), b}), ShapeError);
}

TEST_CASE("apply_phi: identity, open gates, gate oracle, MLP oracle") {
    testgen::Engine eng(2);
    const int d = 3;
    const Dense y = testgen::random_dense(eng, 7 * d, 4);
    CHECK(apply_phi(y, d, NonlinearitySpec::identity()) == y);

    const Dense big = Dense::Constant(7, 1, 1e6);
    CHECK(apply_phi(y, d, NonlinearitySpec::bounded_confidence(PsiShape::Psi2, ThresholdMode::Single), big) == y);

    for (PsiShape shape : {PsiShape::Psi2, PsiShape::Psi3}) {
        const Dense thr = testgen::random_dense(eng, 7, 1, 0.2, 2.0);
        const Dense got = apply_phi(y, d, NonlinearitySpec::bounded_confidence(shape, ThresholdMode::PerEdge), thr);
        CHECK(max_abs(got - gate_oracle(y, d, thr, shape)) < 1e-15);
    }

    for (int layers = 1; layers <= 4; ++layers) {
        const auto spec = NonlinearitySpec::mlp(layers, 5);
        const auto widths = mlp_widths(spec, d);
        CHECK(widths.front() == d);
        CHECK(widths.back() == d);
        CHECK(widths.size() == static_cast<std::size_t>(layers + 1));
        const MlpWeights m = random_mlp(eng, widths, false);
        CHECK(max_abs(apply_phi(y, d, spec, {}, m) - mlp_oracle(y, d, m)) < 1e-13);
    }
    CHECK(mlp_widths(NonlinearitySpec::mlp(), d) == std::vector<int>{3, 3, 3});
    CHECK_THROWS_AS(mlp_widths(NonlinearitySpec::mlp(5), d), ConfigError);
    CHECK_THROWS_AS(mlp_widths(NonlinearitySpec::mlp(0), d), ConfigError);
}

TEST_CASE("Phi(0) = 0 for every nonlinearity with zero MLP biases") {
    testgen::Engine eng(3);
    const Dense zero = Dense::Zero(4 * 2, 3);
    CHECK(apply_phi(zero, 2, NonlinearitySpec::identity()) == zero);
    const Dense thr = Dense::Constant(4, 1, 0.5);
    CHECK(apply_phi(zero, 2, NonlinearitySpec::bounded_confidence(PsiShape::Psi2, ThresholdMode::Single), thr) == zero);
    CHECK(apply_phi(zero, 2, NonlinearitySpec::bounded_confidence(PsiShape::Psi3, ThresholdMode::Single), thr) == zero);
    const auto spec = NonlinearitySpec::mlp(3, 4);
    CHECK(apply_phi(zero, 2, spec, {}, random_mlp(eng, mlp_widths(spec, 2), true)) == zero);
}

TEST_CASE("apply_phi is equivariant under edge permutation") {
    testgen::Engine eng(4);
    const int d = 2, E = 6;
    const Dense y = testgen::random_dense(eng, E * d, 3);
    const Dense thr = testgen::random_dense(eng, E, 1, 0.1, 1.5);
    std::vector<int> perm(E);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), eng);
    Dense py(E * d, 3), pthr(E, 1);
    for (int e = 0; e < E; ++e) {
        py.middleRows(e * d, d) = y.middleRows(perm[static_cast<std::size_t>(e)] * d, d);
        pthr(e, 0) = thr(perm[static_cast<std::size_t>(e)], 0);
    }
    const auto spec = NonlinearitySpec::bounded_confidence(PsiShape::Psi3, ThresholdMode::PerEdge);
    const Dense out = apply_phi(y, d, spec, thr), pout = apply_phi(py, d, spec, pthr);
    for (int e = 0; e < E; ++e) CHECK(pout.middleRows(e * d, d) == out.middleRows(perm[static_cast<std::size_t>(e)] * d, d));
    const auto mspec = NonlinearitySpec::mlp();
    const MlpWeights m = random_mlp(eng, mlp_widths(mspec, d), false);
    const Dense mo = apply_phi(y, d, mspec, {}, m), mpo = apply_phi(py, d, mspec, {}, m);
    for (int e = 0; e < E; ++e) CHECK(mpo.middleRows(e * d, d) == mo.middleRows(perm[static_cast<std::size_t>(e)] * d, d));
}

TEST_CASE("one gated edge equals deleting it from the linear Laplacian") {
    testgen::Engine eng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2;
        const EdgeList el{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {1, 3}};
        const Graph g = build_graph(5, el);
        const Sheaf s = testgen::random_sheaf(eng, g, d, MapKind::Orthogonal);
        const Dense x = testgen::random_dense(eng, 5 * d, 1);
        const BlockSparse delta = assemble_coboundary(s, g);
        const Dense y = delta.apply(x);
        const std::size_t cut = static_cast<std::size_t>(testgen::uniform_int(eng, 0, 5));
        Dense thr = Dense::Constant(6, 1, 1e6);
        const double sq = y.middleRows(static_cast<Eigen::Index>(cut) * d, d).squaredNorm();
        thr(static_cast<Eigen::Index>(cut), 0) = 0.5 * sq;
        const Dense got =
            apply_nonlinear_laplacian(delta, NonlinearitySpec::bounded_confidence(PsiShape::Psi2, ThresholdMode::PerEdge), x, thr);

        EdgeList kept;
        Sheaf ks;
        ks.d = d;
        ks.kind = s.kind;
        ks.maps = Dense(static_cast<Eigen::Index>(2 * (el.size() - 1)) * d, d);
        Eigen::Index row = 0;
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            if (e == cut) continue;
            kept.emplace_back(g.edge(e).lo, g.edge(e).hi);
            ks.maps.middleRows(row, 2 * d) = s.maps.middleRows(static_cast<Eigen::Index>(2 * e) * d, 2 * d);
            row += 2 * d;
        }
        const Graph h = build_graph(5, kept);
        CHECK(max_abs(got - oracle::laplacian_blockwise(ks, h) * x) < 1e-12);
    }
}

TEST_CASE("nonlinear Laplacian: identity is the graph Laplacian, sections map to zero, dense composition") {
    const EdgeList el{{0, 1}, {1, 2}, {0, 2}, {2, 3}};
    const Graph g = build_graph(4, el);
    Sheaf triv;
    triv.d = 1;
    triv.maps = Dense::Ones(8, 1);
    testgen::Engine eng(6);
    const Dense x = testgen::random_dense(eng, 4, 3);
    Dense A = Dense::Zero(4, 4);
    for (auto [a, b] : el) A(a, b) = A(b, a) = 1;
    const Dense Lg = Dense(A.rowwise().sum().asDiagonal()) - A;
    CHECK(max_abs(apply_nonlinear_laplacian(assemble_coboundary(triv, g), NonlinearitySpec::identity(), x) - Lg * x) < 1e-14);

    std::vector<Eigen::MatrixXd> frames;
    const Graph rg = testgen::random_graph(eng, 7, 0.5);
    const Sheaf cs = testgen::consistent_orthogonal_sheaf(eng, rg, 3, &frames);
    Dense section(21, 2);
    const Eigen::MatrixXd c = testgen::random_dense(eng, 3, 2);
    for (int v = 0; v < 7; ++v) section.middleRows(v * 3, 3) = frames[static_cast<std::size_t>(v)] * c;
    const BlockSparse cd = assemble_coboundary(cs, rg);
    const auto mspec = NonlinearitySpec::mlp();
    const Dense thr = Dense::Constant(static_cast<Eigen::Index>(rg.num_edges()), 1, 0.3);
    CHECK(max_abs(apply_nonlinear_laplacian(cd, mspec, section, {}, random_mlp(eng, mlp_widths(mspec, 3), true))) < 1e-12);
    CHECK(max_abs(apply_nonlinear_laplacian(cd, NonlinearitySpec::bounded_confidence(PsiShape::Psi3, ThresholdMode::Single),
                                            section, thr)) < 1e-12);

    for (int t = 0; t < 30; ++t) {
        const Graph gg = testgen::random_graph(eng, 8, 0.4);
        const Sheaf s = testgen::random_sheaf(eng, gg, 2, MapKind::Diagonal);
        const BlockSparse delta = assemble_coboundary(s, gg);
        const Dense xx = testgen::random_dense(eng, 16, 3);
        const Dense th = testgen::random_dense(eng, static_cast<Eigen::Index>(gg.num_edges()), 1, 0.05, 1.0);
        const Eigen::MatrixXd dd = oracle::coboundary(s, gg);
        const Dense yy = dd * xx;
        for (PsiShape shape : {PsiShape::Psi2, PsiShape::Psi3}) {
            const Dense got = apply_nonlinear_laplacian(delta, NonlinearitySpec::bounded_confidence(shape, ThresholdMode::PerEdge), xx, th);
            CHECK(max_abs(got - dd.transpose() * gate_oracle(yy, 2, th, shape)) < 1e-12);
        }
    }
}

TEST_CASE("open gates reproduce the normalized linear Laplacian exactly") {
    testgen::Engine eng(7);
    for (int t = 0; t < 20; ++t) {
        const Graph g = testgen::random_graph(eng, 9, 0.4);
        const Sheaf s = testgen::random_sheaf(eng, g, 3, MapKind::Orthogonal);
        const BlockSparse delta = assemble_coboundary(s, g);
        const BlockSparse L = sheaf_laplacian(delta);
        const BlockSparse D = d_inv_sqrt(block_degree(L));
        const BlockSparse nd = normalize_coboundary(delta, D);
        const Dense x = testgen::random_dense(eng, 27, 4);
        const Dense thr = Dense::Constant(static_cast<Eigen::Index>(g.num_edges()), 1, 1e300);
        const Dense lin = apply_nonlinear_laplacian(nd, NonlinearitySpec::identity(), x);
        const Dense bc = apply_nonlinear_laplacian(nd, NonlinearitySpec::bounded_confidence(PsiShape::Psi2, ThresholdMode::Single), x, thr);
        CHECK(bc == lin);
        CHECK(max_abs(lin - normalized_laplacian(L, D).apply(x)) < 1e-12);
    }
}

TEST_CASE("potential energy") {
    const auto bc2 = NonlinearitySpec::bounded_confidence(PsiShape::Psi2, ThresholdMode::Single);
    CHECK(potential_energy(Dense::Zero(6, 2), 2, bc2, Dense::Constant(3, 1, 1.0)) == 0.0);
    Dense y(2, 1);
    y << std::sqrt(0.4), 0.0;
    CHECK(potential_energy(y, 2, bc2, Dense::Constant(1, 1, 1.0)) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(potential_energy(y, 2, NonlinearitySpec::mlp(), {}), NoPotential);
}

TEST_CASE("gradient field: dPsi/dX = 2 delta^T Phi(delta X)") {
    testgen::Engine eng(8);
    for (PsiShape shape : {PsiShape::Psi2, PsiShape::Psi3}) {
        const auto spec = NonlinearitySpec::bounded_confidence(shape, ThresholdMode::PerEdge);
        int done = 0;
        while (done < 10) {
            const Graph g = testgen::random_graph(eng, 6, 0.5);
            const Sheaf s = testgen::random_sheaf(eng, g, 2, MapKind::Orthogonal);
            const BlockSparse delta = assemble_coboundary(s, g);
            const Dense x = testgen::random_dense(eng, 12, 2);
            const Dense thr = testgen::random_dense(eng, static_cast<Eigen::Index>(g.num_edges()), 1, 0.5, 3.0);
            // skip probes near the threshold so the central difference stays on one side
            const Dense y = delta.apply(x);
            bool near = false;
            for (Eigen::Index e = 0; e < thr.rows(); ++e)
                for (Eigen::Index c = 0; c < 2; ++c)
                    near |= std::abs(y.block(e * 2, c, 2, 1).squaredNorm() - thr(e, 0)) < 1e-3;
            if (near) continue;
            const Dense analytic = 2.0 * apply_nonlinear_laplacian(delta, spec, x, thr);
            const double h = 1e-6;
            double worst = 0.0;
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                Dense xp = x, xm = x;
                xp.data()[i] += h;
                xm.data()[i] -= h;
                const double num = (potential_energy(delta.apply(xp), 2, spec, thr) -
                                    potential_energy(delta.apply(xm), 2, spec, thr)) / (2 * h);
                worst = std::max(worst, std::abs(num - analytic.data()[i]) / std::max(1.0, std::abs(num)));
            }
            CHECK(worst < 1e-4);
            ++done;
        }
    }
}

TEST_CASE("tape ops agree with the plain functions and pass grad_check") {
    testgen::Engine eng(9);
    const int d = 3, E = 5, f = 2;
    const Dense y = testgen::random_dense(eng, E * d, f);
    {
        ad::Tape t;
        const ad::Var v = ad::edge_channel_vectors(t, t.constant(y), d);
        CHECK(t.value(v).rows() == E * f);
        CHECK(t.value(ad::from_edge_channel_vectors(t, v, d, f)) == y);
    }
    for (PsiShape shape : {PsiShape::Psi2, PsiShape::Psi3}) {
        const Dense thr = testgen::random_dense(eng, E, 1, 0.3, 2.0);
        ad::Tape t;
        const Dense got = t.value(ad::bc_gate(t, t.constant(y), t.constant(thr), d, shape));
        CHECK(max_abs(got - gate_oracle(y, d, thr, shape)) < 1e-15);
    }
    {
        const auto spec = NonlinearitySpec::mlp(3, 4);
        const MlpWeights m = random_mlp(eng, mlp_widths(spec, d), false);
        ad::Tape t;
        ad::MlpVars mv;
        for (std::size_t i = 0; i < m.weights.size(); ++i) {
            mv.weights.push_back(t.constant(m.weights[i]));
            mv.biases.push_back(t.constant(m.biases[i]));
        }
        CHECK(max_abs(t.value(ad::mlp_phi(t, t.constant(y), d, mv)) - mlp_oracle(y, d, m)) < 1e-13);
    }

    // Psi3 gate: gradients w.r.t. Y and thresholds
    ad::TapeFunction gate3 = [&](ad::Tape& t, std::span<const ad::Var> p) {
        const ad::Var thr = ad::thresholds_per_edge(t, p[1], p[2], p[3]);
        return ad::sum(t, ad::row_squared_norm(t, ad::bc_gate(t, p[0], thr, d, PsiShape::Psi3)));
    };
    Rng rng(1);
    auto sample = [&](Rng&) {
        return std::vector<Dense>{testgen::random_dense(eng, E * d, f), testgen::random_dense(eng, E, d, 0, 1),
                                  testgen::random_dense(eng, d, 1), testgen::random_dense(eng, 1, 1, 0.5, 1.5)};
    };
    for (int probe = 0; probe < 20; ++probe) CHECK(ad::grad_check_resampled(gate3, sample, rng).result.max_rel_error < 1e-4);

    ad::TapeFunction gate2 = [&](ad::Tape& t, std::span<const ad::Var> p) {
        const ad::Var thr = ad::thresholds_single(t, p[1], E);
        return ad::sum(t, ad::row_squared_norm(t, ad::bc_gate(t, p[0], thr, d, PsiShape::Psi2)));
    };
    auto sample2 = [&](Rng&) {
        return std::vector<Dense>{testgen::random_dense(eng, E * d, f), testgen::random_dense(eng, 1, 1, 0.0, 1.0)};
    };
    for (int probe = 0; probe < 20; ++probe) CHECK(ad::grad_check_resampled(gate2, sample2, rng).result.max_rel_error < 1e-4);

    ad::TapeFunction mlp = [&](ad::Tape& t, std::span<const ad::Var> p) {
        ad::MlpVars mv{{p[1], p[3]}, {p[2], p[4]}};
        return ad::sum(t, ad::row_squared_norm(t, ad::mlp_phi(t, p[0], d, mv)));
    };
    auto sample3 = [&](Rng&) {
        return std::vector<Dense>{testgen::random_dense(eng, E * d, f), testgen::random_dense(eng, d, d),
                                  testgen::random_dense(eng, 1, d), testgen::random_dense(eng, d, d),
                                  testgen::random_dense(eng, 1, d)};
    };
    for (int probe = 0; probe < 20; ++probe) CHECK(ad::grad_check_resampled(mlp, sample3, rng).result.max_rel_error < 1e-4);
}

TEST_CASE("probe at the Psi2 jump is flagged") {
    const int d = 1;
    Dense y(1, 1);
    y << 1.0;  // ||y||^2 = 1 = softplus(theta)
    ad::TapeFunction f = [&](ad::Tape& t, std::span<const ad::Var> p) {
        return ad::sum(t, ad::bc_gate(t, p[0], ad::thresholds_single(t, p[1], 1), d, PsiShape::Psi2));
    };
    CHECK_THROWS_AS(ad::grad_check(f, {y, Dense::Constant(1, 1, inverse_softplus(1.0))}), NonSmoothPoint);
}

}
