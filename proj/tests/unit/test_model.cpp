#include <doctest.h>

#include <cmath>
#include <numeric>

#include "generators.hpp"
#include "gradient_suite.hpp"
#include "nlsd/errors.hpp"
#include "nlsd/grad_check.hpp"
#include "nlsd/model.hpp"
#include "oracles.hpp"

using namespace nlsd;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

const std::vector<std::string>& kRoster = testgen::variant_roster();

ModelConfig config_for(const std::string& name, int d, int f, int layers, int p, int classes) {
    ModelConfig c = ModelConfig::from_name(name);
    c.d = d;
    c.hidden = f;
    c.layers = layers;
    c.input_dim = p;
    c.num_classes = classes;
    return c;
}

Sheaf fixed_sheaf(testgen::Engine& eng, const Graph& g, int d) { return testgen::random_sheaf(eng, g, d, MapKind::Orthogonal); }

// Layer handles for a plain linear layer with W1 = I, W2 = I, eps = 0.
LayerVars plain_vars(ad::Tape& t, int d, int f) {
    LayerVars v;
    v.w1 = t.constant(Dense::Identity(d, d));
    v.w2 = t.constant(Dense::Identity(f, f));
    v.eps = t.constant(Dense::Zero(1, d));
    v.alpha = t.constant(Dense::Zero(1, d));
    return v;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("variant names round-trip") {
    for (const auto& name : kRoster) CHECK(ModelConfig::from_name(name).name() == name);
    const ModelConfig c = ModelConfig::from_name("BC-m-O(d)-aNLSD");
    CHECK(c.variant == Variant::BoundedConfidence);
    CHECK(c.thresholds == ThresholdMode::PerEdge);
    CHECK(c.maps == MapKind::Orthogonal);
    CHECK(c.normalization == Normalization::Alpha);
    for (const char* bad : {"", "NSD", "BC-x-Diag-NLSD", "MLP-Diag", "NSD-O(d)+psi3", "MLP-Diag-NLSD+psi3", "GCN2"}) {
        CHECK_THROWS_AS(ModelConfig::from_name(bad), ConfigError);
    }
}

TEST_CASE("config validation") {
    ModelConfig c = config_for("NSD-Diag", 0, 4, 2, 3, 2);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.d = 2;
    c.mlp_phi_layers = 5;
    c.variant = Variant::MlpPhi;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter names follow the configuration") {
    ModelConfig c = config_for("BC-m-O(d)-aNLSD", 3, 4, 2, 5, 3);
    const auto names = parameter_names(c);
    CHECK(names.front() == "encoder.w");
    CHECK(names.back() == "head.b");
    CHECK(std::count(names.begin(), names.end(), "layer1.thr_w") == 1);
    CHECK(std::count(names.begin(), names.end(), "layer0.alpha") == 1);
    c.shared_sheaf = true;
    c.use_w2 = false;
    const auto shared = parameter_names(c);
    CHECK(std::count(shared.begin(), shared.end(), "sheaf.learner") == 1);
    CHECK(std::count(shared.begin(), shared.end(), "layer0.learner") == 0);
    CHECK(std::count(shared.begin(), shared.end(), "layer0.w2") == 0);
}

TEST_CASE("initialisation") {
    Rng rng(1);
    const Model m(config_for("BC-s-O(d)-NLSD", 3, 4, 2, 5, 3), rng);
    CHECK(m.param("layer0.w1") == Dense::Identity(3, 3));
    const Dense w2 = m.param("layer1.w2");
    CHECK(max_abs(w2.transpose() * w2 - Dense::Identity(4, 4)) < 1e-12);
    CHECK(m.param("layer0.eps") == Dense::Zero(1, 3));
    CHECK(softplus(m.param("layer0.theta")(0, 0)) == doctest::Approx(1.0));
    CHECK(m.param("encoder.b") == Dense::Zero(1, 12));
    CHECK_THROWS_AS(m.param("nope"), ConfigError);
}

TEST_CASE("restoring from a parameter list checks names and shapes") {
    Rng rng(2);
    const ModelConfig cfg = config_for("MLP-Diag-NLSD", 2, 3, 1, 4, 2);
    const Model m(cfg, rng);
    CHECK_NOTHROW(Model(cfg, m.params()));
    auto bad = m.params();
    bad[1].value = Dense::Zero(2, 2);
    CHECK_THROWS_AS(Model(cfg, bad), ShapeError);
    bad = m.params();
    bad.pop_back();
    CHECK_THROWS_AS(Model(cfg, bad), ShapeError);
}

TEST_CASE("input encoder") {
    testgen::Engine eng(3);
    const EdgeList e{{0, 1}, {1, 2}};
    const Graph g = build_graph(3, e);
    const Dense raw = testgen::random_dense(eng, 3, 4);
    Rng rng(3);

    // zero weights: X0 = relu(bias) broadcast; with T=0 and an identity head the logits expose X0
    ModelConfig cfg = config_for("NSD-Diag", 2, 2, 0, 4, 4);
    Model m(cfg, rng);
    m.param("encoder.w").setZero();
    m.param("encoder.b") << 0.5, -1.0, 2.0, 0.25;
    m.param("head.w") = Dense::Identity(4, 4);
    const Dense z = m.predict_logits(raw, ModelContext::build(g, cfg));
    for (int v = 0; v < 3; ++v) {
        CHECK(z(v, 0) == 0.5);
        CHECK(z(v, 1) == 0.0);
        CHECK(z(v, 2) == 2.0);
        CHECK(z(v, 3) == 0.25);
    }

    // d=1, f=p, identity weights: X0 = relu(raw)
    ModelConfig c1 = config_for("NSD-O(d)", 1, 4, 0, 4, 4);
    Model m1(c1, rng);
    m1.param("encoder.w") = Dense::Identity(4, 4);
    m1.param("head.w") = Dense::Identity(4, 4);
    CHECK(m1.predict_logits(raw, ModelContext::build(g, c1)) == Dense(raw.cwiseMax(0.0)));

    // wrong feature width
    CHECK_THROWS_AS(m1.predict_logits(Dense::Zero(3, 5), ModelContext::build(g, c1)), ShapeError);
}

TEST_CASE("encoder output shape and block layout") {
    testgen::Engine eng(4);
    const Graph g = testgen::random_graph(eng, 5, 0.5);
    ModelConfig cfg = config_for("NSD-Diag", 3, 2, 0, 4, 2);
    Rng rng(4);
    const Model m(cfg, rng);
    ad::Tape t;
    const auto fw = m.forward(t, testgen::random_dense(eng, 5, 4), ModelContext::build(g, cfg));
    CHECK(t.value(fw.logits).rows() == 5);
    CHECK(t.value(fw.logits).cols() == 2);
    // the encoder's reshape node is (n*d) x f
    bool found = false;
    for (std::uint32_t i = 0; i < t.size(); ++i) {
        const Dense& v = t.value(ad::Var{i});
        found |= v.rows() == 15 && v.cols() == 2;
    }
    CHECK(found);
}

TEST_CASE("linear layer with identity weights is one explicit Euler step of the normalized Laplacian") {
    testgen::Engine eng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = testgen::uniform_int(eng, 1, 3), f = 3;
        const Graph g = testgen::random_graph(eng, 7, 0.4);
        const Sheaf s = fixed_sheaf(eng, g, d);
        ModelConfig cfg = config_for("NSD-O(d)", d, f, 1, 2, 2);
        cfg.use_sigma = false;
        const SheafLayout layout = SheafLayout::build(g, d);
        const Dense x = testgen::random_dense(eng, 7 * d, f);
        ad::Tape t;
        const Dense out = t.value(diffusion_layer(t, t.constant(x), layout, plain_vars(t, d, f), t.constant(s.maps), cfg));
        const Eigen::MatrixXd delta = oracle::normalized(oracle::laplacian_blockwise(s, g), d);
        const Eigen::MatrixXd expect = (Eigen::MatrixXd::Identity(7 * d, 7 * d) - delta) * Eigen::MatrixXd(x);
        CHECK(max_abs(out - expect) < 1e-12);
    }
}

TEST_CASE("harmonic input is only rescaled by (1 + eps)") {
    testgen::Engine eng(6);
    const int d = 3, f = 2;
    const Graph g = testgen::random_graph(eng, 6, 0.5);
    std::vector<Eigen::MatrixXd> frames;
    const Sheaf s = testgen::consistent_orthogonal_sheaf(eng, g, d, &frames);
    // harmonic for the normalised operator: D^{1/2} times a global section (D_v = deg_v I)
    Dense x(6 * d, f);
    const Eigen::MatrixXd c = testgen::random_dense(eng, d, f);
    const auto deg = g.degrees();
    for (int v = 0; v < 6; ++v) {
        x.middleRows(v * d, d) = std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(v)])) * frames[static_cast<std::size_t>(v)] * c;
    }
    const SheafLayout layout = SheafLayout::build(g, d);
    for (const char* name : {"NSD-O(d)", "BC-s-O(d)-NLSD", "MLP-O(d)-NLSD"}) {
        ModelConfig cfg = config_for(name, d, f, 1, 2, 2);
        ad::Tape t;
        LayerVars v = plain_vars(t, d, f);
        const Dense eps_raw = testgen::random_dense(eng, 1, d);
        v.eps = t.constant(eps_raw);
        v.theta = t.constant(Dense::Constant(1, 1, 0.3));
        v.phi.weights = {t.constant(testgen::random_dense(eng, d, d)), t.constant(testgen::random_dense(eng, d, d))};
        v.phi.biases = {t.constant(Dense::Zero(1, d)), t.constant(Dense::Zero(1, d))};
        const Dense out = t.value(diffusion_layer(t, t.constant(x), layout, v, t.constant(s.maps), cfg));
        Dense expect = x;
        for (Eigen::Index r = 0; r < x.rows(); ++r) expect.row(r) *= 1.0 + std::tanh(eps_raw(0, r % d));
        CHECK(max_abs(out - expect) < 1e-12);
    }
}

TEST_CASE("BC layers with open gates equal the NSD layer exactly") {
    testgen::Engine eng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Graph g = testgen::random_graph(eng, 8, 0.4);
        for (const char* kind : {"Diag", "O(d)"}) {
            const int d = 3, f = 4;
            const ModelConfig nsd = config_for(std::string("NSD-") + kind, d, f, 2, 5, 3);
            Rng rng(static_cast<std::uint64_t>(trial));
            Model base(nsd, rng);
            const Dense raw = testgen::random_dense(eng, 8, 5);
            const Dense ref = base.predict_logits(raw, ModelContext::build(g, nsd));
            for (const char* mode : {"s", "m"}) {
                const ModelConfig bc = config_for(std::string("BC-") + mode + "-" + kind + "-NLSD", d, f, 2, 5, 3);
                std::vector<NamedParam> params;
                for (const auto& name : parameter_names(bc)) {
                    NamedParam p{name, {}};
                    if (name.ends_with(".theta") || name.ends_with(".thr_b")) {
                        p.value = Dense::Constant(1, 1, 1e300);
                    } else if (name.ends_with(".thr_w")) {
                        p.value = Dense::Zero(d, 1);
                    } else {
                        p.value = base.param(name);
                    }
                    params.push_back(std::move(p));
                }
                const Model m(bc, std::move(params));
                CHECK(m.predict_logits(raw, ModelContext::build(g, bc)) == ref);
            }
        }
    }
}

TEST_CASE("d = 1 identity sheaf reduces to GCN-style propagation X - Delta X w W2") {
    testgen::Engine eng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const Graph g = testgen::random_graph(eng, 9, 0.4);
        const int f = 4;
        ModelConfig cfg = config_for("NSD-O(d)", 1, f, 1, 2, 2);
        cfg.use_sigma = false;
        const SheafLayout layout = SheafLayout::build(g, 1);
        ad::Tape t;
        const Dense x = testgen::random_dense(eng, 9, f);
        const Dense w2 = testgen::random_dense(eng, f, f);
        const double w1 = 0.7;
        LayerVars v = plain_vars(t, 1, f);
        v.w1 = t.constant(Dense::Constant(1, 1, w1));
        v.w2 = t.constant(w2);
        v.learner = t.constant(Dense::Zero(2, 0));
        // maps come from the learner, which for d = 1 orthogonal is always the identity
        const ad::Var maps = ad::learn_maps(t, t.constant(x), layout, v.learner, MapKind::Orthogonal);
        const Dense out = t.value(diffusion_layer(t, t.constant(x), layout, v, maps, cfg));

        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(9, 9);
        for (auto& e : g.edges()) A(e.lo, e.hi) = A(e.hi, e.lo) = 1.0;
        Eigen::VectorXd dinv(9);
        for (int i = 0; i < 9; ++i) {
            const double deg = A.row(i).sum();
            dinv(i) = deg > 0 ? 1.0 / std::sqrt(deg) : 1.0;
        }
        Eigen::MatrixXd lap = -(dinv.asDiagonal() * A * dinv.asDiagonal());
        for (int i = 0; i < 9; ++i) lap(i, i) += A.row(i).sum() > 0 ? 1.0 : 0.0;
        const Eigen::MatrixXd expect = Eigen::MatrixXd(x) - w1 * lap * Eigen::MatrixXd(x) * Eigen::MatrixXd(w2);
        CHECK(max_abs(out - expect) < 1e-12);
    }
}

TEST_CASE("T = 0 is encoder plus head; forwards are deterministic") {
    testgen::Engine eng(9);
    const Graph g = testgen::random_graph(eng, 6, 0.5);
    const Dense raw = testgen::random_dense(eng, 6, 3);
    ModelConfig cfg = config_for("MLP-O(d)-NLSD", 2, 3, 0, 3, 2);
    Rng rng(1);
    const Model m(cfg, rng);
    const Dense enc = (Eigen::MatrixXd(raw) * Eigen::MatrixXd(m.param("encoder.w"))).rowwise() +
                      Eigen::RowVectorXd(m.param("encoder.b"));
    const Eigen::MatrixXd expect = (enc.cwiseMax(0.0) * Eigen::MatrixXd(m.param("head.w"))).rowwise() +
                                   Eigen::RowVectorXd(m.param("head.b"));
    CHECK(max_abs(m.predict_logits(raw, ModelContext::build(g, cfg)) - expect) < 1e-14);

    for (const auto& name : kRoster) {
        const ModelConfig c = config_for(name, 3, 2, 2, 3, 3);
        Rng r1(42), r2(42);
        const Model a(c, r1), b(c, r2);
        const ModelContext ctx = ModelContext::build(g, c);
        CHECK(a.predict_logits(raw, ctx) == b.predict_logits(raw, ctx));
    }
}

// MLP-Phi is not odd, so the orientation of each edge has to travel with it.
TEST_CASE("node relabelling permutes the logits") {
    testgen::Engine eng(10);
    for (const auto& name : kRoster) {
        const int n = 8;
        const Graph g = testgen::random_graph(eng, n, 0.4);
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), eng);
        EdgeList pe;
        for (auto& e : g.edges()) pe.emplace_back(perm[static_cast<std::size_t>(e.lo)], perm[static_cast<std::size_t>(e.hi)]);
        const Graph canon = build_graph(n, pe);
        std::vector<bool> flip(canon.num_edges());
        for (auto& e : g.edges()) {
            const int a = perm[static_cast<std::size_t>(e.tail())], b = perm[static_cast<std::size_t>(e.head())];
            for (std::size_t k = 0; k < canon.num_edges(); ++k) {
                if (canon.edge(k).lo == std::min(a, b) && canon.edge(k).hi == std::max(a, b)) flip[k] = a > b;
            }
        }
        const Graph h = canon.with_orientation(flip);
        const Dense raw = testgen::random_dense(eng, n, 3);
        Dense praw(n, 3);
        for (int v = 0; v < n; ++v) praw.row(perm[static_cast<std::size_t>(v)]) = raw.row(v);
        const ModelConfig c = config_for(name, 2, 3, 2, 3, 3);
        Rng rng(5);
        const Model m(c, rng);
        const Dense a = m.predict_logits(raw, ModelContext::build(g, c));
        const Dense b = m.predict_logits(praw, ModelContext::build(h, c));
        double worst = 0.0;
        for (int v = 0; v < n; ++v) worst = std::max(worst, max_abs(b.row(perm[static_cast<std::size_t>(v)]) - a.row(v)));
        CHECK_MESSAGE(worst < 1e-10, name);
    }
}

TEST_CASE("GCN baseline matches the dense propagation rule") {
    testgen::Engine eng(11);
    const Graph g = testgen::random_graph(eng, 7, 0.4);
    const ModelConfig c = config_for("GCN", 2, 3, 2, 4, 3);
    Rng rng(6);
    const Model m(c, rng);
    const Dense raw = testgen::random_dense(eng, 7, 4);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(7, 7);
    for (auto& e : g.edges()) A(e.lo, e.hi) = A(e.hi, e.lo) = 1.0;
    const Eigen::VectorXd dinv = A.rowwise().sum().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd ah = dinv.asDiagonal() * A * dinv.asDiagonal();
    const Eigen::MatrixXd h = ((ah * Eigen::MatrixXd(raw) * Eigen::MatrixXd(m.param("gcn0.w"))).rowwise() +
                               Eigen::RowVectorXd(m.param("gcn0.b"))).cwiseMax(0.0);
    const Eigen::MatrixXd expect = (ah * h * Eigen::MatrixXd(m.param("gcn1.w"))).rowwise() + Eigen::RowVectorXd(m.param("gcn1.b"));
    CHECK(max_abs(m.predict_logits(raw, ModelContext::build(g, c)) - expect) < 1e-12);
}

TEST_CASE("loss") {
    std::vector<int> lab{0, 1, 2, 1};
    std::vector<std::uint8_t> all{1, 1, 1, 1}, some{1, 0, 1, 0}, none{0, 0, 0, 0};
    CHECK(cross_entropy(Dense::Zero(4, 3), lab, all) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK_THROWS_AS(cross_entropy(Dense::Zero(4, 3), lab, none), EmptyMask);

    Dense onehot = Dense::Zero(4, 3);
    for (int r = 0; r < 4; ++r) onehot(r, lab[static_cast<std::size_t>(r)]) = 1.0;
    double prev = INFINITY;
    for (double scale : {0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
        const double l = cross_entropy(scale * onehot, lab, all);
        CHECK(l < prev);
        prev = l;
    }
    CHECK(prev < 1e-20);

    testgen::Engine eng(12);
    for (int t = 0; t < 50; ++t) {
        const Dense z = testgen::random_dense(eng, 4, 3, -20, 20);
        CHECK(std::abs(cross_entropy(z, lab, some) - oracle::cross_entropy(z, lab, some)) < 1e-12);
    }
}

TEST_CASE("argmax") {
    Dense z(2, 3);
    z << 0.1, 0.5, 0.2, 3.0, -1.0, 3.0;
    CHECK(argmax_rows(z) == std::vector<int>{1, 0});
}

TEST_CASE("end-to-end gradients: every variant, 6 nodes, 10 seeds") {
    for (const auto& name : kRoster) {
        const auto res = testgen::network_gradient_check(name);
        CHECK_MESSAGE(res.worst < 1e-3, name << " worst relative error " << res.worst << " after " << res.probes << " probes");
    }
}

}
