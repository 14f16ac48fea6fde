#include "nlsd/model.hpp"

#include <cmath>
#include <algorithm>
#include <string_view>

#include <Eigen/QR>

#include "nlsd/errors.hpp"

namespace nlsd {

namespace {

std::string map_label(MapKind k) { return k == MapKind::Diagonal ? "Diag" : "O(d)"; }

struct Shape {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
};

std::vector<Shape> parameter_shapes(const ModelConfig& c) {
    std::vector<Shape> out;
    const Eigen::Index d = c.d, f = c.hidden, p = c.input_dim, C = c.num_classes;
    if (c.architecture == Architecture::Mlp || c.architecture == Architecture::Gcn) {
        const std::string pre = c.architecture == Architecture::Mlp ? "mlp" : "gcn";
        out.push_back({pre + "0.w", p, d * f});
        out.push_back({pre + "0.b", 1, d * f});
        out.push_back({pre + "1.w", d * f, C});
        out.push_back({pre + "1.b", 1, C});
        return out;
    }
    const Eigen::Index m = learner_outputs(c.d, c.maps);
    out.push_back({"encoder.w", p, d * f});
    out.push_back({"encoder.b", 1, d * f});
    if (c.shared_sheaf) out.push_back({"sheaf.learner", 2 * d, m});
    const auto widths = mlp_widths(c.nonlinearity(), c.d);
    for (int t = 0; t < c.layers; ++t) {
        const std::string pre = "layer" + std::to_string(t) + ".";
        if (!c.shared_sheaf) out.push_back({pre + "learner", 2 * d, m});
        out.push_back({pre + "w1", d, d});
        if (c.use_w2) out.push_back({pre + "w2", f, f});
        out.push_back({pre + "eps", 1, d});
        if (c.normalization == Normalization::Alpha) out.push_back({pre + "alpha", 1, d});
        if (c.variant == Variant::BoundedConfidence) {
            if (c.thresholds == ThresholdMode::Single) {
                out.push_back({pre + "theta", 1, 1});
            } else {
                out.push_back({pre + "thr_w", d, 1});
                out.push_back({pre + "thr_b", 1, 1});
            }
        }
        if (c.variant == Variant::MlpPhi) {
            for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
                out.push_back({pre + "phi" + std::to_string(i) + ".w", widths[i], widths[i + 1]});
                out.push_back({pre + "phi" + std::to_string(i) + ".b", 1, widths[i + 1]});
            }
        }
    }
    out.push_back({"head.w", d * f, C});
    out.push_back({"head.b", 1, C});
    return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Dense glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Dense w(rows, cols);
    const double a = rows + cols > 0 ? std::sqrt(6.0 / static_cast<double>(rows + cols)) : 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
    return w;
}

Dense random_orthogonal(Eigen::Index n, Rng& rng) {
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // fix column signs so the draw is Haar distributed
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

ad::Var activate(ad::Tape& t, ad::Var z, Activation a) {
    switch (a) {
        case Activation::Relu: return ad::relu(t, z);
        case Activation::Elu: return ad::elu(t, z);
        case Activation::Identity: return z;
    }
    return z;
}

}  // namespace

NonlinearitySpec ModelConfig::nonlinearity() const {
    switch (variant) {
        case Variant::Linear: return NonlinearitySpec::identity();
        case Variant::BoundedConfidence: return NonlinearitySpec::bounded_confidence(psi, thresholds);
        case Variant::MlpPhi: return NonlinearitySpec::mlp(mlp_phi_layers, mlp_phi_hidden);
    }
    return {};
}

std::string ModelConfig::name() const {
    if (architecture == Architecture::Mlp) return "MLP";
    if (architecture == Architecture::Gcn) return "GCN";
    const bool a = normalization == Normalization::Alpha;
    const std::string maps_s = map_label(maps);
    switch (variant) {
        case Variant::Linear: return std::string(a ? "aNSD-" : "NSD-") + maps_s;
        case Variant::BoundedConfidence: {
            std::string s = std::string("BC-") + (thresholds == ThresholdMode::Single ? "s-" : "m-") + maps_s +
                            (a ? "-aNLSD" : "-NLSD");
            if (psi == PsiShape::Psi3) s += "+psi3";
            return s;
        }
        case Variant::MlpPhi: return "MLP-" + maps_s + (a ? "-aNLSD" : "-NLSD");
    }
    return {};
}

ModelConfig ModelConfig::from_name(const std::string& label) {
    ModelConfig c;
    if (label == "MLP") {
        c.architecture = Architecture::Mlp;
        return c;
    }
    if (label == "GCN") {
        c.architecture = Architecture::Gcn;
        return c;
    }
    std::string s = label;
    if (ends_with(s, "+psi3")) {
        c.psi = PsiShape::Psi3;
        s.resize(s.size() - 5);
    }
    auto take_maps = [&](std::string_view rest) {
        if (rest == "Diag") {
            c.maps = MapKind::Diagonal;
        } else if (rest == "O(d)") {
            c.maps = MapKind::Orthogonal;
        } else {
            throw ConfigError("unknown variant '" + label + "'");
        }
    };
    std::string_view v = s;
    if (v.starts_with("NSD-") || v.starts_with("aNSD-")) {
        if (c.psi == PsiShape::Psi3) throw ConfigError("unknown variant '" + label + "'");
        c.variant = Variant::Linear;
        if (v.front() == 'a') c.normalization = Normalization::Alpha;
        take_maps(v.substr(v.find('-') + 1));
        return c;
    }
    auto strip_suffix = [&]() {
        if (ends_with(std::string(v), "-aNLSD")) {
            c.normalization = Normalization::Alpha;
            v.remove_suffix(6);
        } else if (ends_with(std::string(v), "-NLSD")) {
            v.remove_suffix(5);
        } else {
            throw ConfigError("unknown variant '" + label + "'");
        }
    };
    if (v.starts_with("BC-s-") || v.starts_with("BC-m-")) {
        c.variant = Variant::BoundedConfidence;
        c.thresholds = v[3] == 's' ? ThresholdMode::Single : ThresholdMode::PerEdge;
        v.remove_prefix(5);
        strip_suffix();
        take_maps(v);
        return c;
    }
    if (v.starts_with("MLP-") && c.psi == PsiShape::Psi2) {
        c.variant = Variant::MlpPhi;
        v.remove_prefix(4);
        strip_suffix();
        take_maps(v);
        return c;
    }
    throw ConfigError("unknown variant '" + label + "'");
}

void ModelConfig::validate() const {
    if (d < 1) throw ConfigError("d must be >= 1");
    if (hidden < 1) throw ConfigError("hidden channels must be >= 1");
    if (layers < 0) throw ConfigError("layers must be >= 0");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (!(threshold_init > 0.0)) throw ConfigError("threshold_init must be positive");
    if (variant == Variant::MlpPhi) mlp_widths(nonlinearity(), d);
}

std::vector<std::string> parameter_names(const ModelConfig& cfg) {
    std::vector<std::string> out;
    for (auto& s : parameter_shapes(cfg)) out.push_back(s.name);
    return out;
}

ModelContext ModelContext::build(const Graph& g, const ModelConfig& cfg) {
    ModelContext ctx;
    ctx.layout = SheafLayout::build(g, cfg.architecture == Architecture::SheafDiffusion ? cfg.d : 1);
    if (cfg.architecture == Architecture::Gcn) {
        const int n = g.num_nodes();
        std::vector<double> deg(static_cast<std::size_t>(n), 1.0);
        for (auto& e : g.edges()) {
            deg[static_cast<std::size_t>(e.lo)] += 1.0;
            deg[static_cast<std::size_t>(e.hi)] += 1.0;
        }
        auto p = std::make_shared<BlockPattern>();
        p->block = 1;
        p->block_rows = n;
        p->block_cols = n;
        // row-major order keeps accumulation deterministic
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
        for (auto& e : g.edges()) {
            adj[static_cast<std::size_t>(e.lo)].push_back(e.hi);
            adj[static_cast<std::size_t>(e.hi)].push_back(e.lo);
        }
        for (int v = 0; v < n; ++v) {
            auto& nb = adj[static_cast<std::size_t>(v)];
            nb.push_back(v);
            std::sort(nb.begin(), nb.end());
            for (int u : nb) {
                p->push(v, u, 1.0 / std::sqrt(deg[static_cast<std::size_t>(v)] * deg[static_cast<std::size_t>(u)]));
            }
        }
        ctx.gcn = std::move(p);
    }
    return ctx;
}

ad::Var layer_operator_maps(ad::Tape& t, ad::Var maps, const SheafLayout& layout, const ModelConfig& cfg) {
    if (cfg.normalization == Normalization::DegreeInvSqrt) return ad::normalize_maps(t, maps, layout);
    return maps;
}

ad::Var diffusion_layer(ad::Tape& t, ad::Var x, const SheafLayout& layout, const LayerVars& vars, ad::Var maps,
                        const ModelConfig& cfg) {
    const int d = layout.d;
    const Dense& X = t.value(x);
    if (X.rows() != static_cast<Eigen::Index>(layout.n) * d) throw ShapeError("diffusion_layer: X must be (n*d) x f");

    const ad::Var op = layer_operator_maps(t, maps, layout, cfg);
    ad::Var h = ad::block_left_mul(t, vars.w1, x);
    if (cfg.use_w2) h = ad::matmul(t, h, vars.w2);
    const ad::Var y = ad::coboundary_apply(t, layout, op, h);

    ad::Var phi = y;
    if (cfg.variant == Variant::BoundedConfidence) {
        ad::Var thr;
        if (cfg.thresholds == ThresholdMode::Single) {
            thr = ad::thresholds_single(t, vars.theta, layout.num_edges);
        } else {
            const ad::Var summary = ad::reshape(t, ad::row_mean(t, x), layout.n, d);
            const ad::Var diff = ad::abs(t, ad::sub(t, ad::gather_rows(t, summary, layout.edge_lo),
                                                    ad::gather_rows(t, summary, layout.edge_hi)));
            thr = ad::thresholds_per_edge(t, diff, vars.thr_w, vars.thr_b);
        }
        phi = ad::bc_gate(t, y, thr, d, cfg.psi);
    } else if (cfg.variant == Variant::MlpPhi) {
        phi = ad::mlp_phi(t, y, d, vars.phi);
    }

    ad::Var z = ad::coboundary_apply(t, layout, op, phi, true);
    if (cfg.use_sigma) z = activate(t, z, cfg.activation);
    if (cfg.normalization == Normalization::Alpha) {
        z = ad::stalk_scale(t, z, ad::add_scalar(t, ad::tanh(t, vars.alpha), 1.0));
    }
    const ad::Var keep = ad::stalk_scale(t, x, ad::add_scalar(t, ad::tanh(t, vars.eps), 1.0));
    return ad::sub(t, keep, z);
}

Model::Model(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const double theta0 = inverse_softplus(cfg_.threshold_init);
    for (auto& s : parameter_shapes(cfg_)) {
        Dense v;
        if (ends_with(s.name, ".b") || ends_with(s.name, ".eps") || ends_with(s.name, ".alpha")) {
            v = Dense::Zero(s.rows, s.cols);
        } else if (ends_with(s.name, ".w1")) {
            v = Dense::Identity(s.rows, s.cols);
        } else if (ends_with(s.name, ".w2")) {
            v = random_orthogonal(s.rows, rng);
        } else if (ends_with(s.name, ".theta") || ends_with(s.name, ".thr_b")) {
            v = Dense::Constant(s.rows, s.cols, theta0);
        } else {
            v = glorot(s.rows, s.cols, rng);
        }
        add(s.name, std::move(v));
    }
}

Model::Model(ModelConfig cfg, std::vector<NamedParam> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    const auto shapes = parameter_shapes(cfg_);
    if (shapes.size() != params_.size()) throw ShapeError("model: parameter count does not match the configuration");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        const auto& p = params_[i];
        if (p.name != s.name || p.value.rows() != s.rows || p.value.cols() != s.cols) {
            throw ShapeError("model: parameter '" + p.name + "' does not match expected '" + s.name + "' " +
                             std::to_string(s.rows) + "x" + std::to_string(s.cols));
        }
        if (!all_finite(p.value)) throw ShapeError("model: parameter '" + p.name + "' is not finite");
    }
}

std::size_t Model::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return i;
    }
    throw ConfigError("model has no parameter '" + name + "'");
}

const Dense& Model::param(const std::string& name) const { return params_[index_of(name)].value; }
Dense& Model::param(const std::string& name) { return params_[index_of(name)].value; }

std::size_t Model::num_scalars() const {
    std::size_t n = 0;
    for (auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

Model::Forward Model::forward(ad::Tape& t, const Dense& features, const ModelContext& ctx, bool trainable) const {
    Forward out;
    out.leaves.reserve(params_.size());
    for (auto& p : params_) out.leaves.push_back(trainable ? t.parameter(p.value) : t.constant(p.value));
    out.logits = forward(t, out.leaves, features, ctx);
    return out;
}

ad::Var Model::forward(ad::Tape& t, std::span<const ad::Var> leaves, const Dense& features,
                       const ModelContext& ctx) const {
    if (leaves.size() != params_.size()) throw ShapeError("forward: expected one leaf per parameter");
    if (features.cols() != cfg_.input_dim) {
        throw ShapeError("forward: features have " + std::to_string(features.cols()) + " columns, expected " +
                         std::to_string(cfg_.input_dim));
    }
    if (features.rows() != ctx.layout.n) throw ShapeError("forward: feature rows do not match the graph");

    std::size_t k = 0;
    auto next = [&]() { return leaves[k++]; };

    const ad::Var raw = t.constant(features);
    if (cfg_.architecture == Architecture::Mlp) {
        const ad::Var w0 = next(), b0 = next(), w1 = next(), b1 = next();
        const ad::Var h = ad::relu(t, ad::add_row(t, ad::matmul(t, raw, w0), b0));
        return ad::add_row(t, ad::matmul(t, h, w1), b1);
    }
    if (cfg_.architecture == Architecture::Gcn) {
        const ad::Var w0 = next(), b0 = next(), w1 = next(), b1 = next();
        const ad::Var ones = t.constant(Dense::Ones(static_cast<Eigen::Index>(ctx.gcn->nnz()), 1));
        const ad::Var h = ad::relu(
            t, ad::add_row(t, ad::block_apply(t, ctx.gcn, ones, ad::matmul(t, raw, w0)), b0));
        return ad::add_row(t, ad::block_apply(t, ctx.gcn, ones, ad::matmul(t, h, w1)), b1);
    }

    const SheafLayout& layout = ctx.layout;
    const int d = cfg_.d;
    const ad::Var ew = next(), eb = next();
    ad::Var x = ad::relu(t, ad::add_row(t, ad::matmul(t, raw, ew), eb));
    x = ad::reshape(t, x, static_cast<Eigen::Index>(layout.n) * d, cfg_.hidden);

    ad::Var shared_maps;
    if (cfg_.shared_sheaf) shared_maps = ad::learn_maps(t, x, layout, next(), cfg_.maps);

    const auto widths = mlp_widths(cfg_.nonlinearity(), d);
    for (int layer = 0; layer < cfg_.layers; ++layer) {
        LayerVars v;
        if (!cfg_.shared_sheaf) v.learner = next();
        v.w1 = next();
        if (cfg_.use_w2) v.w2 = next();
        v.eps = next();
        if (cfg_.normalization == Normalization::Alpha) v.alpha = next();
        if (cfg_.variant == Variant::BoundedConfidence) {
            if (cfg_.thresholds == ThresholdMode::Single) {
                v.theta = next();
            } else {
                v.thr_w = next();
                v.thr_b = next();
            }
        }
        if (cfg_.variant == Variant::MlpPhi) {
            for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
                v.phi.weights.push_back(next());
                v.phi.biases.push_back(next());
            }
        }
        const ad::Var maps = cfg_.shared_sheaf ? shared_maps : ad::learn_maps(t, x, layout, v.learner, cfg_.maps);
        x = diffusion_layer(t, x, layout, v, maps, cfg_);
    }

    const ad::Var flat = ad::reshape(t, x, layout.n, static_cast<Eigen::Index>(d) * cfg_.hidden);
    const ad::Var hw = next(), hb = next();
    return ad::add_row(t, ad::matmul(t, flat, hw), hb);
}

Dense Model::predict_logits(const Dense& features, const ModelContext& ctx) const {
    ad::Tape t;
    auto fw = forward(t, features, ctx, false);
    return t.value(fw.logits);
}

double cross_entropy(const Dense& logits, std::span<const int> labels, std::span<const std::uint8_t> mask) {
    ad::Tape t;
    return t.value(ad::softmax_cross_entropy(t, t.constant(logits), labels, mask))(0, 0);
}

std::vector<int> argmax_rows(const Dense& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index best = 0;
        logits.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

}  // namespace nlsd
