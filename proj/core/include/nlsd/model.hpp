#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlsd/dense.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/nonlin.hpp"
#include "nlsd/rng.hpp"
#include "nlsd/sheaf.hpp"
#include "nlsd/tape.hpp"

namespace nlsd {

enum class Architecture {
    SheafDiffusion,
    Mlp,  // baseline: raw features -> hidden relu -> classes
    Gcn,  // baseline: two symmetric-normalised graph convolutions
};

enum class Variant {
    Linear,             // NSD: Phi = identity
    BoundedConfidence,  // BC-s / BC-m
    MlpPhi,             // MLP-NLSD
};

enum class Normalization {
    DegreeInvSqrt,  // delta D^{-1/2} on both sides of Phi
    Alpha,          // raw delta, second term scaled by (1 + alpha)
};

enum class Activation { Relu, Elu, Identity };

struct ModelConfig {
    Architecture architecture = Architecture::SheafDiffusion;
    Variant variant = Variant::Linear;
    MapKind maps = MapKind::Orthogonal;
    Normalization normalization = Normalization::DegreeInvSqrt;
    PsiShape psi = PsiShape::Psi2;
    ThresholdMode thresholds = ThresholdMode::Single;
    int mlp_phi_layers = 2;
    int mlp_phi_hidden = 0;  // 0 -> d

    int d = 3;
    int hidden = 8;  // channels f per stalk dimension
    int layers = 2;
    Activation activation = Activation::Relu;

    // ablation switches
    bool shared_sheaf = false;  // one sheaf (learned from X0) reused by every layer
    bool use_w2 = true;
    bool use_sigma = true;

    int input_dim = 0;
    int num_classes = 0;
    double threshold_init = 1.0;

    NonlinearitySpec nonlinearity() const;
    /// Variant label such as "MLP-O(d)-NLSD", "BC-s-Diag-aNLSD", "NSD-O(d)", "MLP", "GCN".
    std::string name() const;
    /// Inverse of name(); unknown labels throw ConfigError. Dimensions are left untouched.
    static ModelConfig from_name(const std::string& label);
    void validate() const;
};

struct NamedParam {
    std::string name;
    Dense value;
};

/// Graph-dependent constants shared by all forwards of one model on one graph.
struct ModelContext {
    SheafLayout layout;
    std::shared_ptr<const BlockPattern> gcn;  // D^-1/2 (A + I) D^-1/2, only for the GCN baseline

    static ModelContext build(const Graph& g, const ModelConfig& cfg);
};

/// Tape handles for one diffusion layer.
struct LayerVars {
    ad::Var learner;  // 2d x learner_outputs (invalid when a shared or fixed sheaf is used)
    ad::Var w1;       // d x d
    ad::Var w2;       // f x f (invalid when use_w2 is off)
    ad::Var eps;      // 1 x d free parameters, epsilon = tanh(.)
    ad::Var alpha;    // 1 x d free parameters (alpha normalisation only)
    ad::Var theta;    // 1 x 1 single threshold (softplus)
    ad::Var thr_w;    // d x 1 per-edge threshold perceptron
    ad::Var thr_b;    // 1 x 1
    ad::MlpVars phi;
};

/// Restriction maps of one layer as used by the coboundary (already D^{-1/2}
/// normalised when the config asks for it).
ad::Var layer_operator_maps(ad::Tape& t, ad::Var maps, const SheafLayout& layout, const ModelConfig& cfg);

/// X_{t+1} = (1 + eps) X_t - [(1 + alpha)] sigma(delta~^T Phi(delta~ (I (x) W1) X_t W2)).
/// `maps` are raw restriction maps (learned by the caller or fixed).
ad::Var diffusion_layer(ad::Tape& t, ad::Var x, const SheafLayout& layout, const LayerVars& vars, ad::Var maps,
                        const ModelConfig& cfg);

class Model {
public:
    Model() = default;
    /// Initialises parameters from `rng` (Glorot-uniform linear maps, identity W1,
    /// orthogonal W2, zero epsilon/alpha, thresholds at threshold_init).
    Model(ModelConfig cfg, Rng& rng);
    Model(ModelConfig cfg, std::vector<NamedParam> params);

    const ModelConfig& config() const noexcept { return cfg_; }
    std::vector<NamedParam>& params() noexcept { return params_; }
    const std::vector<NamedParam>& params() const noexcept { return params_; }
    const Dense& param(const std::string& name) const;
    Dense& param(const std::string& name);
    std::size_t num_scalars() const;

    struct Forward {
        ad::Var logits;
        std::vector<ad::Var> leaves;  // one per parameter, same order as params()
    };

    /// Records the full network on `t`: encoder -> T layers -> linear head.
    Forward forward(ad::Tape& t, const Dense& features, const ModelContext& ctx, bool trainable = true) const;
    /// Same network with caller-owned leaves (one per parameter, storage order);
    /// the stored parameter values are not read.
    ad::Var forward(ad::Tape& t, std::span<const ad::Var> leaves, const Dense& features, const ModelContext& ctx) const;

    /// Inference convenience: logits as a dense n x C matrix.
    Dense predict_logits(const Dense& features, const ModelContext& ctx) const;

private:
    std::size_t index_of(const std::string& name) const;
    void add(std::string name, Dense value) { params_.push_back({std::move(name), std::move(value)}); }

    ModelConfig cfg_;
    std::vector<NamedParam> params_;
};

/// Names of all parameters `cfg` requires, in storage order.
std::vector<std::string> parameter_names(const ModelConfig& cfg);

/// Mean softmax cross-entropy over the masked rows. Throws EmptyMask.
double cross_entropy(const Dense& logits, std::span<const int> labels, std::span<const std::uint8_t> mask);

/// Row-wise argmax.
std::vector<int> argmax_rows(const Dense& logits);

}  // namespace nlsd
