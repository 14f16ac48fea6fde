#include "nlsd/training.hpp"

#include <chrono>
#include <cmath>

#include "nlsd/errors.hpp"

namespace nlsd {

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be finite and non-negative");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (patience < 1 || patience > max_epochs) throw ConfigError("patience must lie in [1, max_epochs]");
}

void Adam::update(std::vector<NamedParam>& params, const std::vector<Dense>& grads) {
    if (grads.size() != params.size()) throw ShapeError("Adam: one gradient per parameter expected");
    if (m.empty()) {
        for (const auto& p : params) {
            m.push_back(Dense::Zero(p.value.rows(), p.value.cols()));
            v.push_back(Dense::Zero(p.value.rows(), p.value.cols()));
        }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Dense& w = params[i].value;
        const Dense g = grads[i] + weight_decay * w;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
        w.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
}

double masked_accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const std::uint8_t> mask) {
    std::size_t total = 0, hit = 0;
    for (std::size_t v = 0; v < labels.size(); ++v) {
        if (!mask[v]) continue;
        ++total;
        hit += predictions[v] == labels[v];
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

RunResult train(const Dataset& ds, const Fold& fold, const TrainConfig& cfg, Model* trained) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    ModelConfig mcfg = cfg.model;
    mcfg.input_dim = static_cast<int>(ds.features.cols());
    mcfg.num_classes = ds.num_classes;

    const Rng root(cfg.seed);
    Rng init = root.split(0);
    Model model(mcfg, init);
    const ModelContext ctx = ModelContext::build(ds.graph, mcfg);

    Adam opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    RunResult res;
    res.dataset = ds.name;
    res.variant = mcfg.name();
    res.seed = cfg.seed;
    double best_val = -1.0;
    std::vector<NamedParam> best_params;

    std::vector<Dense> grads(model.params().size());
    int epoch = 0;
    for (; epoch < cfg.max_epochs; ++epoch) {
        ad::Tape t;
        auto fw = model.forward(t, ds.features, ctx);
        const ad::Var loss = ad::softmax_cross_entropy(t, fw.logits, ds.labels, fold.train);
        if (!std::isfinite(t.value(loss)(0, 0))) throw Diverged(epoch);

        const std::vector<int> pred = argmax_rows(t.value(fw.logits));
        const EpochStats stats{t.value(loss)(0, 0), masked_accuracy(pred, ds.labels, fold.train),
                               masked_accuracy(pred, ds.labels, fold.val), masked_accuracy(pred, ds.labels, fold.test)};
        res.history.push_back(stats);
        if (stats.val_acc > best_val) {
            best_val = stats.val_acc;
            res.epoch = epoch;
            res.val_acc = stats.val_acc;
            res.train_acc = stats.train_acc;
            res.test_acc = stats.test_acc;
            res.predictions = pred;
            if (trained) best_params = model.params();
        } else if (epoch - res.epoch >= cfg.patience) {
            break;
        }

        t.backward(loss);
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = t.grad(fw.leaves[i]);
        opt.update(model.params(), grads);
    }
    res.epochs_run = std::min(epoch + 1, cfg.max_epochs);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (trained) *trained = Model(mcfg, std::move(best_params));
    return res;
}

RunResult train(const Dataset& ds, int fold, const TrainConfig& cfg, Model* trained) {
    if (fold < 0 || fold >= static_cast<int>(ds.splits.size())) {
        throw ConfigError("dataset has no fold " + std::to_string(fold));
    }
    RunResult r = train(ds, ds.splits[static_cast<std::size_t>(fold)], cfg, trained);
    r.fold = fold;
    return r;
}

}  // namespace nlsd
