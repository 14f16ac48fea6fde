#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlsd/dataset.hpp"
#include "nlsd/model.hpp"

namespace nlsd {

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 5e-4;  // L2 penalty added to the gradient
    int max_epochs = 1000;
    int patience = 100;
    std::uint64_t seed = 0;
    ModelConfig model;

    void validate() const;
};

/// Adam with coupled L2 weight decay. State is public so checkpoints can carry it.
struct Adam {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long step = 0;
    std::vector<Dense> m;
    std::vector<Dense> v;

    void update(std::vector<NamedParam>& params, const std::vector<Dense>& grads);
};

struct EpochStats {
    double loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

struct RunResult {
    std::string dataset;
    std::string variant;
    int fold = 0;
    std::uint64_t seed = 0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    int epoch = 0;  // epoch of the best validation accuracy

    int epochs_run = 0;
    double wall_seconds = 0.0;
    std::vector<int> predictions;  // argmax at `epoch`, every node
    std::vector<EpochStats> history;
};

double masked_accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const std::uint8_t> mask);

/// Full-batch training on one fold. Accuracies of epoch k are measured on the
/// forward that precedes the k-th update; the reported split accuracies and
/// predictions are those of the first epoch reaching the highest validation
/// accuracy. Stops after `patience` epochs without a strict improvement.
/// Parameters are initialised from Rng(seed).split(0). Throws Diverged on a
/// non-finite loss. When `trained` is given it receives the best-epoch model.
RunResult train(const Dataset& ds, const Fold& fold, const TrainConfig& cfg, Model* trained = nullptr);
/// Uses ds.splits[fold]; throws ConfigError when it does not exist.
RunResult train(const Dataset& ds, int fold, const TrainConfig& cfg, Model* trained = nullptr);

}  // namespace nlsd
