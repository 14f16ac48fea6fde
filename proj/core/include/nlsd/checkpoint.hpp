#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "nlsd/model.hpp"
#include "nlsd/training.hpp"

namespace nlsd {

/// Flat JSON form of a training configuration:
///   {"variant": "MLP-O(d)-NLSD", "d": 3, "hidden": 8, "layers": 2, "activation": "relu",
///    "shared_sheaf": false, "use_w2": true, "use_sigma": true, "mlp_phi_layers": 2,
///    "mlp_phi_hidden": 0, "threshold_init": 1.0, "input_dim": 0, "num_classes": 0,
///    "lr": 0.01, "weight_decay": 5e-4, "max_epochs": 1000, "patience": 100, "seed": 0}
/// Every key is optional when reading; unknown keys throw ParseError.
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text, TrainConfig defaults = {});

/// Checkpoint document:
///   {"format": "nlsd-checkpoint", "version": 1, "config": {...flat config...},
///    "params": [{"name", "rows", "cols", "data": [row-major values]}, ...],
///    "optimizer": {"step", "lr", "beta1", "beta2", "eps", "weight_decay", "m": [...], "v": [...]}}
/// Doubles are written with 17 significant digits, so a reload is bit-exact.
/// The optimizer block is optional.
struct Checkpoint {
    TrainConfig config;
    Model model;
    std::optional<Adam> optimizer;
};

std::string checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nlsd
