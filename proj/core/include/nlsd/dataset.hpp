#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nlsd/dense.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/rng.hpp"

namespace nlsd {

/// Boolean node masks of one fold (1 = member).
struct Fold {
    std::vector<std::uint8_t> train;
    std::vector<std::uint8_t> val;
    std::vector<std::uint8_t> test;
};

struct Dataset {
    std::string name;
    Dense features;  // n x p
    std::vector<int> labels;
    int num_classes = 0;
    Graph graph;              // carries the labels
    std::vector<Fold> splits;  // may be empty

    int num_nodes() const { return static_cast<int>(labels.size()); }
    /// Throws ConfigError on inconsistent sizes, overlapping masks or a class
    /// missing from some training mask.
    void validate() const;
};

Dataset make_dataset(std::string name, Dense features, std::vector<int> labels, const EdgeList& edges,
                     int num_classes = 0);

/// Stratified 48/32/20 folds. Per class the three counts start at the floors
/// of 0.48n, 0.32n and 0.20n; the leftover nodes go one each to train, val,
/// test in that order. Fold k shuffles with rng.split(k). Throws TooFewNodes
/// when a class has fewer than 3 nodes.
std::vector<Fold> make_splits(std::span<const int> labels, int num_classes, const Rng& rng, int folds = 10);

/// Reads a JSON document (file) or a CSV directory (features.csv, labels.csv,
/// edges.csv and optional splits.csv). Throws ParseError naming the field.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset_json(const std::string& text, const std::string& name = "dataset");

/// Writes JSON when `path` ends in .json, otherwise a CSV directory. Throws IoError.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string dataset_to_json(const Dataset& ds);

}  // namespace nlsd
