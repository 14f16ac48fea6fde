#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nlsd/dense.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/rng.hpp"

namespace nlsd {

enum class BaseKind { Knn, ErdosRenyi };
enum class MutationMode { InterOnly, IntraOnly, InterPlusIntra };
enum class Budget {
    Constant,    // every added random edge replaces a surviving base edge
    Increasing,  // base edges are kept
};

/// Three Gaussian communities in the plane plus an edge-mutation schedule.
struct SyntheticSpec {
    int nodes_per_class = 500;
    std::vector<std::array<double, 2>> means{{0.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}};
    double variance = 3.0;  // isotropic covariance variance * I
    BaseKind base = BaseKind::Knn;
    int k = 5;
    double p = 0.005;
    MutationMode mode = MutationMode::InterOnly;
    Budget budget = Budget::Constant;
    std::vector<double> percentages{0, 10, 20, 40, 80, 100};
    std::uint64_t seed = 0;

    void use_close_means() { means = {{0.0, 0.0}, {0.1, 0.1}, {0.0, 0.1}}; }
    int num_classes() const { return static_cast<int>(means.size()); }
    int num_nodes() const { return nodes_per_class * num_classes(); }
    /// Throws ConfigError (bad sizes, unsorted or negative percentages) or
    /// BudgetExhausted (Constant budget above 100%).
    void validate() const;
    /// Short tag such as "knn-inter-constant", used to name sequence members.
    std::string tag() const;
};

struct LabelledFeatures {
    Dense x;  // n x 2, classes stored contiguously
    std::vector<int> labels;
};

LabelledFeatures gen_features(const SyntheticSpec& spec, Rng& rng);

/// k-NN or Erdos-Renyi edges inside each class; no inter-class edges.
Graph gen_base_edges(const SyntheticSpec& spec, const Dense& x, const std::vector<int>& labels, Rng& rng);

struct MutatedGraph {
    double percent = 0.0;
    Graph graph;
    std::size_t added = 0;
    std::size_t removed = 0;
};

/// One member of the sequence: round(percent/100 * |E_base|) random edges are
/// added (and, under a Constant budget, as many base edges removed first).
MutatedGraph mutate(const SyntheticSpec& spec, const Graph& base, double percent, Rng& rng);

/// Every percentage is generated independently from `base`, member i from rng.split(i).
std::vector<MutatedGraph> gen_sequence(const SyntheticSpec& spec, const Graph& base, const Rng& rng);

struct SyntheticSequence {
    SyntheticSpec spec;
    Dense features;
    std::vector<int> labels;
    Graph base;
    std::vector<MutatedGraph> members;
};

/// Features from Rng(seed).split(0), base edges from split(1), the sequence from split(2).
SyntheticSequence generate(const SyntheticSpec& spec);

}  // namespace nlsd
