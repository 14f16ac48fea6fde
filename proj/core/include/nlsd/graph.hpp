#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nlsd/dense.hpp"
#include "nlsd/rng.hpp"

namespace nlsd {

using EdgeList = std::vector<std::pair<int, int>>;

/// Undirected edge stored canonically as lo < hi. `reversed` fixes the
/// orientation used by the coboundary: tail -> head.
struct Edge {
    int lo = 0;
    int hi = 0;
    bool reversed = false;

    int tail() const noexcept { return reversed ? hi : lo; }
    int head() const noexcept { return reversed ? lo : hi; }
};

/// Immutable simple graph with optional class labels.
class Graph {
public:
    Graph() = default;

    int num_nodes() const noexcept { return n_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    std::span<const Edge> edges() const noexcept { return edges_; }
    const Edge& edge(std::size_t e) const { return edges_.at(e); }

    bool has_labels() const noexcept { return labels_.has_value(); }
    std::span<const int> labels() const;
    int num_classes() const;

    std::vector<int> degrees() const;
    EdgeList edge_pairs() const;

    /// Same edges and labels, with per-edge orientation replaced.
    Graph with_orientation(const std::vector<bool>& reversed) const;
    Graph with_labels(std::vector<int> labels) const;

    friend Graph build_graph(int n, std::span<const std::pair<int, int>> edge_list,
                             std::optional<std::vector<int>> labels);

private:
    int n_ = 0;
    std::vector<Edge> edges_;
    std::optional<std::vector<int>> labels_;
};

/// Drops self-loops and duplicate undirected pairs; edges are stored sorted by
/// (lo, hi) with the canonical lo -> hi orientation. Throws InvalidEdge when an
/// endpoint is outside [0, n).
Graph build_graph(int n, std::span<const std::pair<int, int>> edge_list,
                  std::optional<std::vector<int>> labels = std::nullopt);

/// Fraction of edges whose endpoints share a label.
double homophily(const Graph& g);

/// Number of connected components; optionally writes the component id of each node.
int connected_components(const Graph& g, std::vector<int>* component = nullptr);

/// Union of directed k-nearest-neighbour relations (Euclidean distance on
/// feature rows), computed separately inside `restrict_to` when given.
/// Distance ties go to the lower node index.
EdgeList knn_edges(const Dense& features, int k, std::span<const int> restrict_to = {});

/// Each unordered pair of `nodes` (visited in (i, j), i < j order of the span)
/// is kept with probability p, one uniform draw per pair.
EdgeList erdos_renyi_edges(std::span<const int> nodes, double p, Rng& rng);

}  // namespace nlsd
