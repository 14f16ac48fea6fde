#include "nlsd/graph.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "nlsd/errors.hpp"

namespace nlsd {

std::span<const int> Graph::labels() const {
    if (!labels_) throw MissingLabels("graph has no labels");
    return *labels_;
}

int Graph::num_classes() const {
    const auto l = labels();
    if (l.empty()) return 0;
    return *std::max_element(l.begin(), l.end()) + 1;
}

std::vector<int> Graph::degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(n_), 0);
    for (const auto& e : edges_) {
        ++deg[static_cast<std::size_t>(e.lo)];
        ++deg[static_cast<std::size_t>(e.hi)];
    }
    return deg;
}

EdgeList Graph::edge_pairs() const {
    EdgeList out;
    out.reserve(edges_.size());
    for (const auto& e : edges_) out.emplace_back(e.lo, e.hi);
    return out;
}

Graph Graph::with_orientation(const std::vector<bool>& reversed) const {
    if (reversed.size() != edges_.size()) {
        throw ShapeError("orientation vector has " + std::to_string(reversed.size()) +
                         " entries for " + std::to_string(edges_.size()) + " edges");
    }
    Graph g = *this;
    for (std::size_t e = 0; e < g.edges_.size(); ++e) g.edges_[e].reversed = reversed[e];
    return g;
}

Graph Graph::with_labels(std::vector<int> labels) const {
    if (static_cast<int>(labels.size()) != n_) throw ShapeError("label count does not match node count");
    Graph g = *this;
    g.labels_ = std::move(labels);
    return g;
}

Graph build_graph(int n, std::span<const std::pair<int, int>> edge_list,
                  std::optional<std::vector<int>> labels) {
    if (n < 0) throw InvalidEdge("negative node count");
    Graph g;
    g.n_ = n;
    std::vector<std::pair<int, int>> canon;
    canon.reserve(edge_list.size());
    for (const auto& [a, b] : edge_list) {
        if (a < 0 || b < 0 || a >= n || b >= n) {
            throw InvalidEdge("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                              ") has an endpoint outside [0, " + std::to_string(n) + ")");
        }
        if (a == b) continue;
        canon.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(canon.begin(), canon.end());
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
    g.edges_.reserve(canon.size());
    for (const auto& [lo, hi] : canon) g.edges_.push_back(Edge{lo, hi, false});

    if (labels) {
        if (static_cast<int>(labels->size()) != n) throw ShapeError("label count does not match node count");
        for (int l : *labels) {
            if (l < 0) throw ShapeError("labels must be non-negative class ids");
        }
        g.labels_ = std::move(labels);
    }
    return g;
}

double homophily(const Graph& g) {
    const auto labels = g.labels();
    if (g.num_edges() == 0) throw EmptyGraph("homophily is undefined on a graph without edges");
    std::size_t same = 0;
    for (const auto& e : g.edges()) {
        if (labels[static_cast<std::size_t>(e.lo)] == labels[static_cast<std::size_t>(e.hi)]) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

int connected_components(const Graph& g, std::vector<int>* component) {
    const auto n = static_cast<std::size_t>(g.num_nodes());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            auto& p = parent[static_cast<std::size_t>(x)];
            p = parent[static_cast<std::size_t>(p)];
            x = p;
        }
        return x;
    };
    for (const auto& e : g.edges()) {
        const int a = find(e.lo);
        const int b = find(e.hi);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
    std::vector<int> id(n, -1);
    int count = 0;
    std::vector<int> root_id(n, -1);
    for (std::size_t v = 0; v < n; ++v) {
        const auto r = static_cast<std::size_t>(find(static_cast<int>(v)));
        if (root_id[r] < 0) root_id[r] = count++;
        id[v] = root_id[r];
    }
    if (component) *component = std::move(id);
    return count;
}

EdgeList knn_edges(const Dense& features, int k, std::span<const int> restrict_to) {
    std::vector<int> all;
    if (restrict_to.empty()) {
        all.resize(static_cast<std::size_t>(features.rows()));
        std::iota(all.begin(), all.end(), 0);
        restrict_to = all;
    }
    const auto m = static_cast<int>(restrict_to.size());
    if (k < 0 || (k > 0 && k >= m)) {
        throw InvalidK("k = " + std::to_string(k) + " requires more than k nodes, subset has " +
                       std::to_string(m));
    }
    EdgeList out;
    if (k == 0) return out;

    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const int v = restrict_to[static_cast<std::size_t>(i)];
        if (v < 0 || v >= features.rows()) throw InvalidEdge("k-NN subset node out of range");
        std::size_t c = 0;
        for (int j = 0; j < m; ++j) {
            const int u = restrict_to[static_cast<std::size_t>(j)];
            if (u == v) continue;
            dist[c++] = {(features.row(v) - features.row(u)).squaredNorm(), u};
        }
        // pair ordering compares distance first, then node index
        std::partial_sort(dist.begin(), dist.begin() + k, dist.begin() + static_cast<std::ptrdiff_t>(c));
        for (int t = 0; t < k; ++t) {
            const int u = dist[static_cast<std::size_t>(t)].second;
            out.emplace_back(std::min(u, v), std::max(u, v));
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

EdgeList erdos_renyi_edges(std::span<const int> nodes, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidProbability("edge probability must lie in [0, 1]");
    EdgeList out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t j = i + 1; j < nodes.size(); ++j) {
            if (rng.uniform() < p) {
                out.emplace_back(std::min(nodes[i], nodes[j]), std::max(nodes[i], nodes[j]));
            }
        }
    }
    return out;
}

}  // namespace nlsd
