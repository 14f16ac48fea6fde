#pragma once

// Hand-rolled random instance generators for property tests. They draw from
// std::mt19937_64 so test inputs do not depend on the library's own RNG.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "nlsd/dense.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/sheaf.hpp"

namespace testgen {

using Engine = std::mt19937_64;

inline nlsd::Dense random_dense(Engine& eng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    nlsd::Dense m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(eng);
    return m;
}

inline int uniform_int(Engine& eng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }

/// Random simple graph: each pair kept with probability p.
inline nlsd::EdgeList random_edges(Engine& eng, int n, double p) {
    std::bernoulli_distribution keep(p);
    nlsd::EdgeList out;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (keep(eng)) out.emplace_back(i, j);
    return out;
}

/// Random graph with at least one edge.
inline nlsd::Graph random_graph(Engine& eng, int n, double p) {
    auto e = random_edges(eng, n, p);
    if (e.empty() && n >= 2) e.emplace_back(0, n - 1);
    return nlsd::build_graph(n, e);
}

/// Random labelled tree (each node attaches to an earlier one).
inline nlsd::Graph random_tree(Engine& eng, int n) {
    nlsd::EdgeList e;
    for (int v = 1; v < n; ++v) e.emplace_back(uniform_int(eng, 0, v - 1), v);
    return nlsd::build_graph(n, e);
}

/// Random tree plus each remaining pair with probability p (connected).
inline nlsd::Graph random_connected_graph(Engine& eng, int n, double p) {
    nlsd::EdgeList e;
    for (int v = 1; v < n; ++v) e.emplace_back(uniform_int(eng, 0, v - 1), v);
    for (auto& extra : random_edges(eng, n, p)) e.push_back(extra);
    return nlsd::build_graph(n, e);
}

/// Random orthogonal d x d matrix (Gram-Schmidt on a Gaussian draw).
inline Eigen::MatrixXd random_orthogonal(Engine& eng, int d) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = g(eng);
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < j; ++k) m.col(j) -= m.col(k).dot(m.col(j)) * m.col(k);
        m.col(j).normalize();
    }
    return m;
}

/// Sheaf with independent random maps of the given kind.
inline nlsd::Sheaf random_sheaf(Engine& eng, const nlsd::Graph& g, int d, nlsd::MapKind kind) {
    nlsd::Sheaf s;
    s.d = d;
    s.kind = kind;
    const auto K = static_cast<Eigen::Index>(2 * g.num_edges());
    s.maps = nlsd::Dense::Zero(K * d, d);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index k = 0; k < K; ++k) {
        if (kind == nlsd::MapKind::Diagonal) {
            for (int i = 0; i < d; ++i) s.maps(k * d + i, i) = u(eng);
        } else {
            s.maps.middleRows(k * d, d) = random_orthogonal(eng, d);
        }
    }
    return s;
}

/// Orthogonal sheaf with a global section: F_{v<|e} = R_e Q_v^T, so x_v = Q_v c
/// agrees across every edge for any c.
inline nlsd::Sheaf consistent_orthogonal_sheaf(Engine& eng, const nlsd::Graph& g, int d,
                                               std::vector<Eigen::MatrixXd>* frames = nullptr) {
    std::vector<Eigen::MatrixXd> q;
    for (int v = 0; v < g.num_nodes(); ++v) q.push_back(random_orthogonal(eng, d));
    nlsd::Sheaf s;
    s.d = d;
    s.kind = nlsd::MapKind::Orthogonal;
    s.maps = nlsd::Dense::Zero(static_cast<Eigen::Index>(2 * g.num_edges()) * d, d);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const Eigen::MatrixXd r = random_orthogonal(eng, d);
        const auto& ed = g.edge(e);
        s.maps.middleRows(static_cast<Eigen::Index>(2 * e) * d, d) = r * q[static_cast<std::size_t>(ed.lo)].transpose();
        s.maps.middleRows(static_cast<Eigen::Index>(2 * e + 1) * d, d) =
            r * q[static_cast<std::size_t>(ed.hi)].transpose();
    }
    if (frames) *frames = std::move(q);
    return s;
}

}  // namespace testgen
