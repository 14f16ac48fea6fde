#include "nlsd/synth.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include "nlsd/errors.hpp"

namespace nlsd {

namespace {

std::uint64_t pair_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Number of unordered node pairs with the requested class relation.
std::size_t pair_capacity(const std::vector<int>& labels, int classes, bool inter) {
    std::vector<std::size_t> count(static_cast<std::size_t>(classes), 0);
    for (int l : labels) ++count[static_cast<std::size_t>(l)];
    const std::size_t n = labels.size();
    std::size_t same = 0;
    for (std::size_t c : count) same += c * (c > 0 ? c - 1 : 0) / 2;
    return inter ? n * (n - 1) / 2 - same : same;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (nodes_per_class < 1) throw ConfigError("nodes_per_class must be positive");
    if (means.size() < 2) throw ConfigError("need at least two classes");
    if (!(variance > 0.0)) throw ConfigError("variance must be positive");
    if (base == BaseKind::Knn && (k < 0 || k >= nodes_per_class)) throw InvalidK("k must lie in [0, nodes_per_class)");
    if (base == BaseKind::ErdosRenyi && !(p >= 0.0 && p <= 1.0)) throw InvalidProbability("p must lie in [0, 1]");
    for (std::size_t i = 0; i < percentages.size(); ++i) {
        const double q = percentages[i];
        if (!(q >= 0.0) || !std::isfinite(q)) throw ConfigError("percentages must be finite and non-negative");
        if (i > 0 && q < percentages[i - 1]) throw ConfigError("percentages must be nondecreasing");
        if (budget == Budget::Constant && q > 100.0) {
            throw BudgetExhausted("constant budget cannot replace more than 100% of the base edges");
        }
    }
}

std::string SyntheticSpec::tag() const {
    std::string s = base == BaseKind::Knn ? "knn" : "er";
    s += mode == MutationMode::InterOnly ? "-inter" : (mode == MutationMode::IntraOnly ? "-intra" : "-both");
    s += budget == Budget::Constant ? "-constant" : "-increasing";
    return s;
}

LabelledFeatures gen_features(const SyntheticSpec& spec, Rng& rng) {
    const int n = spec.num_nodes();
    LabelledFeatures out;
    out.x.resize(n, 2);
    out.labels.resize(static_cast<std::size_t>(n));
    const double sd = std::sqrt(spec.variance);
    int v = 0;
    for (int c = 0; c < spec.num_classes(); ++c) {
        const auto& mu = spec.means[static_cast<std::size_t>(c)];
        for (int i = 0; i < spec.nodes_per_class; ++i, ++v) {
            out.x(v, 0) = rng.normal(mu[0], sd);
            out.x(v, 1) = rng.normal(mu[1], sd);
            out.labels[static_cast<std::size_t>(v)] = c;
        }
    }
    return out;
}

Graph gen_base_edges(const SyntheticSpec& spec, const Dense& x, const std::vector<int>& labels, Rng& rng) {
    const int n = static_cast<int>(labels.size());
    if (x.rows() != n) throw ShapeError("gen_base_edges: features and labels disagree");
    const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    EdgeList edges;
    for (int c = 0; c < classes; ++c) {
        std::vector<int> members;
        for (int v = 0; v < n; ++v)
            if (labels[static_cast<std::size_t>(v)] == c) members.push_back(v);
        const EdgeList part =
            spec.base == BaseKind::Knn ? knn_edges(x, spec.k, members) : erdos_renyi_edges(members, spec.p, rng);
        edges.insert(edges.end(), part.begin(), part.end());
    }
    return build_graph(n, edges, labels);
}

MutatedGraph mutate(const SyntheticSpec& spec, const Graph& base, double percent, Rng& rng) {
    if (!(percent >= 0.0)) throw ConfigError("percentage must be non-negative");
    if (spec.budget == Budget::Constant && percent > 100.0) {
        throw BudgetExhausted("constant budget cannot replace more than 100% of the base edges");
    }
    const std::vector<int> labels(base.labels().begin(), base.labels().end());
    const int n = base.num_nodes();
    const std::size_t m = base.num_edges();
    const auto added = static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(m)));

    MutatedGraph out;
    out.percent = percent;

    // surviving base edges
    std::vector<std::size_t> keep(m);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    if (spec.budget == Budget::Constant) {
        // partial Fisher-Yates: the first `added` slots are the removed edges
        for (std::size_t i = 0; i < added; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
            std::swap(keep[i], keep[j]);
        }
        keep.erase(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(added));
        std::sort(keep.begin(), keep.end());
        out.removed = added;
    }

    EdgeList edges;
    std::unordered_set<std::uint64_t> present;
    edges.reserve(keep.size() + added);
    for (std::size_t e : keep) {
        const auto& ed = base.edge(e);
        edges.emplace_back(ed.lo, ed.hi);
        present.insert(pair_key(ed.lo, ed.hi));
    }

    std::size_t inter = 0, intra = 0;
    switch (spec.mode) {
        case MutationMode::InterOnly: inter = added; break;
        case MutationMode::IntraOnly: intra = added; break;
        case MutationMode::InterPlusIntra:
            inter = added / 2;
            intra = added - inter;
            break;
    }

    const int classes = base.num_classes();
    auto draw = [&](std::size_t count, bool want_inter) {
        std::size_t used = 0;
        for (auto& [a, b] : edges) used += (labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(b)]) == want_inter;
        if (used + count > pair_capacity(labels, classes, want_inter)) {
            throw BudgetExhausted("not enough free node pairs for the requested random edges");
        }
        for (std::size_t i = 0; i < count;) {
            const int v = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            if (v == u) continue;
            if ((labels[static_cast<std::size_t>(v)] != labels[static_cast<std::size_t>(u)]) != want_inter) continue;
            if (!present.insert(pair_key(v, u)).second) continue;
            edges.emplace_back(std::min(v, u), std::max(v, u));
            ++i;
        }
    };
    draw(inter, true);
    draw(intra, false);
    out.added = added;
    out.graph = build_graph(n, edges, labels);
    return out;
}

std::vector<MutatedGraph> gen_sequence(const SyntheticSpec& spec, const Graph& base, const Rng& rng) {
    spec.validate();
    std::vector<MutatedGraph> out;
    out.reserve(spec.percentages.size());
    for (std::size_t i = 0; i < spec.percentages.size(); ++i) {
        Rng member = rng.split(i);
        out.push_back(mutate(spec, base, spec.percentages[i], member));
    }
    return out;
}

SyntheticSequence generate(const SyntheticSpec& spec) {
    spec.validate();
    const Rng root(spec.seed);
    Rng feat = root.split(0), edges = root.split(1);
    SyntheticSequence s;
    s.spec = spec;
    auto f = gen_features(spec, feat);
    s.features = std::move(f.x);
    s.labels = std::move(f.labels);
    s.base = gen_base_edges(spec, s.features, s.labels, edges);
    s.members = gen_sequence(spec, s.base, root.split(2));
    return s;
}

}  // namespace nlsd
