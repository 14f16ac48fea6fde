#include <benchmark/benchmark.h>

#include "nlsd/model.hpp"
#include "nlsd/nonlin.hpp"
#include "nlsd/sheaf.hpp"
#include "nlsd/synth.hpp"

using namespace nlsd;

namespace {

const SyntheticSequence& synthetic() {
    static const SyntheticSequence seq = [] {
        SyntheticSpec spec;
        spec.percentages = {40};
        return generate(spec);
    }();
    return seq;
}

Sheaf learned_sheaf(const Graph& g, int d, MapKind kind) {
    Rng rng(1);
    Dense x(g.num_nodes() * d, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Dense w(2 * d, learner_outputs(d, kind));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
    return learn_restriction_maps(x, g, w, kind, d);
}

void BM_AssembleLaplacian(benchmark::State& state) {
    const Graph& g = synthetic().members[0].graph;
    const int d = static_cast<int>(state.range(0));
    const Sheaf s = learned_sheaf(g, d, MapKind::Orthogonal);
    for (auto _ : state) {
        const BlockSparse L = sheaf_laplacian(assemble_coboundary(s, g));
        benchmark::DoNotOptimize(L.blocks().data());
    }
}
BENCHMARK(BM_AssembleLaplacian)->Arg(2)->Arg(3)->Arg(4);

void BM_CoboundaryApply(benchmark::State& state) {
    const Graph& g = synthetic().members[0].graph;
    const int d = static_cast<int>(state.range(0));
    const BlockSparse delta = assemble_coboundary(learned_sheaf(g, d, MapKind::Orthogonal), g);
    Dense x = Dense::Ones(g.num_nodes() * d, 8);
    for (auto _ : state) {
        Dense y = delta.apply(x);
        benchmark::DoNotOptimize(y.data());
        Dense z = delta.apply_transpose(y);
        benchmark::DoNotOptimize(z.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * static_cast<std::int64_t>(g.num_edges()));
}
BENCHMARK(BM_CoboundaryApply)->Arg(2)->Arg(3)->Arg(4);

void BM_BoundedConfidenceLaplacian(benchmark::State& state) {
    const Graph& g = synthetic().members[0].graph;
    const int d = 3;
    const BlockSparse delta = assemble_coboundary(learned_sheaf(g, d, MapKind::Orthogonal), g);
    const Dense x = Dense::Random(g.num_nodes() * d, 8);
    const Dense thr = Dense::Constant(static_cast<Eigen::Index>(g.num_edges()), 1, 1.0);
    const auto spec = NonlinearitySpec::bounded_confidence(PsiShape::Psi3, ThresholdMode::PerEdge);
    for (auto _ : state) {
        Dense out = apply_nonlinear_laplacian(delta, spec, x, thr);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_BoundedConfidenceLaplacian);

void BM_TrainStep(benchmark::State& state, const char* variant) {
    const auto& seq = synthetic();
    const Graph& g = seq.members[0].graph;
    ModelConfig cfg = ModelConfig::from_name(variant);
    cfg.d = 3;
    cfg.hidden = 8;
    cfg.layers = 2;
    cfg.input_dim = 2;
    cfg.num_classes = 3;
    Rng rng(0);
    const Model model(cfg, rng);
    const ModelContext ctx = ModelContext::build(g, cfg);
    const std::vector<std::uint8_t> mask(seq.labels.size(), 1);
    for (auto _ : state) {
        ad::Tape t;
        auto fw = model.forward(t, seq.features, ctx);
        const ad::Var loss = ad::softmax_cross_entropy(t, fw.logits, seq.labels, mask);
        t.backward(loss);
        benchmark::DoNotOptimize(t.grad(fw.leaves[0]).data());
    }
}
BENCHMARK_CAPTURE(BM_TrainStep, nsd_od, "NSD-O(d)")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, bc_m_diag, "BC-m-Diag-NLSD")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, mlp_od, "MLP-O(d)-NLSD")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, gcn, "GCN")->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
