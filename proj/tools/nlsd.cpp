// nlsd: synthetic data generation, training, grids, ablations and reports.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nlsd/checkpoint.hpp"
#include "nlsd/dataset.hpp"
#include "nlsd/errors.hpp"
#include "nlsd/experiment.hpp"
#include "nlsd/synth.hpp"
#include "nlsd/training.hpp"

namespace fs = std::filesystem;
using namespace nlsd;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct TrainOptions {
    std::string config_file;
    double lr = 0.01;
    double weight_decay = 5e-4;
    int epochs = 1000;
    int patience = 100;
    int hidden = 8;
    std::string activation = "relu";
    std::uint64_t seed = 0;
    int folds = 10;
    int repeats = 1;
    int workers = 0;
};

void add_train_options(CLI::App* app, TrainOptions& o) {
    app->add_option("--config", o.config_file, "flat JSON training configuration (flags override it)");
    app->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--weight-decay", o.weight_decay, "L2 weight decay")->capture_default_str();
    app->add_option("--epochs", o.epochs, "maximum epochs")->capture_default_str();
    app->add_option("--patience", o.patience, "early-stopping patience")->capture_default_str();
    app->add_option("--hidden", o.hidden, "channels per stalk dimension")->capture_default_str();
    app->add_option("--activation", o.activation, "relu, elu or identity")->capture_default_str();
    app->add_option("--seed", o.seed, "base seed (fold k, repeat r uses seed + r)")->capture_default_str();
    app->add_option("--folds", o.folds, "number of folds to run")->capture_default_str();
    app->add_option("--repeats", o.repeats, "seeds per fold")->capture_default_str();
    app->add_option("--workers", o.workers, "worker threads (0 = all cores)")->capture_default_str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig base_config(const TrainOptions& o, const CLI::App* app) {
    TrainConfig cfg;
    if (!o.config_file.empty()) cfg = train_config_from_json(slurp(o.config_file));
    auto given = [&](const char* flag) { return o.config_file.empty() || app->count(flag) > 0; };
    if (given("--lr")) cfg.lr = o.lr;
    if (given("--weight-decay")) cfg.weight_decay = o.weight_decay;
    if (given("--epochs")) cfg.max_epochs = o.epochs;
    if (given("--patience")) cfg.patience = std::min(o.patience, cfg.max_epochs);
    if (given("--hidden")) cfg.model.hidden = o.hidden;
    if (given("--seed")) cfg.seed = o.seed;
    if (given("--activation")) {
        if (o.activation == "relu") cfg.model.activation = Activation::Relu;
        else if (o.activation == "elu") cfg.model.activation = Activation::Elu;
        else if (o.activation == "identity") cfg.model.activation = Activation::Identity;
        else throw ConfigError("unknown activation '" + o.activation + "'");
    }
    return cfg;
}

TrainConfig with_variant(TrainConfig cfg, const std::string& variant) {
    const ModelConfig named = ModelConfig::from_name(variant);
    cfg.model.architecture = named.architecture;
    cfg.model.variant = named.variant;
    cfg.model.maps = named.maps;
    cfg.model.normalization = named.normalization;
    cfg.model.psi = named.psi;
    cfg.model.thresholds = named.thresholds;
    return cfg;
}

// Flags override the config file; without a config file every flag applies.
TrainConfig model_config(TrainConfig cfg, const TrainOptions& o, const CLI::App* app, const std::string& variant, int d,
                         int layers) {
    auto given = [&](const char* flag) { return o.config_file.empty() || app->count(flag) > 0; };
    if (given("--variant")) cfg = with_variant(cfg, variant);
    if (given("--d")) cfg.model.d = d;
    if (given("--layers")) cfg.model.layers = layers;
    return cfg;
}

// A path may be a dataset file, a CSV directory, or a directory of .json members.
std::vector<Dataset> load_datasets(const std::vector<std::string>& paths, std::uint64_t seed, int folds) {
    std::vector<Dataset> out;
    for (const auto& p : paths) {
        std::vector<fs::path> files;
        if (fs::is_directory(p) && !fs::exists(fs::path(p) / "labels.csv")) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".json") files.push_back(e.path());
            std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
                const double pa = percent_of(a.stem().string()), pb = percent_of(b.stem().string());
                if (pa == pb || pa != pa || pb != pb) return a < b;
                return pa < pb;
            });
            if (files.empty()) throw ConfigError("no .json datasets in " + p);
        } else {
            files.emplace_back(p);
        }
        for (const auto& f : files) {
            Dataset ds = load_dataset(f);
            if (static_cast<int>(ds.splits.size()) < folds) ds.splits = make_splits(ds.labels, ds.num_classes, Rng(seed), folds);
            out.push_back(std::move(ds));
        }
    }
    return out;
}

std::vector<GridJob> jobs_for(const std::vector<Dataset>& datasets, const TrainConfig& cfg, const std::string& label,
                              int folds, int repeats) {
    std::vector<GridJob> jobs;
    for (const auto& ds : datasets) {
        for (int f = 0; f < folds; ++f) {
            for (int r = 0; r < repeats; ++r) {
                TrainConfig c = cfg;
                c.seed = cfg.seed + static_cast<std::uint64_t>(r);
                jobs.push_back({&ds, f, c, label});
            }
        }
    }
    return jobs;
}

void report(const std::vector<RunResult>& results, const std::string& out) {
    const auto cells = summarize(results);
    for (const auto& c : cells) {
        std::printf("%-28s %-26s runs=%-3d test %.4f +- %.4f  (val %.4f, train %.4f)\n", c.dataset.c_str(), c.variant.c_str(),
                    c.runs, c.test_mean, c.test_std, c.val_mean, c.train_mean);
    }
    if (!out.empty()) {
        emit_results(results, out);
        std::printf("wrote %s\n", out.c_str());
    }
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw ConfigError("bad list entry '" + item + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nonlinear sheaf diffusion: data generation, training and experiment tooling"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic three-community sequence");
    std::string base = "knn", mode = "inter", budget = "constant", percents = "0,10,20,40,80,100", gen_out = "synthetic",
                format = "json";
    SyntheticSpec spec;
    bool close_means = false;
    int gen_folds = 10;
    gen->add_option("--base", base, "knn or er")->check(CLI::IsMember({"knn", "er"}))->capture_default_str();
    gen->add_option("--mode", mode, "inter, intra or both")->check(CLI::IsMember({"inter", "intra", "both"}))->capture_default_str();
    gen->add_option("--budget", budget, "constant or increasing")->check(CLI::IsMember({"constant", "increasing"}))->capture_default_str();
    gen->add_option("--percent", percents, "comma-separated percentages")->capture_default_str();
    gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
    gen->add_flag("--close-means", close_means, "use the close-means class centres");
    gen->add_option("--nodes-per-class", spec.nodes_per_class)->capture_default_str();
    gen->add_option("--k", spec.k, "k for the k-NN base graph")->capture_default_str();
    gen->add_option("--p", spec.p, "edge probability for the Erdos-Renyi base graph")->capture_default_str();
    gen->add_option("--folds", gen_folds, "stored splits per member")->capture_default_str();
    gen->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();

    // train
    auto* trn = app.add_subcommand("train", "train one variant on the folds of a dataset");
    TrainOptions topt;
    std::vector<std::string> trn_data;
    std::string trn_variant = "MLP-O(d)-NLSD", trn_out, trn_ckpt;
    int trn_d = 3, trn_layers = 2;
    trn->add_option("--dataset", trn_data, "dataset file or directory")->required();
    trn->add_option("--variant", trn_variant, "model label, e.g. NSD-O(d), BC-s-Diag-NLSD, MLP, GCN")->capture_default_str();
    trn->add_option("--d", trn_d, "stalk dimension")->capture_default_str();
    trn->add_option("--layers", trn_layers, "diffusion layers")->capture_default_str();
    trn->add_option("--out", trn_out, "results CSV");
    trn->add_option("--checkpoint", trn_ckpt, "write the best-epoch model of fold 0 here");
    add_train_options(trn, topt);

    // grid
    auto* grd = app.add_subcommand("grid", "Cartesian grid over variants, d and T");
    TrainOptions gopt;
    std::vector<std::string> grd_data;
    std::string grd_variants = "NSD-O(d),MLP-O(d)-NLSD", grd_d = "2,3,4", grd_layers = "2,3,4", grd_out, grd_summary;
    grd->add_option("--dataset", grd_data, "dataset files or sequence directories")->required();
    grd->add_option("--variants", grd_variants, "comma-separated model labels (may be empty)")->capture_default_str();
    grd->add_option("--d", grd_d, "stalk dimensions")->capture_default_str();
    grd->add_option("--layers", grd_layers, "layer counts")->capture_default_str();
    grd->add_option("--out", grd_out, "per-run results CSV");
    grd->add_option("--summary", grd_summary, "mean/std summary CSV");
    add_train_options(grd, gopt);

    // ablate
    auto* abl = app.add_subcommand("ablate", "all 8 combinations of layer-dependent sheaf, W2 and activation");
    TrainOptions aopt;
    std::vector<std::string> abl_data;
    std::string abl_variant = "MLP-O(d)-NLSD", abl_out;
    int abl_d = 3, abl_layers = 2;
    abl->add_option("--dataset", abl_data, "dataset file or directory")->required();
    abl->add_option("--variant", abl_variant)->capture_default_str();
    abl->add_option("--d", abl_d)->capture_default_str();
    abl->add_option("--layers", abl_layers)->capture_default_str();
    abl->add_option("--out", abl_out, "results CSV");
    add_train_options(abl, aopt);

    // analyze
    auto* ana = app.add_subcommand("analyze", "wrong-first / wrong-always analysis over a sequence");
    TrainOptions nopt;
    std::string ana_seq, ana_variant = "MLP-O(d)-NLSD", ana_out;
    int ana_d = 3, ana_layers = 1, ana_fold = 0;
    bool ana_all = false;
    ana->add_option("--sequence", ana_seq, "directory written by `gen`")->required();
    ana->add_option("--variant", ana_variant)->capture_default_str();
    ana->add_option("--d", ana_d)->capture_default_str();
    ana->add_option("--layers", ana_layers)->capture_default_str();
    ana->add_option("--fold", ana_fold, "fold whose test nodes are analysed")->capture_default_str();
    ana->add_flag("--all-nodes", ana_all, "analyse every node instead of the test mask");
    ana->add_option("--out", ana_out, "table CSV");
    add_train_options(ana, nopt);

    // plot
    auto* plt = app.add_subcommand("plot", "accuracy-vs-percentage chart from a results CSV");
    std::string plt_in, plt_out = "accuracy.svg", plt_title;
    plt->add_option("--results", plt_in, "results CSV")->required();
    plt->add_option("--out", plt_out, "SVG file")->capture_default_str();
    plt->add_option("--title", plt_title);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) {
            spec.base = base == "knn" ? BaseKind::Knn : BaseKind::ErdosRenyi;
            spec.mode = mode == "inter" ? MutationMode::InterOnly : mode == "intra" ? MutationMode::IntraOnly : MutationMode::InterPlusIntra;
            spec.budget = budget == "constant" ? Budget::Constant : Budget::Increasing;
            spec.percentages = parse_list<double>(percents);
            if (close_means) spec.use_close_means();
            const SyntheticSequence seq = generate(spec);
            const auto splits = make_splits(seq.labels, spec.num_classes(), Rng(spec.seed).split(3), gen_folds);
            fs::create_directories(gen_out);
            for (const auto& m : seq.members) {
                Dataset ds = make_dataset(sequence_member_name(spec.tag(), m.percent), seq.features, seq.labels,
                                          m.graph.edge_pairs(), spec.num_classes());
                ds.splits = splits;
                const fs::path target = fs::path(gen_out) / (ds.name + (format == "json" ? ".json" : ""));
                save_dataset(ds, target);
                std::printf("%s  edges=%zu added=%zu removed=%zu homophily=%.4f\n", target.string().c_str(),
                            m.graph.num_edges(), m.added, m.removed, homophily(m.graph));
            }
            return 0;
        }
        if (*trn) {
            const TrainConfig cfg = model_config(base_config(topt, trn), topt, trn, trn_variant, trn_d, trn_layers);
            const auto datasets = load_datasets(trn_data, cfg.seed, topt.folds);
            const auto results = run_grid(jobs_for(datasets, cfg, "", topt.folds, topt.repeats), topt.workers);
            report(results, trn_out);
            if (!trn_ckpt.empty()) {
                Checkpoint ck;
                ck.config = cfg;
                train(datasets.front(), 0, cfg, &ck.model);
                save_checkpoint(ck, trn_ckpt);
                std::printf("wrote %s\n", trn_ckpt.c_str());
            }
            return 0;
        }
        if (*grd) {
            const TrainConfig base_cfg = base_config(gopt, grd);
            const auto datasets = load_datasets(grd_data, base_cfg.seed, gopt.folds);
            std::vector<std::string> variants;
            {
                std::stringstream ss(grd_variants);
                for (std::string v; std::getline(ss, v, ',');)
                    if (!v.empty()) variants.push_back(v);
            }
            const auto ds_list = parse_list<int>(grd_d), ts = parse_list<int>(grd_layers);
            std::vector<GridJob> jobs;
            for (const auto& v : variants) {
                for (int d : ds_list) {
                    for (int T : ts) {
                        TrainConfig c = with_variant(base_cfg, v);
                        c.model.d = d;
                        c.model.layers = T;
                        const std::string label = v + " d=" + std::to_string(d) + " T=" + std::to_string(T);
                        auto part = jobs_for(datasets, c, label, gopt.folds, gopt.repeats);
                        jobs.insert(jobs.end(), part.begin(), part.end());
                    }
                }
            }
            const auto results = run_grid(jobs, gopt.workers);
            report(results, grd_out);
            if (!grd_summary.empty()) {
                std::ofstream(grd_summary) << summary_to_csv(summarize(results));
                std::printf("wrote %s\n", grd_summary.c_str());
            }
            return 0;
        }
        if (*abl) {
            const TrainConfig cfg = model_config(base_config(aopt, abl), aopt, abl, abl_variant, abl_d, abl_layers);
            const auto datasets = load_datasets(abl_data, cfg.seed, aopt.folds);
            std::vector<GridJob> jobs;
            for (const auto& s : ablation_settings()) {
                auto part = jobs_for(datasets, apply_ablation(cfg, s), cfg.model.name() + " [" + s.label() + "]", aopt.folds, aopt.repeats);
                jobs.insert(jobs.end(), part.begin(), part.end());
            }
            report(run_grid(jobs, aopt.workers), abl_out);
            return 0;
        }
        if (*ana) {
            const TrainConfig cfg = model_config(base_config(nopt, ana), nopt, ana, ana_variant, ana_d, ana_layers);
            const auto datasets = load_datasets({ana_seq}, cfg.seed, ana_fold + 1);
            std::vector<GridJob> jobs;
            for (const auto& ds : datasets) jobs.push_back({&ds, ana_fold, cfg, ""});
            const auto results = run_grid(jobs, nopt.workers);
            std::vector<double> percentages;
            std::vector<const Graph*> graphs;
            std::vector<SequencePrediction> preds;
            for (std::size_t i = 0; i < datasets.size(); ++i) {
                const double p = percent_of(datasets[i].name);
                if (p != p) throw ConfigError("dataset '" + datasets[i].name + "' is not a sequence member");
                percentages.push_back(p);
                graphs.push_back(&datasets[i].graph);
                preds.push_back({p, results[i].predictions});
                std::printf("%6g%%  test %.4f\n", p, results[i].test_acc);
            }
            const auto& mask = datasets.front().splits[static_cast<std::size_t>(ana_fold)].test;
            const auto rep = misclassification_analysis(percentages, graphs, preds, datasets.front().labels,
                                                        ana_all ? std::span<const std::uint8_t>{} : std::span<const std::uint8_t>(mask));
            std::printf("%s", rep.table().c_str());
            if (!ana_out.empty()) std::ofstream(ana_out) << rep.table();
            return 0;
        }
        if (*plt) {
            emit_plot(load_results(plt_in), plt_out, plt_title);
            std::printf("wrote %s\n", plt_out.c_str());
            return 0;
        }
    } catch (const Diverged& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return 0;
}
