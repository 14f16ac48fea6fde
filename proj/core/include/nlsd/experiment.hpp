#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nlsd/dataset.hpp"
#include "nlsd/graph.hpp"
#include "nlsd/training.hpp"

namespace nlsd {

/// One cell run: a dataset, a fold and a training configuration.
struct GridJob {
    const Dataset* dataset = nullptr;
    int fold = 0;
    TrainConfig config;
    std::string label;  // variant column; empty -> config.model.name()
};

/// Runs every job on up to `workers` threads (0 = hardware concurrency).
/// Results come back in job order and do not depend on scheduling. The first
/// exception raised by any job is rethrown after all workers stop.
std::vector<RunResult> run_grid(const std::vector<GridJob>& jobs, int workers = 0);

/// Cartesian product datasets x configs x folds.
std::vector<GridJob> make_grid(const std::vector<const Dataset*>& datasets, const std::vector<TrainConfig>& configs,
                               const std::vector<std::string>& labels, int folds);

struct AblationSetting {
    bool layer_dependent = true;  // false -> shared sheaf
    bool w2 = true;
    bool sigma = true;
    std::string label() const;  // e.g. "L+ W2+ sigma-"
};

/// All 8 combinations, full model first, removal order L, W2, sigma.
std::vector<AblationSetting> ablation_settings();
TrainConfig apply_ablation(TrainConfig cfg, const AblationSetting& s);

struct CellSummary {
    std::string dataset;
    std::string variant;
    int runs = 0;
    double train_mean = 0, train_std = 0;
    double val_mean = 0, val_std = 0;
    double test_mean = 0, test_std = 0;
};

/// Groups by (dataset, variant) in order of first appearance; std is the
/// sample standard deviation (zero for a single run).
std::vector<CellSummary> summarize(const std::vector<RunResult>& results);

/// Columns: dataset,variant,fold,seed,train_acc,val_acc,test_acc,epoch.
std::string results_to_csv(const std::vector<RunResult>& results);
std::vector<RunResult> results_from_csv(const std::string& text);
void emit_results(const std::vector<RunResult>& results, const std::filesystem::path& path);
std::vector<RunResult> load_results(const std::filesystem::path& path);
std::string summary_to_csv(const std::vector<CellSummary>& cells);

/// Sequence members are named "<tag>@<percent>"; returns the percent or NaN.
double percent_of(const std::string& dataset_name);
std::string sequence_member_name(const std::string& tag, double percent);

/// Accuracy-vs-percentage line chart (mean test accuracy per variant) as SVG.
std::string accuracy_plot_svg(const std::vector<RunResult>& results, const std::string& title = "");
void emit_plot(const std::vector<RunResult>& results, const std::filesystem::path& path, const std::string& title = "");

struct SequencePrediction {
    double percent = 0.0;
    std::vector<int> predictions;
};

struct MisclassificationReport {
    std::vector<double> percentages;
    std::vector<int> wrong_first;   // wrong at 0%, right at every other percentage
    std::vector<int> wrong_always;  // wrong at every percentage
    std::vector<double> wrong_first_degree;   // mean degree per percentage (NaN for an empty set)
    std::vector<double> wrong_always_degree;

    std::string table() const;
};

/// `graphs[i]` is the graph at `percentages[i]`; the first percentage must be 0.
/// Nodes outside `mask` (when non-empty) are ignored. Throws IncompleteSequence
/// when a percentage has no prediction.
MisclassificationReport misclassification_analysis(const std::vector<double>& percentages,
                                                   const std::vector<const Graph*>& graphs,
                                                   const std::vector<SequencePrediction>& predictions,
                                                   std::span<const int> labels,
                                                   std::span<const std::uint8_t> mask = {});

}  // namespace nlsd
