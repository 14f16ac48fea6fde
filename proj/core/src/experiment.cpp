#include "nlsd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "nlsd/errors.hpp"

namespace nlsd {

namespace fs = std::filesystem;

std::vector<RunResult> run_grid(const std::vector<GridJob>& jobs, int workers) {
    std::vector<RunResult> out(jobs.size());
    if (jobs.empty()) return out;
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t count = std::min<std::size_t>(jobs.size(), workers > 0 ? static_cast<std::size_t>(workers) : hw);

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < jobs.size() && !failed; i = next++) {
            try {
                const GridJob& job = jobs[i];
                if (!job.dataset) throw ConfigError("grid job without a dataset");
                RunResult r = train(*job.dataset, job.fold, job.config);
                if (!job.label.empty()) r.variant = job.label;
                out[i] = std::move(r);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < count; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
}

std::vector<GridJob> make_grid(const std::vector<const Dataset*>& datasets, const std::vector<TrainConfig>& configs,
                               const std::vector<std::string>& labels, int folds) {
    if (!labels.empty() && labels.size() != configs.size()) throw ConfigError("one label per config expected");
    std::vector<GridJob> jobs;
    for (const Dataset* ds : datasets) {
        for (std::size_t c = 0; c < configs.size(); ++c) {
            for (int f = 0; f < folds; ++f) jobs.push_back({ds, f, configs[c], labels.empty() ? std::string() : labels[c]});
        }
    }
    return jobs;
}

std::string AblationSetting::label() const {
    std::string s = layer_dependent ? "L+" : "L-";
    s += w2 ? " W2+" : " W2-";
    s += sigma ? " sigma+" : " sigma-";
    return s;
}

std::vector<AblationSetting> ablation_settings() {
    std::vector<AblationSetting> out;
    for (int mask = 0; mask < 8; ++mask) out.push_back({!(mask & 4), !(mask & 2), !(mask & 1)});
    return out;
}

TrainConfig apply_ablation(TrainConfig cfg, const AblationSetting& s) {
    cfg.model.shared_sheaf = !s.layer_dependent;
    cfg.model.use_w2 = s.w2;
    cfg.model.use_sigma = s.sigma;
    return cfg;
}

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

// Minimal quoting: cells containing a comma or quote are wrapped in quotes.
std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

std::vector<std::string> split_csv_line(const std::string& line, long number) {
    std::vector<std::string> cells(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cells.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cells.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.emplace_back();
        } else {
            cells.back() += c;
        }
    }
    if (quoted) throw ParseError("results", "unterminated quote", number);
    return cells;
}

template <class T>
T cell_number(const std::string& s, const char* field, long line) {
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(field, "bad number '" + s + "'", line);
    return value;
}

constexpr const char* kHeader = "dataset,variant,fold,seed,train_acc,val_acc,test_acc,epoch";

}  // namespace

std::vector<CellSummary> summarize(const std::vector<RunResult>& results) {
    std::vector<CellSummary> cells;
    std::vector<std::vector<const RunResult*>> members;
    for (const auto& r : results) {
        auto it = std::find_if(cells.begin(), cells.end(),
                               [&](const CellSummary& c) { return c.dataset == r.dataset && c.variant == r.variant; });
        if (it == cells.end()) {
            cells.push_back({r.dataset, r.variant});
            members.emplace_back();
            it = cells.end() - 1;
        }
        members[static_cast<std::size_t>(it - cells.begin())].push_back(&r);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::vector<double> tr, va, te;
        for (const RunResult* r : members[i]) {
            tr.push_back(r->train_acc);
            va.push_back(r->val_acc);
            te.push_back(r->test_acc);
        }
        CellSummary& c = cells[i];
        c.runs = static_cast<int>(tr.size());
        mean_std(tr, c.train_mean, c.train_std);
        mean_std(va, c.val_mean, c.val_std);
        mean_std(te, c.test_mean, c.test_std);
    }
    return cells;
}

std::string results_to_csv(const std::vector<RunResult>& results) {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : results) {
        out += csv_cell(r.dataset) + ',' + csv_cell(r.variant) + ',' + std::to_string(r.fold) + ',' +
               std::to_string(r.seed) + ',' + fmt(r.train_acc) + ',' + fmt(r.val_acc) + ',' + fmt(r.test_acc) + ',' +
               std::to_string(r.epoch) + '\n';
    }
    return out;
}

std::vector<RunResult> results_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    long number = 0;
    std::vector<RunResult> out;
    bool header = false;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != kHeader) throw ParseError("header", std::string("expected '") + kHeader + "'", number);
            header = true;
            continue;
        }
        const auto c = split_csv_line(line, number);
        if (c.size() != 8) throw ParseError("results", "expected 8 columns", number);
        RunResult r;
        r.dataset = c[0];
        r.variant = c[1];
        r.fold = cell_number<int>(c[2], "fold", number);
        r.seed = cell_number<std::uint64_t>(c[3], "seed", number);
        r.train_acc = cell_number<double>(c[4], "train_acc", number);
        r.val_acc = cell_number<double>(c[5], "val_acc", number);
        r.test_acc = cell_number<double>(c[6], "test_acc", number);
        r.epoch = cell_number<int>(c[7], "epoch", number);
        out.push_back(std::move(r));
    }
    if (!header) throw ParseError("header", "empty results file");
    return out;
}

void emit_results(const std::vector<RunResult>& results, const fs::path& path) { write_text(path, results_to_csv(results)); }

std::vector<RunResult> load_results(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return results_from_csv(ss.str());
}

std::string summary_to_csv(const std::vector<CellSummary>& cells) {
    std::string out = "dataset,variant,runs,train_mean,train_std,val_mean,val_std,test_mean,test_std\n";
    for (const auto& c : cells) {
        out += csv_cell(c.dataset) + ',' + csv_cell(c.variant) + ',' + std::to_string(c.runs) + ',' + fmt(c.train_mean) +
               ',' + fmt(c.train_std) + ',' + fmt(c.val_mean) + ',' + fmt(c.val_std) + ',' + fmt(c.test_mean) + ',' +
               fmt(c.test_std) + '\n';
    }
    return out;
}

double percent_of(const std::string& name) {
    const auto at = name.rfind('@');
    if (at == std::string::npos) return std::numeric_limits<double>::quiet_NaN();
    double p = 0.0;
    const char* first = name.data() + at + 1;
    const char* last = name.data() + name.size();
    auto [ptr, ec] = std::from_chars(first, last, p);
    if (ec != std::errc() || ptr != last) return std::numeric_limits<double>::quiet_NaN();
    return p;
}

std::string sequence_member_name(const std::string& tag, double percent) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", percent);
    return tag + "@" + buf;
}

std::string accuracy_plot_svg(const std::vector<RunResult>& results, const std::string& title) {
    // variant -> percent -> test accuracies
    std::vector<std::string> order;
    std::map<std::string, std::map<double, std::vector<double>>> series;
    for (const auto& r : results) {
        const double p = percent_of(r.dataset);
        if (std::isnan(p)) continue;
        if (!series.count(r.variant)) order.push_back(r.variant);
        series[r.variant][p].push_back(r.test_acc);
    }
    double xmax = 0.0;
    for (const auto& [v, pts] : series)
        for (const auto& [p, accs] : pts) xmax = std::max(xmax, p);
    if (xmax <= 0.0) xmax = 100.0;

    const double W = 640, H = 420, L = 60, R = 180, T = 40, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    auto X = [&](double p) { return L + pw * p / xmax; };
    auto Y = [&](double a) { return T + ph * (1.0 - a); };
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ostringstream s;
    char buf[256];
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty()) s << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
    s << "<g stroke=\"#888\">\n";
    for (int i = 0; i <= 5; ++i) {
        const double a = i / 5.0;
        std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke-opacity=\"0.3\"/>\n", L, Y(a), L + pw, Y(a));
        s << buf;
    }
    s << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph << "\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\"/>\n</g>\n";
    for (int i = 0; i <= 5; ++i) {
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.1f</text>\n", L - 6, Y(i / 5.0) + 4, i / 5.0);
        s << buf;
    }
    for (int i = 0; i <= 5; ++i) {
        const double p = xmax * i / 5.0;
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%g</text>\n", X(p), T + ph + 18, p);
        s << buf;
    }
    s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">% random edges</text>\n";
    s << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">test accuracy</text>\n";

    for (std::size_t k = 0; k < order.size(); ++k) {
        const char* color = palette[k % 8];
        std::string pts;
        for (const auto& [p, accs] : series[order[k]]) {
            double m = 0.0;
            for (double a : accs) m += a;
            m /= static_cast<double>(accs.size());
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(p), Y(m));
            pts += buf;
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", X(p), Y(m), color);
            s << buf;
        }
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
        const double ly = T + 16.0 * static_cast<double>(k);
        std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                      L + pw + 12, ly, L + pw + 32, ly, color);
        s << buf << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly + 4 << "\">" << order[k] << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void emit_plot(const std::vector<RunResult>& results, const fs::path& path, const std::string& title) {
    write_text(path, accuracy_plot_svg(results, title));
}

MisclassificationReport misclassification_analysis(const std::vector<double>& percentages,
                                                   const std::vector<const Graph*>& graphs,
                                                   const std::vector<SequencePrediction>& predictions,
                                                   std::span<const int> labels, std::span<const std::uint8_t> mask) {
    if (percentages.empty() || percentages.size() != graphs.size()) {
        throw ConfigError("misclassification analysis needs one graph per percentage");
    }
    if (percentages.front() != 0.0) throw ConfigError("the sequence must start at 0%");
    const std::size_t n = labels.size();
    if (!mask.empty() && mask.size() != n) throw ShapeError("mask length differs from the label count");

    std::vector<const std::vector<int>*> pred(percentages.size(), nullptr);
    for (std::size_t i = 0; i < percentages.size(); ++i) {
        for (const auto& sp : predictions) {
            if (sp.percent == percentages[i]) pred[i] = &sp.predictions;
        }
        if (!pred[i]) throw IncompleteSequence("no predictions for " + std::to_string(percentages[i]) + "%");
        if (pred[i]->size() != n) throw ShapeError("prediction vector length differs from the label count");
        if (graphs[i]->num_nodes() != static_cast<int>(n)) throw ShapeError("graph size differs from the label count");
    }

    MisclassificationReport rep;
    rep.percentages = percentages;
    for (std::size_t v = 0; v < n; ++v) {
        if (!mask.empty() && !mask[v]) continue;
        bool rest_right = true, rest_wrong = true;
        for (std::size_t i = 1; i < pred.size(); ++i) {
            const bool wrong = (*pred[i])[v] != labels[v];
            rest_right = rest_right && !wrong;
            rest_wrong = rest_wrong && wrong;
        }
        if ((*pred[0])[v] == labels[v]) continue;
        if (rest_right) rep.wrong_first.push_back(static_cast<int>(v));
        if (rest_wrong) rep.wrong_always.push_back(static_cast<int>(v));
    }
    // with only the 0% member both conditions hold vacuously; count such nodes as wrong-always
    if (pred.size() == 1) rep.wrong_first.clear();

    auto mean_degree = [](const Graph& g, const std::vector<int>& nodes) {
        if (nodes.empty()) return std::numeric_limits<double>::quiet_NaN();
        const auto deg = g.degrees();
        double s = 0.0;
        for (int v : nodes) s += deg[static_cast<std::size_t>(v)];
        return s / static_cast<double>(nodes.size());
    };
    for (const Graph* g : graphs) {
        rep.wrong_first_degree.push_back(mean_degree(*g, rep.wrong_first));
        rep.wrong_always_degree.push_back(mean_degree(*g, rep.wrong_always));
    }
    return rep;
}

std::string MisclassificationReport::table() const {
    std::string out = "percent,wrong_first_avg_edges,wrong_always_avg_edges\n";
    char buf[96];
    for (std::size_t i = 0; i < percentages.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%g,%.2f,%.2f\n", percentages[i], wrong_first_degree[i], wrong_always_degree[i]);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "# wrong-first: %zu nodes, wrong-always: %zu nodes\n", wrong_first.size(), wrong_always.size());
    return out + buf;
}

}  // namespace nlsd
