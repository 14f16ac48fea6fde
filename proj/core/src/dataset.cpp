#include "nlsd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nlsd/errors.hpp"

namespace nlsd {

namespace fs = std::filesystem;
using nlohmann::json;

void Dataset::validate() const {
    const int n = num_nodes();
    if (features.rows() != n) throw ConfigError("features have " + std::to_string(features.rows()) + " rows for " + std::to_string(n) + " labels");
    if (graph.num_nodes() != n) throw ConfigError("graph node count differs from the label count");
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw ConfigError("label " + std::to_string(l) + " outside [0, num_classes)");
    }
    for (std::size_t k = 0; k < splits.size(); ++k) {
        const Fold& f = splits[k];
        const auto sz = static_cast<std::size_t>(n);
        if (f.train.size() != sz || f.val.size() != sz || f.test.size() != sz) {
            throw ConfigError("fold " + std::to_string(k) + " masks have the wrong length");
        }
        std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
        for (std::size_t v = 0; v < sz; ++v) {
            if (f.train[v] + f.val[v] + f.test[v] > 1) throw ConfigError("fold " + std::to_string(k) + " masks overlap");
            if (f.train[v]) seen[static_cast<std::size_t>(labels[v])] = 1;
        }
        if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
            throw ConfigError("fold " + std::to_string(k) + " misses a class in its training mask");
        }
    }
}

Dataset make_dataset(std::string name, Dense features, std::vector<int> labels, const EdgeList& edges,
                     int num_classes) {
    Dataset ds;
    ds.name = std::move(name);
    const int n = static_cast<int>(labels.size());
    const int seen = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    ds.num_classes = num_classes > 0 ? num_classes : seen;
    ds.graph = build_graph(n, edges, labels);
    ds.features = std::move(features);
    ds.labels = std::move(labels);
    ds.validate();
    return ds;
}

std::vector<Fold> make_splits(std::span<const int> labels, int num_classes, const Rng& rng, int folds) {
    if (folds < 1) throw ConfigError("need at least one fold");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(num_classes));
    for (std::size_t v = 0; v < labels.size(); ++v) {
        const int l = labels[v];
        if (l < 0 || l >= num_classes) throw ConfigError("label outside [0, num_classes)");
        members[static_cast<std::size_t>(l)].push_back(static_cast<int>(v));
    }
    for (std::size_t c = 0; c < members.size(); ++c) {
        if (members[c].size() < 3) {
            throw TooFewNodes("class " + std::to_string(c) + " has " + std::to_string(members[c].size()) +
                              " nodes; at least 3 are needed for a train/val/test split");
        }
    }
    std::vector<Fold> out;
    out.reserve(static_cast<std::size_t>(folds));
    const std::size_t n = labels.size();
    for (int k = 0; k < folds; ++k) {
        Rng r = rng.split(static_cast<std::uint64_t>(k));
        Fold f{std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0)};
        for (auto nodes : members) {
            r.shuffle(nodes);
            const std::size_t m = nodes.size();
            std::size_t count[3] = {m * 48 / 100, m * 32 / 100, m * 20 / 100};
            std::size_t left = m - count[0] - count[1] - count[2];
            for (std::size_t i = 0; left > 0; ++i, --left) ++count[i % 3];
            // tiny classes: keep val and test non-empty at the expense of train
            for (int s = 1; s < 3; ++s) {
                if (count[s] == 0) {
                    ++count[s];
                    --count[0];
                }
            }
            std::size_t i = 0;
            for (; i < count[0]; ++i) f.train[static_cast<std::size_t>(nodes[i])] = 1;
            for (; i < count[0] + count[1]; ++i) f.val[static_cast<std::size_t>(nodes[i])] = 1;
            for (; i < m; ++i) f.test[static_cast<std::size_t>(nodes[i])] = 1;
        }
        out.push_back(std::move(f));
    }
    return out;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

long line_of_byte(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<long>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

const json& require(const json& doc, const char* field) {
    auto it = doc.find(field);
    if (it == doc.end()) throw ParseError(field, "missing");
    return *it;
}

int as_int(const json& j, const std::string& field) {
    if (!j.is_number_integer()) throw ParseError(field, "expected an integer");
    return j.get<int>();
}

std::vector<int> int_list(const json& j, const std::string& field) {
    if (!j.is_array()) throw ParseError(field, "expected an array");
    std::vector<int> out;
    out.reserve(j.size());
    for (const auto& x : j) out.push_back(as_int(x, field));
    return out;
}

std::vector<std::uint8_t> mask_from_indices(const json& j, const std::string& field, int n) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    for (int v : int_list(j, field)) {
        if (v < 0 || v >= n) throw ParseError(field, "node index " + std::to_string(v) + " out of range");
        mask[static_cast<std::size_t>(v)] = 1;
    }
    return mask;
}

json mask_to_indices(const std::vector<std::uint8_t>& mask) {
    json out = json::array();
    for (std::size_t v = 0; v < mask.size(); ++v)
        if (mask[v]) out.push_back(v);
    return out;
}

Dataset finish(std::string name, Dense features, std::vector<int> labels, const EdgeList& edges, int n,
               int num_classes, std::vector<Fold> splits) {
    if (static_cast<int>(labels.size()) != n) throw ParseError("labels", "expected " + std::to_string(n) + " entries");
    if (features.rows() != n) throw ParseError("features", "expected " + std::to_string(n) + " rows");
    for (auto [a, b] : edges) {
        if (a < 0 || a >= n || b < 0 || b >= n) throw ParseError("edges", "endpoint out of range");
    }
    for (int l : labels) {
        if (l < 0 || (num_classes > 0 && l >= num_classes)) throw ParseError("labels", "label " + std::to_string(l) + " out of range");
    }
    Dataset ds;
    try {
        ds = make_dataset(std::move(name), std::move(features), std::move(labels), edges, num_classes);
        ds.splits = std::move(splits);
        ds.validate();
    } catch (const ConfigError& e) {
        throw ParseError("splits", e.what());
    }
    return ds;
}

// --- CSV ---------------------------------------------------------------

struct CsvLine {
    long number;
    std::vector<std::string> cells;
};

std::vector<CsvLine> read_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<CsvLine> rows;
    std::string line;
    long number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        CsvLine row{number, {}};
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) row.cells.push_back(cell);
        if (line.back() == ',') row.cells.emplace_back();
        rows.push_back(std::move(row));
    }
    return rows;
}

template <class T>
T parse_number(const std::string& s, const std::string& field, long line) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) throw ParseError(field, "empty cell", line);
    T value{};
    const char* first = s.data() + a;
    const char* last = s.data() + b + 1;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw ParseError(field, "bad number '" + s.substr(a, b + 1 - a) + "'", line);
    return value;
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

Dataset load_csv_dir(const fs::path& dir) {
    for (const char* f : {"features.csv", "labels.csv", "edges.csv"}) {
        if (!fs::exists(dir / f)) throw ParseError(std::string(f).substr(0, std::string(f).size() - 4), "missing " + std::string(f));
    }
    std::vector<int> labels;
    for (const auto& row : read_csv(dir / "labels.csv")) {
        if (row.cells.size() != 1) throw ParseError("labels", "one label per line expected", row.number);
        labels.push_back(parse_number<int>(row.cells[0], "labels", row.number));
    }
    const int n = static_cast<int>(labels.size());

    const auto frows = read_csv(dir / "features.csv");
    const Eigen::Index p = frows.empty() ? 0 : static_cast<Eigen::Index>(frows[0].cells.size());
    Dense features(static_cast<Eigen::Index>(frows.size()), p);
    for (std::size_t i = 0; i < frows.size(); ++i) {
        if (static_cast<Eigen::Index>(frows[i].cells.size()) != p) throw ParseError("features", "ragged row", frows[i].number);
        for (Eigen::Index j = 0; j < p; ++j) {
            features(static_cast<Eigen::Index>(i), j) =
                parse_number<double>(frows[i].cells[static_cast<std::size_t>(j)], "features", frows[i].number);
        }
    }

    EdgeList edges;
    for (const auto& row : read_csv(dir / "edges.csv")) {
        if (row.cells.size() != 2) throw ParseError("edges", "two node ids per line expected", row.number);
        edges.emplace_back(parse_number<int>(row.cells[0], "edges", row.number),
                           parse_number<int>(row.cells[1], "edges", row.number));
    }

    std::vector<Fold> splits;
    if (fs::exists(dir / "splits.csv")) {
        for (const auto& row : read_csv(dir / "splits.csv")) {
            if (row.cells.size() != 3) throw ParseError("splits", "fold,node,role expected", row.number);
            const int k = parse_number<int>(row.cells[0], "splits", row.number);
            const int v = parse_number<int>(row.cells[1], "splits", row.number);
            if (k < 0 || k > 10000) throw ParseError("splits", "bad fold index", row.number);
            if (v < 0 || v >= n) throw ParseError("splits", "node index out of range", row.number);
            while (static_cast<int>(splits.size()) <= k) {
                const auto sz = static_cast<std::size_t>(n);
                splits.push_back({std::vector<std::uint8_t>(sz, 0), std::vector<std::uint8_t>(sz, 0),
                                  std::vector<std::uint8_t>(sz, 0)});
            }
            Fold& f = splits[static_cast<std::size_t>(k)];
            const std::string& role = row.cells[2];
            auto& mask = role == "train" ? f.train : role == "val" ? f.val : role == "test" ? f.test
                       : throw ParseError("splits", "role must be train, val or test", row.number);
            mask[static_cast<std::size_t>(v)] = 1;
        }
    }
    return finish(dir.filename().string(), std::move(features), std::move(labels), edges, n, 0, std::move(splits));
}

void save_csv_dir(const Dataset& ds, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::string text;
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
            if (j) text += ',';
            text += fmt_double(ds.features(i, j));
        }
        text += '\n';
    }
    write_file(dir / "features.csv", text);
    text.clear();
    for (int l : ds.labels) text += std::to_string(l) + '\n';
    write_file(dir / "labels.csv", text);
    text.clear();
    for (const auto& e : ds.graph.edges()) text += std::to_string(e.lo) + ',' + std::to_string(e.hi) + '\n';
    write_file(dir / "edges.csv", text);
    if (!ds.splits.empty()) {
        text = "# fold,node,role\n";
        for (std::size_t k = 0; k < ds.splits.size(); ++k) {
            const Fold& f = ds.splits[k];
            for (std::size_t v = 0; v < f.train.size(); ++v) {
                const char* role = f.train[v] ? "train" : f.val[v] ? "val" : f.test[v] ? "test" : nullptr;
                if (role) text += std::to_string(k) + ',' + std::to_string(v) + ',' + role + '\n';
            }
        }
        write_file(dir / "splits.csv", text);
    } else {
        fs::remove(dir / "splits.csv", ec);
    }
}

}  // namespace

Dataset parse_dataset_json(const std::string& text, const std::string& name) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("document", e.what(), line_of_byte(text, e.byte > 0 ? e.byte - 1 : 0));
    }
    if (!doc.is_object()) throw ParseError("document", "expected a JSON object");

    const int n = as_int(require(doc, "n"), "n");
    if (n < 0) throw ParseError("n", "must be non-negative");
    int num_classes = 0;
    if (doc.contains("num_classes")) num_classes = as_int(doc["num_classes"], "num_classes");

    const json& jf = require(doc, "features");
    if (!jf.is_array()) throw ParseError("features", "expected an array of rows");
    const Eigen::Index p = jf.empty() ? 0 : static_cast<Eigen::Index>(jf[0].is_array() ? jf[0].size() : 0);
    Dense features(static_cast<Eigen::Index>(jf.size()), p);
    for (std::size_t i = 0; i < jf.size(); ++i) {
        const json& row = jf[i];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != p) {
            throw ParseError("features", "row " + std::to_string(i) + " is not a list of " + std::to_string(p) + " numbers");
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            const json& x = row[static_cast<std::size_t>(j)];
            if (!x.is_number()) throw ParseError("features", "row " + std::to_string(i) + " has a non-numeric entry");
            features(static_cast<Eigen::Index>(i), j) = x.get<double>();
        }
    }

    std::vector<int> labels = int_list(require(doc, "labels"), "labels");

    EdgeList edges;
    const json& je = require(doc, "edges");
    if (!je.is_array()) throw ParseError("edges", "expected an array of pairs");
    for (const auto& e : je) {
        if (!e.is_array() || e.size() != 2) throw ParseError("edges", "each edge must be [v, u]");
        edges.emplace_back(as_int(e[0], "edges"), as_int(e[1], "edges"));
    }

    std::vector<Fold> splits;
    if (auto it = doc.find("splits"); it != doc.end() && !it->is_null()) {
        if (!it->is_array()) throw ParseError("splits", "expected an array of folds");
        for (const auto& f : *it) {
            if (!f.is_object()) throw ParseError("splits", "each fold must be an object");
            splits.push_back({mask_from_indices(require(f, "train"), "splits.train", n),
                              mask_from_indices(require(f, "val"), "splits.val", n),
                              mask_from_indices(require(f, "test"), "splits.test", n)});
        }
    }
    std::string ds_name = doc.contains("name") && doc["name"].is_string() ? doc["name"].get<std::string>() : name;
    return finish(std::move(ds_name), std::move(features), std::move(labels), edges, n, num_classes, std::move(splits));
}

std::string dataset_to_json(const Dataset& ds) {
    json doc;
    doc["name"] = ds.name;
    doc["n"] = ds.num_nodes();
    doc["num_classes"] = ds.num_classes;
    json rows = json::array();
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < ds.features.cols(); ++j) row.push_back(ds.features(i, j));
        rows.push_back(std::move(row));
    }
    doc["features"] = std::move(rows);
    doc["labels"] = ds.labels;
    json edges = json::array();
    for (const auto& e : ds.graph.edges()) edges.push_back({e.lo, e.hi});
    doc["edges"] = std::move(edges);
    if (!ds.splits.empty()) {
        json folds = json::array();
        for (const auto& f : ds.splits) {
            folds.push_back({{"train", mask_to_indices(f.train)}, {"val", mask_to_indices(f.val)}, {"test", mask_to_indices(f.test)}});
        }
        doc["splits"] = std::move(folds);
    }
    return doc.dump() + "\n";
}

Dataset load_dataset(const fs::path& path) {
    if (fs::is_directory(path)) return load_csv_dir(path);
    return parse_dataset_json(read_file(path), path.stem().string());
}

void save_dataset(const Dataset& ds, const fs::path& path) {
    if (path.extension() == ".json") {
        write_file(path, dataset_to_json(ds));
    } else {
        save_csv_dir(ds, path);
    }
}

}  // namespace nlsd
