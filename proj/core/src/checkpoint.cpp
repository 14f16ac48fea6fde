#include "nlsd/checkpoint.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nlsd/errors.hpp"

namespace nlsd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "nlsd-checkpoint";
constexpr int kVersion = 1;

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Elu: return "elu";
        case Activation::Identity: return "identity";
    }
    return "relu";
}

Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "elu") return Activation::Elu;
    if (s == "identity") return Activation::Identity;
    throw ParseError("activation", "expected relu, elu or identity");
}

json config_json(const TrainConfig& cfg) {
    const ModelConfig& m = cfg.model;
    return {{"variant", m.name()},
            {"d", m.d},
            {"hidden", m.hidden},
            {"layers", m.layers},
            {"activation", activation_name(m.activation)},
            {"shared_sheaf", m.shared_sheaf},
            {"use_w2", m.use_w2},
            {"use_sigma", m.use_sigma},
            {"mlp_phi_layers", m.mlp_phi_layers},
            {"mlp_phi_hidden", m.mlp_phi_hidden},
            {"threshold_init", m.threshold_init},
            {"input_dim", m.input_dim},
            {"num_classes", m.num_classes},
            {"lr", cfg.lr},
            {"weight_decay", cfg.weight_decay},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"seed", cfg.seed}};
}

template <class T>
T get(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ParseError(key, "wrong type");
    }
}

TrainConfig config_from(const json& doc, TrainConfig cfg) {
    if (!doc.is_object()) throw ParseError("config", "expected a JSON object");
    static const std::set<std::string> known = {
        "variant", "d", "hidden", "layers", "activation", "shared_sheaf", "use_w2", "use_sigma", "mlp_phi_layers",
        "mlp_phi_hidden", "threshold_init", "input_dim", "num_classes", "lr", "weight_decay", "max_epochs", "patience", "seed"};
    for (const auto& [k, v] : doc.items()) {
        if (!known.count(k)) throw ParseError(k, "unknown configuration key");
    }
    ModelConfig& m = cfg.model;
    if (doc.contains("variant")) {
        const ModelConfig named = ModelConfig::from_name(get<std::string>(doc["variant"], "variant"));
        m.architecture = named.architecture;
        m.variant = named.variant;
        m.maps = named.maps;
        m.normalization = named.normalization;
        m.psi = named.psi;
        m.thresholds = named.thresholds;
    }
    auto read = [&](const char* key, auto& field) {
        if (doc.contains(key)) field = get<std::decay_t<decltype(field)>>(doc[key], key);
    };
    read("d", m.d);
    read("hidden", m.hidden);
    read("layers", m.layers);
    if (doc.contains("activation")) m.activation = activation_from(get<std::string>(doc["activation"], "activation"));
    read("shared_sheaf", m.shared_sheaf);
    read("use_w2", m.use_w2);
    read("use_sigma", m.use_sigma);
    read("mlp_phi_layers", m.mlp_phi_layers);
    read("mlp_phi_hidden", m.mlp_phi_hidden);
    read("threshold_init", m.threshold_init);
    read("input_dim", m.input_dim);
    read("num_classes", m.num_classes);
    read("lr", cfg.lr);
    read("weight_decay", cfg.weight_decay);
    read("max_epochs", cfg.max_epochs);
    read("patience", cfg.patience);
    read("seed", cfg.seed);
    return cfg;
}

json matrix_json(const Dense& x) {
    json data = json::array();
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) data.push_back(x(i, j));
    return {{"rows", x.rows()}, {"cols", x.cols()}, {"data", std::move(data)}};
}

Dense matrix_from(const json& j, const std::string& field) {
    const auto rows = get<Eigen::Index>(j.at("rows"), field + ".rows");
    const auto cols = get<Eigen::Index>(j.at("cols"), field + ".cols");
    const json& data = j.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw ParseError(field, "data length does not match rows x cols");
    }
    Dense x(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) x(i, c) = get<double>(data[k++], field + ".data");
    return x;
}

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("document", e.what());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

TrainConfig train_config_from_json(const std::string& text, TrainConfig defaults) {
    return config_from(parse(text), std::move(defaults));
}

std::string checkpoint_to_json(const Checkpoint& ck) {
    json doc;
    doc["format"] = kFormat;
    doc["version"] = kVersion;
    TrainConfig cfg = ck.config;
    cfg.model = ck.model.config();
    doc["config"] = config_json(cfg);
    json params = json::array();
    for (const auto& p : ck.model.params()) {
        json entry = matrix_json(p.value);
        entry["name"] = p.name;
        params.push_back(std::move(entry));
    }
    doc["params"] = std::move(params);
    if (ck.optimizer) {
        const Adam& a = *ck.optimizer;
        json m = json::array(), v = json::array();
        for (const auto& x : a.m) m.push_back(matrix_json(x));
        for (const auto& x : a.v) v.push_back(matrix_json(x));
        doc["optimizer"] = {{"step", a.step},   {"lr", a.lr},   {"beta1", a.beta1},
                            {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
                            {"m", std::move(m)}, {"v", std::move(v)}};
    }
    return doc.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
    const json doc = parse(text);
    if (!doc.is_object() || doc.value("format", std::string()) != kFormat) throw ParseError("format", "not an nlsd checkpoint");
    if (!doc.contains("version") || doc["version"] != kVersion) throw ParseError("version", "unsupported checkpoint version");
    if (!doc.contains("config")) throw ParseError("config", "missing");
    if (!doc.contains("params") || !doc["params"].is_array()) throw ParseError("params", "missing");

    Checkpoint ck;
    ck.config = config_from(doc["config"], TrainConfig{});
    std::vector<NamedParam> params;
    try {
        for (const auto& p : doc["params"]) params.push_back({get<std::string>(p.at("name"), "params.name"), matrix_from(p, "params")});
    } catch (const json::out_of_range& e) {
        throw ParseError("params", e.what());
    }
    try {
        ck.model = Model(ck.config.model, std::move(params));
    } catch (const ConfigError& e) {
        throw ParseError("params", e.what());
    }
    if (auto it = doc.find("optimizer"); it != doc.end()) {
        Adam a;
        try {
            a.step = get<long>(it->at("step"), "optimizer.step");
            a.lr = get<double>(it->at("lr"), "optimizer.lr");
            a.beta1 = get<double>(it->at("beta1"), "optimizer.beta1");
            a.beta2 = get<double>(it->at("beta2"), "optimizer.beta2");
            a.eps = get<double>(it->at("eps"), "optimizer.eps");
            a.weight_decay = get<double>(it->at("weight_decay"), "optimizer.weight_decay");
            for (const auto& x : it->at("m")) a.m.push_back(matrix_from(x, "optimizer.m"));
            for (const auto& x : it->at("v")) a.v.push_back(matrix_from(x, "optimizer.v"));
        } catch (const json::out_of_range& e) {
            throw ParseError("optimizer", e.what());
        }
        ck.optimizer = std::move(a);
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << checkpoint_to_json(ck);
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_file(path)); }

}  // namespace nlsd
