#include "scrollnet/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "scrollnet/errors.hpp"

namespace scrollnet {

using nlohmann::json;

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::synthetic: return "synthetic";
        case DatasetKind::csv: return "csv";
        case DatasetKind::idx: return "idx";
    }
    return "?";
}

std::string_view to_string(ArchPreset preset) {
    switch (preset) {
        case ArchPreset::mlp: return "mlp";
        case ArchPreset::cnn: return "cnn";
        case ArchPreset::custom: return "custom";
    }
    return "?";
}

namespace {

// Object reader that remembers which keys were consumed so leftovers can be
// reported as unknown.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    Node child(const std::string& key) { return Node(raw(key), join(key)); }

    std::size_t count(const std::string& key, std::size_t fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_number_unsigned()) throw ConfigError(join(key) + ": expected a non-negative integer");
        return v.get<std::size_t>();
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_number_unsigned()) throw ConfigError(join(key) + ": expected a non-negative integer");
        return v.get<std::uint64_t>();
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_number()) throw ConfigError(join(key) + ": expected a number");
        return v.get<double>();
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_boolean()) throw ConfigError(join(key) + ": expected true or false");
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_string()) throw ConfigError(join(key) + ": expected a string");
        return v.get<std::string>();
    }

    std::string required_text(const std::string& key) {
        if (!has(key)) throw ConfigError(join(key) + ": required");
        return text(key, "");
    }

    std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw(key);
        if (!v.is_array()) throw ConfigError(join(key) + ": expected an array of non-negative integers");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_unsigned())
                throw ConfigError(join(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
            out.push_back(v[i].get<std::size_t>());
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError(join(key) + ": unknown key");
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

DatasetConfig parse_dataset(Node n) {
    DatasetConfig d;
    const std::string kind = n.text("kind", "synthetic");
    d.tasks = n.count("tasks", d.tasks);
    if (n.has("seed")) d.seed = n.u64("seed", 0);
    if (kind == "synthetic") {
        d.kind = DatasetKind::synthetic;
        auto& s = d.synthetic;
        s.classes_per_task = n.count("classes_per_task", s.classes_per_task);
        s.dim = n.count("dim", s.dim);
        s.separation = n.number("separation", s.separation);
        s.noise = n.number("noise", s.noise);
        s.train_per_class = n.count("train_per_class", s.train_per_class);
        s.test_per_class = n.count("test_per_class", s.test_per_class);
    } else if (kind == "csv") {
        d.kind = DatasetKind::csv;
        d.train.format = d.test.format = DataFormat::csv;
        d.train.path = n.required_text("train");
        d.test.path = n.required_text("test");
        d.train.header = d.test.header = n.flag("header", false);
    } else if (kind == "idx") {
        d.kind = DatasetKind::idx;
        d.train.format = d.test.format = DataFormat::idx_image;
        d.train.path = n.required_text("train_images");
        d.train.labels_path = n.required_text("train_labels");
        d.test.path = n.required_text("test_images");
        d.test.labels_path = n.required_text("test_labels");
    } else {
        throw ConfigError(n.join("kind") + ": unknown dataset kind '" + kind + "' (expected synthetic, csv or idx)");
    }
    d.synthetic.tasks = d.tasks;
    n.finish();
    return d;
}

ArchConfig parse_arch(Node n) {
    ArchConfig a;
    const std::string preset = n.text("preset", n.has("layers") ? "custom" : "mlp");
    if (preset == "mlp") {
        a.preset = ArchPreset::mlp;
        a.hidden = n.counts("hidden", a.hidden);
        a.norm = n.flag("norm", a.norm);
    } else if (preset == "cnn") {
        a.preset = ArchPreset::cnn;
        a.hidden = n.counts("channels", {16, 32});
        a.norm = n.flag("norm", a.norm);
    } else if (preset == "custom") {
        a.preset = ArchPreset::custom;
        a.hidden.clear();
        if (!n.has("layers")) throw ConfigError(n.join("layers") + ": required for a custom architecture");
        const auto& layers = n.raw("layers");
        if (!layers.is_array()) throw ConfigError(n.join("layers") + ": expected an array");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Node l(layers[i], n.join("layers") + "[" + std::to_string(i) + "]");
            LayerSpec s;
            try {
                s.kind = parse_layer_kind(l.required_text("kind"));
            } catch (const ConfigError& e) {
                throw ConfigError(l.join("kind") + ": " + e.what());
            }
            s.out = l.count("out", 0);
            s.kernel = l.count("kernel", s.kernel);
            s.stride = l.count("stride", s.stride);
            s.padding = l.count("padding", s.padding);
            l.finish();
            a.layers.push_back(s);
        }
    } else {
        throw ConfigError(n.join("preset") + ": unknown preset '" + preset + "' (expected mlp, cnn or custom)");
    }
    n.finish();
    return a;
}

StrategyConfig parse_strategy_config(Node n) {
    StrategyConfig s;
    try {
        s.kind = parse_strategy(n.text("name", "ft"));
    } catch (const ConfigError& e) {
        throw ConfigError(n.join("name") + ": " + e.what());
    }
    s.lambda = n.number("lambda", s.lambda);
    s.temperature = n.number("temperature", s.temperature);
    s.sample_cap = n.count("sample_cap", s.sample_cap);
    s.memory_budget = n.count("memory_budget", s.memory_budget);
    s.mix_ratio = n.number("mix_ratio", s.mix_ratio);
    n.finish();
    return s;
}

void parse_train(Node n, TrainConfig& t) {
    t.epochs = n.count("epochs", t.epochs);
    t.lr = n.number("lr", t.lr);
    t.lr_decay = n.number("lr_decay", t.lr_decay);
    t.milestones = n.counts("milestones", t.milestones);
    t.batch_size = n.count("batch_size", t.batch_size);
    t.momentum = n.number("momentum", t.momentum);
    t.weight_decay = n.number("weight_decay", t.weight_decay);
    t.width_diagnostics = n.flag("width_diagnostics", t.width_diagnostics);
    n.finish();
}

std::string location(const std::string& text, std::size_t byte) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

json layer_json(const LayerSpec& l) {
    json j{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) j["out"] = l.out;
    if (l.kind == LayerKind::conv) {
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
    }
    return j;
}

}  // namespace

std::vector<LayerSpec> ExperimentConfig::body() const {
    std::vector<LayerSpec> out;
    switch (arch.preset) {
        case ArchPreset::mlp:
            for (auto h : arch.hidden) {
                out.push_back({LayerKind::linear, h});
                if (arch.norm) out.push_back({LayerKind::norm});
                out.push_back({LayerKind::relu});
            }
            break;
        case ArchPreset::cnn:
            for (auto c : arch.hidden) {
                out.push_back({LayerKind::conv, c, 3, 1, 1});
                if (arch.norm) out.push_back({LayerKind::norm});
                out.push_back({LayerKind::relu});
            }
            out.push_back({LayerKind::pool});
            break;
        case ArchPreset::custom: out = arch.layers; break;
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (dataset.tasks == 0) throw ConfigError("dataset.tasks must be at least 1");
    if (dataset.kind == DatasetKind::synthetic) {
        if (dataset.synthetic.classes_per_task == 0) throw ConfigError("dataset.classes_per_task must be at least 1");
        if (dataset.synthetic.dim == 0) throw ConfigError("dataset.dim must be at least 1");
        if (dataset.synthetic.separation < 0.0) throw ConfigError("dataset.separation must be non-negative");
        if (dataset.synthetic.noise < 0.0) throw ConfigError("dataset.noise must be non-negative");
        if (dataset.synthetic.train_per_class == 0) throw ConfigError("dataset.train_per_class must be at least 1");
        if (dataset.synthetic.test_per_class == 0) throw ConfigError("dataset.test_per_class must be at least 1");
    }
    if (arch.preset == ArchPreset::cnn && dataset.kind != DatasetKind::idx)
        throw ConfigError("model.preset: cnn needs image samples (dataset.kind idx)");
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds: duplicate seed");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    train.validate();

    // Architecture check before any compute. The sample shape of file datasets
    // is unknown until they are read, so only widths are checked for those.
    const auto layers = body();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if ((l.kind == LayerKind::conv || l.kind == LayerKind::linear) && l.out % train.splits != 0)
            throw ConfigError("model: layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) +
                              "): width " + std::to_string(l.out) + " not divisible by splits N=" +
                              std::to_string(train.splits));
    }
    if (dataset.kind == DatasetKind::synthetic) {
        ModelSpec spec{{dataset.synthetic.dim}, layers, std::vector<std::size_t>(dataset.tasks, 1), train.splits};
        try {
            (void)SlimmableModel::build(spec, 0);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }
}

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config syntax error at " + location(text, e.byte == 0 ? 0 : e.byte - 1));
    }
    ExperimentConfig c;
    Node root(j, "");
    if (root.has("dataset")) c.dataset = parse_dataset(root.child("dataset"));
    if (root.has("model")) c.arch = parse_arch(root.child("model"));
    c.train.splits = root.count("splits", c.train.splits);
    c.train.step = root.count("step", c.train.step);
    if (root.has("strategy")) c.train.strategy = parse_strategy_config(root.child("strategy"));
    if (root.has("train")) parse_train(root.child("train"), c.train);
    if (root.has("seeds")) {
        const auto& s = root.raw("seeds");
        if (!s.is_array()) throw ConfigError("seeds: expected an array of non-negative integers");
        c.seeds.clear();
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!s[i].is_number_unsigned())
                throw ConfigError("seeds[" + std::to_string(i) + "]: expected a non-negative integer");
            c.seeds.push_back(s[i].get<std::uint64_t>());
        }
    }
    c.output_dir = root.text("output_dir", c.output_dir);
    c.checkpoints = root.flag("checkpoints", c.checkpoints);
    root.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    ExperimentConfig c = parse_config(buf.str());
    // data paths are relative to the config file
    const auto base = std::filesystem::path(path).parent_path();
    for (auto* p : {&c.dataset.train.path, &c.dataset.train.labels_path, &c.dataset.test.path,
                    &c.dataset.test.labels_path})
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    return c;
}

std::string dump_config(const ExperimentConfig& c) {
    json j;
    auto& d = j["dataset"];
    d["kind"] = to_string(c.dataset.kind);
    d["tasks"] = c.dataset.tasks;
    if (c.dataset.seed) d["seed"] = *c.dataset.seed;
    switch (c.dataset.kind) {
        case DatasetKind::synthetic:
            d["classes_per_task"] = c.dataset.synthetic.classes_per_task;
            d["dim"] = c.dataset.synthetic.dim;
            d["separation"] = c.dataset.synthetic.separation;
            d["noise"] = c.dataset.synthetic.noise;
            d["train_per_class"] = c.dataset.synthetic.train_per_class;
            d["test_per_class"] = c.dataset.synthetic.test_per_class;
            break;
        case DatasetKind::csv:
            d["train"] = c.dataset.train.path;
            d["test"] = c.dataset.test.path;
            d["header"] = c.dataset.train.header;
            break;
        case DatasetKind::idx:
            d["train_images"] = c.dataset.train.path;
            d["train_labels"] = c.dataset.train.labels_path;
            d["test_images"] = c.dataset.test.path;
            d["test_labels"] = c.dataset.test.labels_path;
            break;
    }
    auto& m = j["model"];
    m["preset"] = to_string(c.arch.preset);
    if (c.arch.preset == ArchPreset::custom) {
        m["layers"] = json::array();
        for (const auto& l : c.arch.layers) m["layers"].push_back(layer_json(l));
    } else {
        m[c.arch.preset == ArchPreset::mlp ? "hidden" : "channels"] = c.arch.hidden;
        m["norm"] = c.arch.norm;
    }
    j["splits"] = c.train.splits;
    j["step"] = c.train.step;
    const auto& s = c.train.strategy;
    j["strategy"] = {{"name", to_string(s.kind)},   {"lambda", s.effective_lambda()},
                     {"temperature", s.temperature}, {"sample_cap", s.sample_cap},
                     {"memory_budget", s.memory_budget}, {"mix_ratio", s.mix_ratio}};
    const auto& t = c.train;
    j["train"] = {{"epochs", t.epochs},         {"lr", t.lr},
                  {"lr_decay", t.lr_decay},     {"milestones", t.milestones},
                  {"batch_size", t.batch_size}, {"momentum", t.momentum},
                  {"weight_decay", t.weight_decay}, {"width_diagnostics", t.width_diagnostics}};
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    j["checkpoints"] = c.checkpoints;
    return j.dump(2) + "\n";
}

TaskStream build_stream(const DatasetConfig& dataset, std::uint64_t run_seed) {
    const std::uint64_t seed = dataset.seed.value_or(run_seed);
    if (dataset.kind == DatasetKind::synthetic) {
        SyntheticSpec spec = dataset.synthetic;
        spec.tasks = dataset.tasks;
        spec.seed = seed;
        return synthetic_gaussian_tasks(spec);
    }
    const LabeledDataset train = load_dataset(dataset.train);
    const LabeledDataset test = load_dataset(dataset.test, &train.normalization);
    return split_classes(train, test, dataset.tasks, seed);
}

}  // namespace scrollnet
