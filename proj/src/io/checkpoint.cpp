#include "scrollnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "scrollnet/errors.hpp"

namespace scrollnet {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

json model_json(const SlimmableModel& model) {
    const auto& spec = model.spec();
    json j;
    j["input_shape"] = spec.input_shape;
    j["head_classes"] = spec.head_classes;
    j["splits"] = spec.splits;
    j["offset"] = model.offset();
    j["norm_momentum"] = model.norm_momentum;
    j["norm_eps"] = model.norm_eps;
    auto& layers = j["layers"];
    layers = json::array();
    for (const auto& l : spec.layers)
        layers.push_back({{"kind", to_string(l.kind)},
                          {"out", l.out},
                          {"kernel", l.kernel},
                          {"stride", l.stride},
                          {"padding", l.padding}});
    auto& params = j["parameters"];
    params = json::array();
    const auto ps = model.parameters();
    for (std::size_t p = 0; p < ps.size(); ++p)
        params.push_back({{"name", model.parameter_names()[p]},
                          {"values", std::vector<double>(ps[p].data().begin(), ps[p].data().end())}});
    auto& stats = j["norm_stats"];
    stats = json::array();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind != LayerKind::norm) continue;
        for (std::size_t n = 1; n <= spec.splits; ++n) {
            const auto& s = model.norm_state(i, n).stats;
            stats.push_back({{"layer", i}, {"width", n}, {"mean", s.mean}, {"var", s.var}});
        }
    }
    return j;
}

SlimmableModel model_from(const json& j) {
    ModelSpec spec;
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.head_classes = j.at("head_classes").get<std::vector<std::size_t>>();
    spec.splits = j.at("splits").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
        LayerSpec ls;
        ls.kind = parse_layer_kind(l.at("kind").get<std::string>());
        ls.out = l.at("out").get<std::size_t>();
        ls.kernel = l.at("kernel").get<std::size_t>();
        ls.stride = l.at("stride").get<std::size_t>();
        ls.padding = l.at("padding").get<std::size_t>();
        spec.layers.push_back(ls);
    }
    SlimmableModel model = SlimmableModel::build(std::move(spec), 0);
    model.norm_momentum = j.at("norm_momentum").get<double>();
    model.norm_eps = j.at("norm_eps").get<double>();
    model.set_offset(j.at("offset").get<std::size_t>());

    const auto& params = j.at("parameters");
    auto ps = model.parameters();
    if (params.size() != ps.size()) throw ParseError("checkpoint: parameter count mismatch", 0);
    for (std::size_t p = 0; p < ps.size(); ++p) {
        if (params[p].at("name").get<std::string>() != model.parameter_names()[p])
            throw ParseError("checkpoint: unexpected parameter " + params[p].at("name").get<std::string>(), 0);
        const auto values = params[p].at("values").get<std::vector<double>>();
        auto dst = ps[p].mutable_data();
        if (values.size() != dst.size())
            throw ParseError("checkpoint: size mismatch for " + model.parameter_names()[p], 0);
        std::copy(values.begin(), values.end(), dst.begin());
    }
    for (const auto& s : j.at("norm_stats")) {
        auto& st = model.norm_state(s.at("layer").get<std::size_t>(), s.at("width").get<std::size_t>()).stats;
        st.mean = s.at("mean").get<std::vector<double>>();
        st.var = s.at("var").get<std::vector<double>>();
    }
    return model;
}

json importance_json(const ImportanceState& s) {
    return {{"weights", s.weights}, {"anchor", s.anchor}, {"lambda", s.lambda}};
}

ImportanceState importance_from(const json& j) {
    ImportanceState s;
    s.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    s.anchor = j.at("anchor").get<std::vector<std::vector<double>>>();
    s.lambda = j.at("lambda").get<double>();
    return s;
}

json memory_json(const ExemplarMemory& memory) {
    json j;
    j["budget"] = memory.budget();
    auto& classes = j["classes"];
    classes = json::array();
    for (const auto& [cls, list] : memory.per_class()) {
        json entry{{"class", cls}, {"exemplars", json::array()}};
        for (const auto& e : list)
            entry["exemplars"].push_back({{"task", e.task}, {"label", e.label}, {"input", e.input}});
        classes.push_back(std::move(entry));
    }
    return j;
}

ExemplarMemory memory_from(const json& j) {
    ExemplarMemory memory(j.at("budget").get<std::size_t>());
    for (const auto& entry : j.at("classes")) {
        auto& list = memory.per_class()[entry.at("class").get<std::size_t>()];
        for (const auto& e : entry.at("exemplars"))
            list.push_back(Exemplar{e.at("input").get<std::vector<double>>(), e.at("task").get<std::size_t>(),
                                    e.at("label").get<std::size_t>()});
    }
    return memory;
}

json run_json(const RunState& run) {
    json j;
    j["version"] = kVersion;
    j["model"] = model_json(run.model);
    j["scroll"] = {{"splits", run.scroll.splits},
                   {"step", run.scroll.step},
                   {"task", run.scroll.task},
                   {"offset", run.scroll.offset}};
    auto& strategy = j["strategy"];
    strategy["importance"] = run.strategy.importance ? importance_json(*run.strategy.importance) : json(nullptr);
    if (run.strategy.teacher)
        strategy["teacher"] = {{"model", model_json(run.strategy.teacher->model)},
                               {"temperature", run.strategy.teacher->temperature},
                               {"heads", run.strategy.teacher->heads}};
    else
        strategy["teacher"] = nullptr;
    strategy["memory"] = memory_json(run.strategy.memory);
    j["metrics"] = {{"task_aware", run.metrics.task_aware}, {"task_agnostic", run.metrics.task_agnostic}};
    std::ostringstream rng;
    rng << run.rng;
    j["rng"] = rng.str();
    j["task"] = run.task;
    j["epoch"] = run.epoch;
    j["velocity"] = run.velocity;
    return j;
}

RunState run_from(const json& j) {
    if (j.at("version").get<int>() != kVersion)
        throw ParseError("checkpoint: unsupported version " + j.at("version").dump(), 0);
    const auto& sc = j.at("scroll");
    ScrollState scroll{sc.at("splits").get<std::size_t>(), sc.at("step").get<std::size_t>(),
                       sc.at("task").get<std::size_t>(), sc.at("offset").get<std::size_t>()};
    scroll.validate();
    RunState run{model_from(j.at("model")), scroll, StrategyState{}, MetricsReport{}, std::mt19937_64{}, 0, 0, {}};
    const auto& st = j.at("strategy");
    if (!st.at("importance").is_null()) run.strategy.importance = importance_from(st.at("importance"));
    if (!st.at("teacher").is_null())
        run.strategy.teacher = TeacherSnapshot{model_from(st.at("teacher").at("model")),
                                               st.at("teacher").at("temperature").get<double>(),
                                               st.at("teacher").at("heads").get<std::size_t>()};
    run.strategy.memory = memory_from(st.at("memory"));
    run.metrics.task_aware = j.at("metrics").at("task_aware").get<std::vector<std::vector<double>>>();
    run.metrics.task_agnostic = j.at("metrics").at("task_agnostic").get<std::vector<std::vector<double>>>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> run.rng;
    if (!rng) throw ParseError("checkpoint: malformed rng state", 0);
    run.task = j.at("task").get<std::size_t>();
    run.epoch = j.at("epoch").get<std::size_t>();
    run.velocity = j.at("velocity").get<std::vector<std::vector<double>>>();
    return run;
}

json parse_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what(), e.byte);
    }
}

template <typename F>
auto guarded(F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what(), 0);
    }
}

}  // namespace

std::string serialize_model(const SlimmableModel& model) { return model_json(model).dump(); }

SlimmableModel deserialize_model(const std::string& text) {
    const json j = parse_text(text);
    return guarded([&] { return model_from(j); });
}

std::string serialize_run(const RunState& run) { return run_json(run).dump(); }

RunState deserialize_run(const std::string& text) {
    const json j = parse_text(text);
    return guarded([&] { return run_from(j); });
}

void save_checkpoint(const RunState& run, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write checkpoint " + path);
        out << serialize_run(run);
        if (!out) throw InputError("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InputError("cannot finalize checkpoint " + path);
}

RunState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_run(buf.str());
}

}  // namespace scrollnet
