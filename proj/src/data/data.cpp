#include "scrollnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "scrollnet/errors.hpp"

namespace scrollnet {

std::span<const double> LabeledDataset::sample(std::size_t i) const {
    const std::size_t d = sample_numel();
    return std::span<const double>(values).subspan(i * d, d);
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw InputError("empty batch");
    const std::size_t d = sample_numel();
    std::vector<double> out(indices.size() * d);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= size()) throw InputError("sample index out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[k] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(k * d));
    }
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor::from(std::move(shape), std::move(out));
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.sample_shape = sample_shape;
    out.num_classes = num_classes;
    out.normalization = normalization;
    const std::size_t d = sample_numel();
    out.values.reserve(indices.size() * d);
    for (auto i : indices) {
        auto s = sample(i);
        out.values.insert(out.values.end(), s.begin(), s.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

void LabeledDataset::validate() const {
    if (values.size() != size() * sample_numel()) throw InputError("dataset value count does not match sample shape");
    for (auto l : labels)
        if (l >= num_classes) throw InputError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
}

namespace {

// Channel layout: flat samples treat each feature as a channel.
std::pair<std::size_t, std::size_t> channel_layout(const Shape& s) {
    if (s.size() == 3) return {s[0], s[1] * s[2]};
    return {shape_numel(s), 1};
}

}  // namespace

Normalization compute_normalization(const LabeledDataset& data) {
    const auto [channels, area] = channel_layout(data.sample_shape);
    Normalization n;
    n.mean.assign(channels, 0.0);
    n.stddev.assign(channels, 0.0);
    if (data.size() == 0) {
        std::fill(n.stddev.begin(), n.stddev.end(), 1.0);
        return n;
    }
    const double count = static_cast<double>(data.size() * area);
    for (std::size_t s = 0; s < data.size(); ++s) {
        auto x = data.sample(s);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < area; ++i) n.mean[c] += x[c * area + i];
    }
    for (auto& m : n.mean) m /= count;
    for (std::size_t s = 0; s < data.size(); ++s) {
        auto x = data.sample(s);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < area; ++i) {
                const double d = x[c * area + i] - n.mean[c];
                n.stddev[c] += d * d;
            }
    }
    for (auto& v : n.stddev) {
        v = std::sqrt(v / count);
        if (!(v > 0.0)) v = 1.0;
    }
    return n;
}

void apply_normalization(LabeledDataset& data, const Normalization& stats) {
    const auto [channels, area] = channel_layout(data.sample_shape);
    if (stats.mean.size() != channels || stats.stddev.size() != channels)
        throw InputError("normalization statistics have " + std::to_string(stats.mean.size()) + " channels, data has " +
                         std::to_string(channels));
    const std::size_t d = data.sample_numel();
    for (std::size_t s = 0; s < data.size(); ++s)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < area; ++i) {
                double& v = data.values[s * d + c * area + i];
                v = (v - stats.mean[c]) / stats.stddev[c];
            }
    data.normalization = stats;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void finish(LabeledDataset& ds, const Normalization* stats) {
    std::size_t k = 0;
    for (auto l : ds.labels) k = std::max(k, l + 1);
    ds.num_classes = k;
    apply_normalization(ds, stats ? *stats : compute_normalization(ds));
}

}  // namespace

LabeledDataset load_csv(const std::string& path, const CsvOptions& options, const Normalization* stats) {
    const std::string text = read_file(path);
    LabeledDataset ds;
    std::size_t columns = 0;
    std::size_t pos = 0;
    bool first_line = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::size_t line_end = end;
        if (line_end > pos && text[line_end - 1] == '\r') --line_end;
        const std::size_t line_start = pos;
        pos = end + 1;
        if (first_line && options.header) {
            first_line = false;
            continue;
        }
        first_line = false;
        if (line_end == line_start) continue;

        std::vector<double> row;
        std::size_t field = line_start;
        std::size_t label = 0;
        while (true) {
            std::size_t comma = text.find(',', field);
            if (comma == std::string::npos || comma > line_end) comma = line_end;
            const char* b = text.data() + field;
            const char* e = text.data() + comma;
            while (b < e && (*b == ' ' || *b == '\t')) ++b;
            while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
            const bool last = comma == line_end;
            if (last) {
                long long v = 0;
                auto [p, ec] = std::from_chars(b, e, v);
                if (ec != std::errc() || p != e || v < 0)
                    throw ParseError("csv: label must be a non-negative integer", field);
                label = static_cast<std::size_t>(v);
            } else {
                double v = 0.0;
                auto [p, ec] = std::from_chars(b, e, v);
                if (ec != std::errc() || p != e || b == e) throw ParseError("csv: malformed number", field);
                row.push_back(v);
            }
            if (last) break;
            field = comma + 1;
        }
        if (row.empty()) throw ParseError("csv: row has no feature columns", line_start);
        if (columns == 0) columns = row.size();
        if (row.size() != columns)
            throw ParseError("csv: expected " + std::to_string(columns) + " features, found " + std::to_string(row.size()),
                             line_start);
        ds.values.insert(ds.values.end(), row.begin(), row.end());
        ds.labels.push_back(label);
    }
    if (ds.labels.empty()) throw ParseError("csv: no samples", text.size());
    ds.sample_shape = {columns};
    finish(ds, stats);
    return ds;
}

namespace {

struct ByteReader {
    const std::string& bytes;
    std::size_t pos = 0;

    std::uint32_t u32(const char* what) {
        if (pos + 4 > bytes.size()) throw ParseError(std::string("idx: truncated ") + what, bytes.size());
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[pos++]);
        return v;
    }
};

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path, const Normalization* stats) {
    const std::string images = read_file(images_path);
    const std::string labels = read_file(labels_path);

    ByteReader ir{images};
    if (const auto magic = ir.u32("image magic"); magic != 0x00000803u)
        throw ParseError("idx: bad image magic " + std::to_string(magic), 0);
    const std::size_t count = ir.u32("image count");
    const std::size_t rows = ir.u32("row count");
    const std::size_t cols = ir.u32("column count");
    if (count == 0 || rows == 0 || cols == 0) throw ParseError("idx: zero image dimension", 4);
    const std::size_t need = ir.pos + count * rows * cols;
    if (images.size() < need) throw ParseError("idx: image data truncated", images.size());

    ByteReader lr{labels};
    if (const auto magic = lr.u32("label magic"); magic != 0x00000801u)
        throw ParseError("idx: bad label magic " + std::to_string(magic), 0);
    if (lr.u32("label count") != count) throw ParseError("idx: label count differs from image count", 4);
    if (labels.size() < lr.pos + count) throw ParseError("idx: label data truncated", labels.size());

    LabeledDataset ds;
    ds.sample_shape = {1, rows, cols};
    ds.values.resize(count * rows * cols);
    for (std::size_t i = 0; i < ds.values.size(); ++i)
        ds.values[i] = static_cast<double>(static_cast<unsigned char>(images[ir.pos + i]));
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) ds.labels[i] = static_cast<unsigned char>(labels[lr.pos + i]);
    finish(ds, stats);
    return ds;
}

LabeledDataset load_dataset(const DatasetSource& source, const Normalization* stats) {
    switch (source.format) {
        case DataFormat::csv: return load_csv(source.path, CsvOptions{source.header}, stats);
        case DataFormat::idx_image: return load_idx(source.path, source.labels_path, stats);
    }
    throw ContractError("unknown data format");
}

TaskStream::TaskStream(std::vector<Task> tasks, std::vector<std::size_t> class_order)
    : tasks_(std::move(tasks)), class_order_(std::move(class_order)) {}

void TaskStream::check(std::size_t task) const {
    if (task >= tasks_.size()) throw ContractError("task " + std::to_string(task) + " not in stream");
}

const LabeledDataset& TaskStream::train(std::size_t task) const {
    check(task);
    if (observer_) observer_(DataSplit::train, task);
    return tasks_[task].train;
}

const LabeledDataset& TaskStream::test(std::size_t task) const {
    check(task);
    if (observer_) observer_(DataSplit::test, task);
    return tasks_[task].test;
}

const std::vector<std::size_t>& TaskStream::classes(std::size_t task) const {
    check(task);
    return tasks_[task].classes;
}

std::vector<std::size_t> TaskStream::head_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& t : tasks_) out.push_back(t.classes.size());
    return out;
}

const Shape& TaskStream::sample_shape() const {
    if (tasks_.empty()) throw ContractError("empty task stream");
    return tasks_.front().train.sample_shape;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(i, rng)]);
    return idx;
}

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
    if (n == 0) throw ContractError("uniform_index over an empty range");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t range = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return static_cast<std::size_t>(v % range);
}

TaskStream split_classes(const LabeledDataset& train, const LabeledDataset& test, std::size_t num_tasks,
                         std::uint64_t seed) {
    const std::size_t k = std::max(train.num_classes, test.num_classes);
    if (num_tasks == 0) throw ConfigError("number of tasks must be at least 1");
    if (num_tasks > k)
        throw ConfigError("cannot split " + std::to_string(k) + " classes into " + std::to_string(num_tasks) + " tasks");
    if (train.sample_shape != test.sample_shape) throw ConfigError("train and test sample shapes differ");

    std::mt19937_64 rng(seed);
    const auto order = shuffled_indices(k, rng);

    std::vector<Task> tasks(num_tasks);
    const std::size_t base = k / num_tasks;
    const std::size_t extra = k % num_tasks;
    std::vector<std::size_t> task_of(k), local_of(k);
    std::size_t cursor = 0;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        const std::size_t count = base + (t < extra ? 1 : 0);
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t cls = order[cursor++];
            tasks[t].classes.push_back(cls);
            task_of[cls] = t;
            local_of[cls] = j;
        }
    }
    auto distribute = [&](const LabeledDataset& src, auto member) {
        std::vector<std::vector<std::size_t>> picks(num_tasks);
        for (std::size_t i = 0; i < src.size(); ++i) picks[task_of[src.labels[i]]].push_back(i);
        for (std::size_t t = 0; t < num_tasks; ++t) {
            LabeledDataset part = src.subset(picks[t]);
            for (auto& l : part.labels) l = local_of[l];
            part.num_classes = tasks[t].classes.size();
            tasks[t].*member = std::move(part);
        }
    };
    distribute(train, &Task::train);
    distribute(test, &Task::test);
    return TaskStream(std::move(tasks), order);
}

TaskStream synthetic_gaussian_tasks(const SyntheticSpec& spec) {
    if (spec.separation < 0.0) throw ConfigError("synthetic separation must be non-negative");
    if (spec.dim == 0 || spec.classes_per_task == 0 || spec.tasks == 0)
        throw ConfigError("synthetic stream needs positive dim, classes_per_task and tasks");
    const std::size_t k = spec.classes_per_task * spec.tasks;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> means(k, std::vector<double>(spec.dim));
    for (auto& m : means) {
        double norm = 0.0;
        for (auto& v : m) {
            v = gauss(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : m) v = norm > 0.0 ? v / norm * spec.separation : 0.0;
    }
    auto draw = [&](std::size_t per_class) {
        LabeledDataset ds;
        ds.sample_shape = {spec.dim};
        ds.num_classes = k;
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t i = 0; i < per_class; ++i) {
                for (std::size_t j = 0; j < spec.dim; ++j) ds.values.push_back(means[c][j] + spec.noise * gauss(rng));
                ds.labels.push_back(c);
            }
        return ds;
    };
    LabeledDataset train = draw(spec.train_per_class);
    LabeledDataset test = draw(spec.test_per_class);
    return split_classes(train, test, spec.tasks, spec.seed);
}

}  // namespace scrollnet
