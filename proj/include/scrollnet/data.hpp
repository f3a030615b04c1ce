#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scrollnet/tensor.hpp"

namespace scrollnet {

/// Per-channel affine normalization (flat samples: one channel per feature).
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool empty() const noexcept { return mean.empty(); }
};

struct LabeledDataset {
    Shape sample_shape;          // (D) or (C,H,W)
    std::vector<double> values;  // size() * sample_numel(), row-major
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    Normalization normalization;  // statistics applied to `values`, if any

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_numel() const { return shape_numel(sample_shape); }
    std::span<const double> sample(std::size_t i) const;

    /// Stack the chosen samples into a B×sample_shape tensor.
    Tensor batch(std::span<const std::size_t> indices) const;
    LabeledDataset subset(std::span<const std::size_t> indices) const;

    /// Throws InputError when labels fall outside [0, num_classes) or the
    /// value count does not match.
    void validate() const;
};

/// Mean and (population) standard deviation per channel; zero spread maps to 1.
Normalization compute_normalization(const LabeledDataset& data);
void apply_normalization(LabeledDataset& data, const Normalization& stats);

struct CsvOptions {
    bool header = false;
};

/// One row per sample, features as decimals, final column an integer label.
/// Normalizes with `stats` when given, otherwise with its own statistics.
/// Throws ParseError (with byte offset) on malformed input.
LabeledDataset load_csv(const std::string& path, const CsvOptions& options = {}, const Normalization* stats = nullptr);

/// Classic IDX pair: images (magic 0x00000803, u8, N×rows×cols) and labels
/// (magic 0x00000801, u8). Samples are shaped (1,rows,cols).
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const Normalization* stats = nullptr);

enum class DataFormat { csv, idx_image };

struct DatasetSource {
    DataFormat format = DataFormat::csv;
    std::string path;         // CSV file, or IDX images file
    std::string labels_path;  // IDX only
    bool header = false;      // CSV only
};

LabeledDataset load_dataset(const DatasetSource& source, const Normalization* stats = nullptr);

/// One incremental step. Labels inside `train`/`test` are local to the task;
/// `classes[j]` is the global class of local label j.
struct Task {
    LabeledDataset train;
    LabeledDataset test;
    std::vector<std::size_t> classes;
};

enum class DataSplit { train, test };

/// Ordered tasks with pairwise disjoint class sets. Access goes through
/// `train()`/`test()` so that an observer can audit which data a run reads.
class TaskStream {
public:
    TaskStream() = default;
    TaskStream(std::vector<Task> tasks, std::vector<std::size_t> class_order);

    std::size_t size() const noexcept { return tasks_.size(); }
    const LabeledDataset& train(std::size_t task) const;
    const LabeledDataset& test(std::size_t task) const;
    const std::vector<std::size_t>& classes(std::size_t task) const;
    std::size_t classes_in(std::size_t task) const { return classes(task).size(); }
    const std::vector<std::size_t>& class_order() const noexcept { return class_order_; }
    std::vector<std::size_t> head_sizes() const;
    const Shape& sample_shape() const;

    using Observer = std::function<void(DataSplit, std::size_t task)>;
    void set_observer(Observer observer) const { observer_ = std::move(observer); }

    /// Global class of a local label in `task`.
    std::size_t global_class(std::size_t task, std::size_t local) const { return classes(task).at(local); }

private:
    void check(std::size_t task) const;
    std::vector<Task> tasks_;
    std::vector<std::size_t> class_order_;
    mutable Observer observer_;
};

/// Permute the classes with a seeded RNG and cut them into `num_tasks`
/// contiguous groups; when K is not divisible by T the earliest tasks take
/// one extra class each.
TaskStream split_classes(const LabeledDataset& train, const LabeledDataset& test, std::size_t num_tasks,
                         std::uint64_t seed);

struct SyntheticSpec {
    std::size_t classes_per_task = 2;
    std::size_t tasks = 5;
    std::size_t dim = 32;
    double separation = 3.0;  // radius of the sphere the class means live on
    double noise = 1.0;       // isotropic standard deviation
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    std::uint64_t seed = 0;
};

/// Isotropic Gaussian classes with means drawn uniformly on a sphere, split
/// into tasks with `split_classes`. Values are left unnormalized.
TaskStream synthetic_gaussian_tasks(const SyntheticSpec& spec);

/// Fisher-Yates permutation of 0..n-1 driven by `rng`. Uses the raw engine
/// output (no std distributions) so the sequence is library-independent.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

/// Uniform draw in [0, n) from the raw engine output.
std::size_t uniform_index(std::size_t n, std::mt19937_64& rng);

}  // namespace scrollnet
