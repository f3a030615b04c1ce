#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scrollnet/data.hpp"
#include "scrollnet/slimmable.hpp"
#include "scrollnet/trainer.hpp"

namespace scrollnet {

enum class DatasetKind { synthetic, csv, idx };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::synthetic;
    std::size_t tasks = 5;
    SyntheticSpec synthetic;             // kind == synthetic; tasks copied in
    std::optional<std::uint64_t> seed;   // data/class-order seed; defaults to the run seed
    DatasetSource train;                 // file kinds
    DatasetSource test;
};

enum class ArchPreset { mlp, cnn, custom };

struct ArchConfig {
    ArchPreset preset = ArchPreset::mlp;
    std::vector<std::size_t> hidden{64, 64};  // mlp widths or cnn channels
    bool norm = true;
    std::vector<LayerSpec> layers;  // custom
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ArchConfig arch;
    TrainConfig train;  // carries splits, step and the strategy
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "runs/default";
    bool checkpoints = true;

    /// Body layers the architecture expands to.
    std::vector<LayerSpec> body() const;
    void validate() const;
};

/// Parses and validates a JSON config. Unknown keys, wrong types and invalid
/// values raise ConfigError naming the key path; JSON syntax errors raise it
/// with the line and column.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Fully resolved config (every default filled in), pretty-printed.
std::string dump_config(const ExperimentConfig& config);

/// Task stream for one seed.
TaskStream build_stream(const DatasetConfig& dataset, std::uint64_t run_seed);

std::string_view to_string(DatasetKind kind);
std::string_view to_string(ArchPreset preset);

}  // namespace scrollnet
