#pragma once

#include <cstdint>
#include <string>

#include "dsprune/data.hpp"
#include "dsprune/experiment.hpp"

namespace dsprune {

/// Where the experiment datasets come from. "idx" reads MNIST IDX files;
/// "synthetic" generates the built-in digit fixture so everything runs
/// without external downloads.
struct DataConfig {
    std::string source = "synthetic";  // "idx" | "synthetic"
    std::string train_images;          // idx mode paths
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    int train_subset = 10000;
    int eval_subset = 2000;
    std::string background = "procedural";  // "procedural" | "dir:<path>"
    std::uint64_t mnistm_seed = 7;
    std::uint64_t digits_seed = 11;  // synthetic mode corpus seed
};

struct RunConfig {
    TrainConfig train;
    DataConfig data;
    std::string out_dir = "runs";
};

/// Parses the plain-text `key = value` config format (dotted keys, `#`
/// comments). Unknown keys are rejected.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

/// Applies one `key=value` override (same key namespace as the file).
void apply_override(RunConfig& cfg, const std::string& key_eq_value);

/// Sanity-checks the full config (train schedule and data settings).
void validate(const RunConfig& cfg);

/// Source domain (3-channel digits) and target domain (color-blended digits
/// built from held-out samples) per the data config.
struct DomainData {
    Dataset source;
    Dataset target;
};

DomainData load_domain_data(const DataConfig& data);

}  // namespace dsprune
