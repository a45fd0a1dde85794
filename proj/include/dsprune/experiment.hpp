#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsprune/data.hpp"
#include "dsprune/model.hpp"
#include "dsprune/pruning.hpp"
#include "dsprune/saliency.hpp"

namespace dsprune {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    float lr = 0.01f;
    float momentum = 0.9f;
    std::uint64_t seed = 1;
    int finetune_epochs = 5;
    float finetune_lr = 0.001f;
    double sparsity_ratio = 0.4;
    ScoreMethod score_method = ScoreMethod::DSS;
    int sample_cap = 0;  // stats samples per domain; 0 = entire dataset
};

void validate_config(const TrainConfig& cfg);

/// One pruning experiment outcome. Accuracies are fractions in [0,1].
struct MetricsRecord {
    std::string method;
    double sparsity = 0.0;
    std::uint64_t seed = 0;
    double source_acc = 0.0;
    double target_before_ft = 0.0;
    double target_after_ft = 0.0;
    double wall_time_s = 0.0;
};

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

/// SGD training over epochs * ceil(N/batch) steps, in place. Returns the
/// per-epoch mean loss. Deterministic for a fixed config seed.
std::vector<float> train(Model& model, const Dataset& source, const TrainConfig& cfg);

/// Same loop with finetune_epochs / finetune_lr (post-pruning recovery).
std::vector<float> finetune(Model& model, const Dataset& source, const TrainConfig& cfg);

/// Fraction of samples whose argmax logit matches the label.
double evaluate(const Model& model, const Dataset& ds);

// ---------------------------------------------------------------------------
// Checkpoints ("DSCK": version, build seed, architecture, raw f32 parameters)
// ---------------------------------------------------------------------------

void save_checkpoint(const Model& model, const std::string& path, std::uint64_t seed = 0);
Model load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr);

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

std::string metrics_csv_header();

/// Writes header + rows; appends (skipping the header) when the file already
/// exists with the documented header.
void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path);

std::vector<MetricsRecord> load_metrics(const std::string& path);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineOptions {
    std::string out_dir;  // when set: checkpoints, plan and metrics CSV land here
    std::ostream* log = nullptr;  // one-line stage summaries

    // Stage reuse for sweeps: training and stats collection are
    // deterministic, so a sweep may hand identical precomputed results to
    // every (ratio, method) cell instead of recomputing them.
    const Model* pretrained = nullptr;
    const std::map<std::string, ActivationStats>* source_stats = nullptr;
    const std::map<std::string, ActivationStats>* target_stats = nullptr;
};

/// train -> collect stats on both domains -> score -> select bottom-k per
/// prunable layer -> prune -> evaluate target -> finetune on source ->
/// evaluate source and target. Persists artifacts per stage when out_dir is
/// set and returns the metrics record.
MetricsRecord run_pipeline(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                           const PipelineOptions& opts = {});

struct SweepResult {
    std::vector<MetricsRecord> records;
    std::vector<std::string> failures;  // "<method> r=<ratio> seed=<seed>: <error>"
};

/// Full (ratio, method, seed) cross product. Each seed's training run and
/// activation stats are computed once and shared by its cells (training is
/// deterministic, so this matches retraining per cell bit for bit). Failed
/// cells are recorded and skipped; with out_dir set, each completed cell
/// appends its record to out_dir/metrics.csv.
SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& ratios,
                      const std::vector<ScoreMethod>& methods,
                      const std::vector<std::uint64_t>& seeds, const Dataset& source,
                      const Dataset& target, const std::string& out_dir = "",
                      std::ostream* log = nullptr);

}  // namespace dsprune
