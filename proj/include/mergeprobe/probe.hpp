#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/checkpoint.hpp"
#include "mergeprobe/dataset.hpp"
#include "mergeprobe/toy_model.hpp"

namespace mergeprobe {

/// One probing task: labeled splits sharing a feature space. In task manifest
/// files the splits hold raw model inputs; run_probe_suite maps them through
/// extract_representation before training.
struct ProbeTask {
    std::string task_id;
    std::string phenomenon;
    LabeledDataset train, dev, test;
};

/// Defaults are the documented probe setup: 200 full-batch epochs, lr 0.1,
/// L2 1e-4 on weights. `seed` is reserved (zero-init training draws nothing)
/// and kept for interface stability.
struct ProbeConfig {
    int epochs = 200;
    double learning_rate = 0.1;
    double l2_penalty = 1e-4;
    std::uint64_t seed = 0;
};

/// Multinomial logistic-regression probe plus the per-feature standardization
/// learned on the train split (zero-variance features get stddev 1).
struct Probe {
    std::size_t feature_dim = 0;
    int num_classes = 0;
    std::vector<double> weight;  // [num_classes * feature_dim], row-major
    std::vector<double> bias;    // [num_classes]
    std::vector<double> mean;    // [feature_dim]
    std::vector<double> stddev;  // [feature_dim]
};

/// Validate task invariants: consistent feature dims and class counts across
/// splits, non-empty train, every class present in train. Throws
/// DimensionMismatch / EmptySplit / DegenerateTask.
void validate_probe_task(const ProbeTask& task);

/// Full-batch gradient descent on softmax cross-entropy over standardized
/// train features, zero-initialized, L2 penalty on weights (not bias).
/// Deterministic given config.
Probe train_probe(const ProbeTask& task, const ProbeConfig& config);

/// Argmax predictions; ties go to the lowest class index.
std::vector<int> probe_predict(const Probe& probe, const Matrix& inputs);

struct ProbeMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Accuracy and unweighted macro-F1 over all probe classes; a class absent
/// from both predictions and truth contributes F1 = 0.
ProbeMetrics evaluate_probe(const Probe& probe, const LabeledDataset& split);

// ---- gradient-check surface -------------------------------------------------
// Loss over a flat parameter vector [weights row-major, then biases] on
// already-standardized features, matching what train_probe descends.

double probe_loss(const std::vector<double>& params, std::size_t feature_dim,
                  int num_classes, const Matrix& inputs, const std::vector<int>& labels,
                  double l2_penalty);

std::vector<double> probe_loss_grad(const std::vector<double>& params,
                                    std::size_t feature_dim, int num_classes,
                                    const Matrix& inputs, const std::vector<int>& labels,
                                    double l2_penalty);

// ---- reports ----------------------------------------------------------------

struct ProbeRow {
    std::string model_id;
    std::string task_id;
    std::string phenomenon;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct ProbeReport {
    std::string model_id;
    std::vector<ProbeRow> rows;  // sorted by task_id
    std::map<std::string, double> phenomenon_means;  // mean accuracy over tasks
};

/// Evaluate every task on one model: extract representations per split, train
/// on train, report test metrics (dev is reserved for config sweeps and not
/// used for selection). Rows come out in task-id order regardless of input
/// order.
ProbeReport run_probe_suite(const Checkpoint& model, const ToyArchitecture& arch,
                            const std::vector<ProbeTask>& tasks, const ProbeConfig& config,
                            const std::string& model_id);

nlohmann::json probe_report_to_json(const ProbeReport& report);
ProbeReport probe_report_from_json(const nlohmann::json& j, const std::string& context);
std::string probe_report_to_csv(const ProbeReport& report);

/// Load a task manifest: {"tasks": [{"task_id", "phenomenon", "train",
/// "dev", "test"}, ...]} where each split is a dataset file path (resolved
/// relative to the manifest), an inline dataset, or an inline generator spec.
std::vector<ProbeTask> load_probe_tasks(const std::filesystem::path& path);

}  // namespace mergeprobe
