#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/checkpoint.hpp"
#include "mergeprobe/dataset.hpp"
#include "mergeprobe/probe.hpp"
#include "mergeprobe/toy_model.hpp"

namespace mergeprobe {

// ---- behavioral evaluation --------------------------------------------------

struct BehaviorTask {
    std::string task_id;
    LabeledDataset data;
};

struct BehaviorSuite {
    std::string suite_id;
    std::vector<BehaviorTask> tasks;
};

struct BehaviorRow {
    std::string model_id;
    std::string suite_id;
    std::string task_id;
    double accuracy = 0.0;
};

struct BehaviorReport {
    std::string model_id;
    std::vector<BehaviorRow> rows;  // sorted by (suite_id, task_id)
    std::map<std::string, double> suite_means;  // mean accuracy over member tasks
};

/// Argmax accuracy of the model on every task of every suite (ties to the
/// lowest class index, matching the probe convention). Deterministic.
BehaviorReport evaluate_behavior(const Checkpoint& model, const ToyArchitecture& arch,
                                 const std::vector<BehaviorSuite>& suites,
                                 const std::string& model_id);

nlohmann::json behavior_report_to_json(const BehaviorReport& report);
BehaviorReport behavior_report_from_json(const nlohmann::json& j,
                                         const std::string& context);
std::string behavior_report_to_csv(const BehaviorReport& report);

/// Load a suite manifest: {"suites": [{"suite_id", "tasks": [{"task_id",
/// "data"}, ...]}, ...]} with the same dataset references as probe tasks.
std::vector<BehaviorSuite> load_behavior_suites(const std::filesystem::path& path);

// ---- parent-relative categorization -----------------------------------------

enum class Category { better, between, worse };

const char* category_name(Category c);

/// Better iff merged > max(parents) + eps; Worse iff merged < min(parents)
/// - eps; Between otherwise (the boundary lands in Between). Symmetric in the
/// parents. Scores must lie in [0, 1], eps >= 0.
Category categorize_vs_parents(double merged, double parent_a, double parent_b,
                               double epsilon = 0.0);

struct ParentComparisonRow {
    std::string merged_model_id;
    std::string task_id;
    Category category = Category::between;
    double parent_a_score = 0.0;
    double parent_b_score = 0.0;
    double merged_score = 0.0;
    double epsilon = 0.0;
};

/// Categorize a merged model's per-task scores against its two designated
/// parents on the tasks all three share, in sorted task order.
std::vector<ParentComparisonRow> compare_scores(const std::string& merged_model_id,
                                                const std::map<std::string, double>& merged,
                                                const std::map<std::string, double>& parent_a,
                                                const std::map<std::string, double>& parent_b,
                                                double epsilon = 0.0);

nlohmann::json comparisons_to_json(const std::vector<ParentComparisonRow>& rows);
std::string comparisons_to_csv(const std::vector<ParentComparisonRow>& rows);

// ---- correlation ------------------------------------------------------------

/// Sample Pearson coefficient, clamped to [-1, 1] against rounding.
/// Throws InsufficientData (n < 3), ConstantInput, DimensionMismatch.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Pearson over fractional ranks; ties receive average ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// 1-based ranks with ties averaged (e.g. [10, 20, 20, 30] -> [1, 2.5, 2.5, 4]).
std::vector<double> fractional_ranks(const std::vector<double>& values);

enum class CorrMethod { pearson, spearman };

const char* corr_method_name(CorrMethod m);

struct CorrelationCell {
    double value = 0.0;
    bool defined = false;
    int n = 0;  // shared models backing the cell
};

/// Rows are probe phenomena, columns behavior suites; each defined cell
/// correlates per-model phenomenon means with per-model suite means over the
/// models present in both report sets.
struct CorrelationMatrix {
    CorrMethod method = CorrMethod::pearson;
    std::vector<std::string> row_labels;  // phenomena, sorted
    std::vector<std::string> col_labels;  // suites, sorted
    std::vector<CorrelationCell> cells;   // row-major

    const CorrelationCell& at(std::size_t r, std::size_t c) const {
        return cells[r * col_labels.size() + c];
    }
};

/// Cells with fewer than 3 shared models, or with a constant score vector,
/// are marked undefined (serialized as null, never 0).
CorrelationMatrix correlation_matrix(const std::vector<ProbeReport>& probe_reports,
                                     const std::vector<BehaviorReport>& behavior_reports,
                                     CorrMethod method);

nlohmann::json correlation_matrix_to_json(const CorrelationMatrix& m);

/// Plot-ready long format: header row,column,value; undefined cells keep an
/// empty value field.
std::string correlation_matrix_to_csv(const CorrelationMatrix& m);

}  // namespace mergeprobe
