#include "mergeprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"

namespace mergeprobe {

namespace {

int argmax_row(const Matrix& logits, std::size_t r) {
    int best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
        if (logits.at(r, c) > logits.at(r, best))  // strict >: lowest index wins ties
            best = static_cast<int>(c);
    return best;
}

}  // namespace

BehaviorReport evaluate_behavior(const Checkpoint& model, const ToyArchitecture& arch,
                                 const std::vector<BehaviorSuite>& suites,
                                 const std::string& model_id) {
    if (suites.empty())
        fail(ErrorCode::parameter_out_of_range, "evaluate_behavior: no suites given");

    std::vector<const BehaviorSuite*> suite_order;
    for (const auto& s : suites) suite_order.push_back(&s);
    std::sort(suite_order.begin(), suite_order.end(),
              [](const BehaviorSuite* a, const BehaviorSuite* b) {
                  return a->suite_id < b->suite_id;
              });

    BehaviorReport report;
    report.model_id = model_id;
    for (const BehaviorSuite* suite : suite_order) {
        std::vector<const BehaviorTask*> task_order;
        for (const auto& t : suite->tasks) task_order.push_back(&t);
        std::sort(task_order.begin(), task_order.end(),
                  [](const BehaviorTask* a, const BehaviorTask* b) {
                      return a->task_id < b->task_id;
                  });

        double sum = 0.0;
        for (const BehaviorTask* task : task_order) {
            validate_dataset(task->data, "task '" + task->task_id + "'");
            if (task->data.size() == 0)
                fail(ErrorCode::empty_split, "task '" + task->task_id + "': empty dataset");
            if (static_cast<std::size_t>(task->data.num_classes) != arch.num_classes)
                fail(ErrorCode::dimension_mismatch,
                     "task '" + task->task_id + "' declares " +
                         std::to_string(task->data.num_classes) +
                         " classes, architecture has " + std::to_string(arch.num_classes));

            const Matrix logits = forward(model, arch, task->data.inputs);
            std::size_t correct = 0;
            for (std::size_t r = 0; r < logits.rows; ++r)
                if (argmax_row(logits, r) == task->data.labels[r]) ++correct;
            const double acc =
                static_cast<double>(correct) / static_cast<double>(logits.rows);
            report.rows.push_back({model_id, suite->suite_id, task->task_id, acc});
            sum += acc;
        }
        report.suite_means[suite->suite_id] = sum / static_cast<double>(suite->tasks.size());
    }
    return report;
}

nlohmann::json behavior_report_to_json(const BehaviorReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"model_id", r.model_id},
                        {"suite_id", r.suite_id},
                        {"task_id", r.task_id},
                        {"accuracy", r.accuracy}});
    return {{"model_id", report.model_id},
            {"rows", std::move(rows)},
            {"suite_means", report.suite_means}};
}

BehaviorReport behavior_report_from_json(const nlohmann::json& j,
                                         const std::string& context) {
    if (!j.is_object() || !j.contains("model_id") || !j.contains("rows"))
        fail(ErrorCode::manifest_error,
             context + ": expected a behavior report object with model_id and rows");
    BehaviorReport report;
    report.model_id = j.at("model_id").get<std::string>();
    for (const auto& r : j.at("rows")) {
        BehaviorRow row;
        row.model_id = r.at("model_id").get<std::string>();
        row.suite_id = r.at("suite_id").get<std::string>();
        row.task_id = r.at("task_id").get<std::string>();
        row.accuracy = r.at("accuracy").get<double>();
        report.rows.push_back(std::move(row));
    }
    if (j.contains("suite_means"))
        for (const auto& [suite, v] : j.at("suite_means").items())
            report.suite_means[suite] = v.get<double>();
    return report;
}

std::string behavior_report_to_csv(const BehaviorReport& report) {
    std::string out = "model_id,suite_id,task_id,accuracy\n";
    for (const auto& r : report.rows)
        out += r.model_id + "," + r.suite_id + "," + r.task_id + "," +
               fmt_double(r.accuracy) + "\n";
    return out;
}

std::vector<BehaviorSuite> load_behavior_suites(const std::filesystem::path& path) {
    const nlohmann::json j = read_json_file(path, ErrorCode::manifest_error);
    const std::string context = path.string();
    if (!j.is_object() || !j.contains("suites") || !j.at("suites").is_array() ||
        j.at("suites").empty())
        fail(ErrorCode::manifest_error, context + ": expected {\"suites\": [...]}");

    const std::filesystem::path dir = path.parent_path();
    std::vector<BehaviorSuite> suites;
    std::set<std::string> suite_ids;
    for (std::size_t i = 0; i < j.at("suites").size(); ++i) {
        const auto& sj = j.at("suites").at(i);
        const std::string sctx = context + ".suites[" + std::to_string(i) + "]";
        if (!sj.is_object() || !sj.contains("suite_id") || !sj.at("suite_id").is_string())
            fail(ErrorCode::manifest_error, sctx + ".suite_id: required string field");
        BehaviorSuite suite;
        suite.suite_id = sj.at("suite_id").get<std::string>();
        if (suite.suite_id.empty() || !suite_ids.insert(suite.suite_id).second)
            fail(ErrorCode::manifest_error,
                 sctx + ".suite_id: empty or duplicate suite id '" + suite.suite_id + "'");
        if (!sj.contains("tasks") || !sj.at("tasks").is_array() || sj.at("tasks").empty())
            fail(ErrorCode::manifest_error, sctx + ".tasks: required non-empty array");

        std::set<std::string> task_ids;
        for (std::size_t t = 0; t < sj.at("tasks").size(); ++t) {
            const auto& tj = sj.at("tasks").at(t);
            const std::string tctx = sctx + ".tasks[" + std::to_string(t) + "]";
            if (!tj.is_object() || !tj.contains("task_id") || !tj.at("task_id").is_string())
                fail(ErrorCode::manifest_error, tctx + ".task_id: required string field");
            BehaviorTask task;
            task.task_id = tj.at("task_id").get<std::string>();
            if (task.task_id.empty() || !task_ids.insert(task.task_id).second)
                fail(ErrorCode::manifest_error,
                     tctx + ".task_id: empty or duplicate task id '" + task.task_id + "'");
            if (!tj.contains("data"))
                fail(ErrorCode::manifest_error, tctx + ".data: required dataset reference");
            for (const auto& [key, value] : tj.items()) {
                (void)value;
                if (key != "task_id" && key != "data")
                    fail(ErrorCode::manifest_error, tctx + ": unexpected key '" + key + "'");
            }
            const auto& ref = tj.at("data");
            if (ref.is_string())
                task.data = load_dataset_or_generate(dir / ref.get<std::string>());
            else
                task.data = dataset_from_reference(ref, tctx + ".data");
            suite.tasks.push_back(std::move(task));
        }
        suites.push_back(std::move(suite));
    }
    return suites;
}

// ---- categorization ---------------------------------------------------------

const char* category_name(Category c) {
    switch (c) {
        case Category::better: return "Better";
        case Category::between: return "Between";
        case Category::worse: return "Worse";
    }
    return "?";
}

Category categorize_vs_parents(double merged, double parent_a, double parent_b,
                               double epsilon) {
    for (double v : {merged, parent_a, parent_b})
        if (!(v >= 0.0 && v <= 1.0))
            fail(ErrorCode::parameter_out_of_range,
                 "categorize_vs_parents: scores must lie in [0, 1], got " + fmt_double(v));
    if (!std::isfinite(epsilon) || epsilon < 0.0)
        fail(ErrorCode::parameter_out_of_range,
             "categorize_vs_parents: epsilon must be >= 0");
    const double hi = std::max(parent_a, parent_b);
    const double lo = std::min(parent_a, parent_b);
    if (merged > hi + epsilon) return Category::better;
    if (merged < lo - epsilon) return Category::worse;
    return Category::between;
}

std::vector<ParentComparisonRow> compare_scores(const std::string& merged_model_id,
                                                const std::map<std::string, double>& merged,
                                                const std::map<std::string, double>& parent_a,
                                                const std::map<std::string, double>& parent_b,
                                                double epsilon) {
    std::vector<ParentComparisonRow> rows;
    for (const auto& [task_id, m_score] : merged) {
        auto a = parent_a.find(task_id);
        auto b = parent_b.find(task_id);
        if (a == parent_a.end() || b == parent_b.end()) continue;  // not shared
        ParentComparisonRow row;
        row.merged_model_id = merged_model_id;
        row.task_id = task_id;
        row.parent_a_score = a->second;
        row.parent_b_score = b->second;
        row.merged_score = m_score;
        row.epsilon = epsilon;
        row.category = categorize_vs_parents(m_score, a->second, b->second, epsilon);
        rows.push_back(std::move(row));
    }
    return rows;  // std::map iteration is already sorted by task_id
}

nlohmann::json comparisons_to_json(const std::vector<ParentComparisonRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"merged_model_id", r.merged_model_id},
                       {"task_id", r.task_id},
                       {"category", category_name(r.category)},
                       {"parent_a_score", r.parent_a_score},
                       {"parent_b_score", r.parent_b_score},
                       {"merged_score", r.merged_score},
                       {"epsilon", r.epsilon}});
    return out;
}

std::string comparisons_to_csv(const std::vector<ParentComparisonRow>& rows) {
    std::string out =
        "merged_model_id,task_id,category,parent_a_score,parent_b_score,merged_score,"
        "epsilon\n";
    for (const auto& r : rows)
        out += r.merged_model_id + "," + r.task_id + "," + category_name(r.category) + "," +
               fmt_double(r.parent_a_score) + "," + fmt_double(r.parent_b_score) + "," +
               fmt_double(r.merged_score) + "," + fmt_double(r.epsilon) + "\n";
    return out;
}

// ---- correlation ------------------------------------------------------------

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        fail(ErrorCode::dimension_mismatch,
             "pearson: vector lengths differ (" + std::to_string(x.size()) + " vs " +
                 std::to_string(y.size()) + ")");
    const std::size_t n = x.size();
    if (n < 3)
        fail(ErrorCode::insufficient_data,
             "pearson: need at least 3 points, got " + std::to_string(n));

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        fail(ErrorCode::constant_input, "pearson: constant input vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> fractional_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // Positions i..j (0-based) share the average of ranks i+1..j+1.
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        fail(ErrorCode::dimension_mismatch,
             "spearman: vector lengths differ (" + std::to_string(x.size()) + " vs " +
                 std::to_string(y.size()) + ")");
    if (x.size() < 3)
        fail(ErrorCode::insufficient_data,
             "spearman: need at least 3 points, got " + std::to_string(x.size()));
    return pearson(fractional_ranks(x), fractional_ranks(y));
}

const char* corr_method_name(CorrMethod m) {
    return m == CorrMethod::pearson ? "pearson" : "spearman";
}

CorrelationMatrix correlation_matrix(const std::vector<ProbeReport>& probe_reports,
                                     const std::vector<BehaviorReport>& behavior_reports,
                                     CorrMethod method) {
    // One report per model on each side.
    std::map<std::string, const ProbeReport*> probes;
    for (const auto& r : probe_reports)
        if (!probes.emplace(r.model_id, &r).second)
            fail(ErrorCode::manifest_error,
                 "correlation_matrix: duplicate probe report for model '" + r.model_id + "'");
    std::map<std::string, const BehaviorReport*> behaviors;
    for (const auto& r : behavior_reports)
        if (!behaviors.emplace(r.model_id, &r).second)
            fail(ErrorCode::manifest_error,
                 "correlation_matrix: duplicate behavior report for model '" + r.model_id +
                     "'");

    std::vector<std::string> shared;
    for (const auto& [id, r] : probes) {
        (void)r;
        if (behaviors.count(id)) shared.push_back(id);
    }

    CorrelationMatrix m;
    m.method = method;
    {
        std::set<std::string> phens, suites;
        for (const auto& r : probe_reports)
            for (const auto& [phen, v] : r.phenomenon_means) {
                (void)v;
                phens.insert(phen);
            }
        for (const auto& r : behavior_reports)
            for (const auto& [suite, v] : r.suite_means) {
                (void)v;
                suites.insert(suite);
            }
        m.row_labels.assign(phens.begin(), phens.end());
        m.col_labels.assign(suites.begin(), suites.end());
    }
    m.cells.resize(m.row_labels.size() * m.col_labels.size());

    for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
        for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
            std::vector<double> xs, ys;
            for (const std::string& id : shared) {
                auto px = probes.at(id)->phenomenon_means.find(m.row_labels[r]);
                auto by = behaviors.at(id)->suite_means.find(m.col_labels[c]);
                if (px == probes.at(id)->phenomenon_means.end() ||
                    by == behaviors.at(id)->suite_means.end())
                    continue;
                xs.push_back(px->second);
                ys.push_back(by->second);
            }
            CorrelationCell& cell = m.cells[r * m.col_labels.size() + c];
            cell.n = static_cast<int>(xs.size());
            if (xs.size() < 3) continue;  // undefined, n recorded
            try {
                cell.value = method == CorrMethod::pearson ? pearson(xs, ys)
                                                           : spearman(xs, ys);
                cell.defined = true;
            } catch (const Error& e) {
                // Constant score vectors leave the cell undefined rather than
                // surfacing a NaN or a fake 0.
                if (e.code() != ErrorCode::constant_input &&
                    e.code() != ErrorCode::insufficient_data)
                    throw;
            }
        }
    }
    return m;
}

nlohmann::json correlation_matrix_to_json(const CorrelationMatrix& m) {
    nlohmann::json values = nlohmann::json::array();
    nlohmann::json counts = nlohmann::json::array();
    for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
        nlohmann::json vrow = nlohmann::json::array();
        nlohmann::json nrow = nlohmann::json::array();
        for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
            const CorrelationCell& cell = m.at(r, c);
            if (cell.defined)
                vrow.push_back(cell.value);
            else
                vrow.push_back(nullptr);
            nrow.push_back(cell.n);
        }
        values.push_back(std::move(vrow));
        counts.push_back(std::move(nrow));
    }
    return {{"method", corr_method_name(m.method)},
            {"rows", m.row_labels},
            {"cols", m.col_labels},
            {"values", std::move(values)},
            {"n", std::move(counts)}};
}

std::string correlation_matrix_to_csv(const CorrelationMatrix& m) {
    std::string out = "row,column,value\n";
    for (std::size_t r = 0; r < m.row_labels.size(); ++r)
        for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
            const CorrelationCell& cell = m.at(r, c);
            out += m.row_labels[r] + "," + m.col_labels[c] + ",";
            if (cell.defined) out += fmt_double(cell.value);
            out += "\n";
        }
    return out;
}

}  // namespace mergeprobe
