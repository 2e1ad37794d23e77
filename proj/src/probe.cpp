#include "mergeprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"

namespace mergeprobe {

void validate_probe_task(const ProbeTask& task) {
    const std::string what = "task '" + task.task_id + "'";
    if (task.train.size() == 0)
        fail(ErrorCode::empty_split, what + ": empty train split");
    validate_dataset(task.train, what + " train");
    validate_dataset(task.dev, what + " dev");
    validate_dataset(task.test, what + " test");

    for (const auto* split : {&task.dev, &task.test}) {
        if (split->size() > 0 && split->inputs.cols != task.train.inputs.cols)
            fail(ErrorCode::dimension_mismatch,
                 what + ": splits disagree on feature dimension");
        if (split->num_classes != task.train.num_classes)
            fail(ErrorCode::dimension_mismatch, what + ": splits disagree on num_classes");
    }

    if (task.train.num_classes < 2)
        fail(ErrorCode::degenerate_task, what + ": fewer than 2 classes");
    std::set<int> seen(task.train.labels.begin(), task.train.labels.end());
    if (seen.size() < 2)
        fail(ErrorCode::degenerate_task, what + ": single class in train split");
    for (int c = 0; c < task.train.num_classes; ++c)
        if (!seen.count(c))
            fail(ErrorCode::degenerate_task,
                 what + ": class " + std::to_string(c) + " absent from train split");
}

double probe_loss(const std::vector<double>& params, std::size_t feature_dim,
                  int num_classes, const Matrix& inputs, const std::vector<int>& labels,
                  double l2_penalty) {
    const std::size_t C = static_cast<std::size_t>(num_classes), F = feature_dim;
    const std::size_t n = labels.size();
    double loss = 0.0;
    std::vector<double> z(C);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            double acc = params[C * F + c];
            for (std::size_t f = 0; f < F; ++f)
                acc += params[c * F + f] * static_cast<double>(inputs.at(r, f));
            z[c] = acc;
        }
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        loss += (m + std::log(sum)) - z[static_cast<std::size_t>(labels[r])];
    }
    loss /= static_cast<double>(n);
    double reg = 0.0;
    for (std::size_t i = 0; i < C * F; ++i) reg += params[i] * params[i];
    return loss + 0.5 * l2_penalty * reg;
}

std::vector<double> probe_loss_grad(const std::vector<double>& params,
                                    std::size_t feature_dim, int num_classes,
                                    const Matrix& inputs, const std::vector<int>& labels,
                                    double l2_penalty) {
    const std::size_t C = static_cast<std::size_t>(num_classes), F = feature_dim;
    const std::size_t n = labels.size();
    std::vector<double> grad(params.size(), 0.0);
    std::vector<double> z(C), p(C);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            double acc = params[C * F + c];
            for (std::size_t f = 0; f < F; ++f)
                acc += params[c * F + f] * static_cast<double>(inputs.at(r, f));
            z[c] = acc;
        }
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(z[c] - m);
            sum += p[c];
        }
        for (std::size_t c = 0; c < C; ++c) {
            double d = p[c] / sum;
            if (c == static_cast<std::size_t>(labels[r])) d -= 1.0;
            d /= static_cast<double>(n);
            for (std::size_t f = 0; f < F; ++f)
                grad[c * F + f] += d * static_cast<double>(inputs.at(r, f));
            grad[C * F + c] += d;
        }
    }
    // L2 on weights only; the bias stays unpenalized.
    for (std::size_t i = 0; i < C * F; ++i) grad[i] += l2_penalty * params[i];
    return grad;
}

namespace {

Matrix standardize(const Matrix& inputs, const std::vector<double>& mean,
                   const std::vector<double>& stddev) {
    Matrix out(inputs.rows, inputs.cols);
    for (std::size_t r = 0; r < inputs.rows; ++r)
        for (std::size_t c = 0; c < inputs.cols; ++c)
            out.at(r, c) = static_cast<float>(
                (static_cast<double>(inputs.at(r, c)) - mean[c]) / stddev[c]);
    return out;
}

}  // namespace

Probe train_probe(const ProbeTask& task, const ProbeConfig& config) {
    if (config.epochs < 0)
        fail(ErrorCode::parameter_out_of_range, "train_probe: epochs must be >= 0");
    if (!std::isfinite(config.learning_rate) || !(config.learning_rate > 0.0))
        fail(ErrorCode::parameter_out_of_range, "train_probe: learning_rate must be positive");
    if (!std::isfinite(config.l2_penalty) || config.l2_penalty < 0.0)
        fail(ErrorCode::parameter_out_of_range,
             "train_probe: l2_penalty must be non-negative");
    validate_probe_task(task);

    Probe probe;
    probe.feature_dim = task.train.inputs.cols;
    probe.num_classes = task.train.num_classes;
    const std::size_t F = probe.feature_dim;
    const std::size_t C = static_cast<std::size_t>(probe.num_classes);
    const std::size_t n = task.train.size();

    probe.mean.assign(F, 0.0);
    probe.stddev.assign(F, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t f = 0; f < F; ++f)
            probe.mean[f] += static_cast<double>(task.train.inputs.at(r, f));
    for (double& m : probe.mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t f = 0; f < F; ++f) {
            const double d = static_cast<double>(task.train.inputs.at(r, f)) - probe.mean[f];
            probe.stddev[f] += d * d;
        }
    for (double& s : probe.stddev) {
        s = std::sqrt(s / static_cast<double>(n));
        if (s == 0.0) s = 1.0;  // constant feature: pass through centered
    }

    const Matrix X = standardize(task.train.inputs, probe.mean, probe.stddev);
    std::vector<double> params(C * F + C, 0.0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::vector<double> grad = probe_loss_grad(
            params, F, probe.num_classes, X, task.train.labels, config.l2_penalty);
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= config.learning_rate * grad[i];
    }

    probe.weight.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(C * F));
    probe.bias.assign(params.begin() + static_cast<std::ptrdiff_t>(C * F), params.end());
    return probe;
}

std::vector<int> probe_predict(const Probe& probe, const Matrix& inputs) {
    if (inputs.cols != probe.feature_dim)
        fail(ErrorCode::dimension_mismatch,
             "probe_predict: inputs have " + std::to_string(inputs.cols) +
                 " features, probe expects " + std::to_string(probe.feature_dim));
    const std::size_t F = probe.feature_dim;
    const std::size_t C = static_cast<std::size_t>(probe.num_classes);
    std::vector<int> out(inputs.rows);
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        int best = 0;
        double best_z = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) {
            double acc = probe.bias[c];
            for (std::size_t f = 0; f < F; ++f)
                acc += probe.weight[c * F + f] *
                       ((static_cast<double>(inputs.at(r, f)) - probe.mean[f]) /
                        probe.stddev[f]);
            // Strict > keeps the lowest class index on ties.
            if (acc > best_z) {
                best_z = acc;
                best = static_cast<int>(c);
            }
        }
        out[r] = best;
    }
    return out;
}

ProbeMetrics evaluate_probe(const Probe& probe, const LabeledDataset& split) {
    if (split.size() == 0)
        fail(ErrorCode::empty_split, "evaluate_probe: empty split");
    validate_dataset(split, "evaluate_probe split");
    if (split.inputs.cols != probe.feature_dim)
        fail(ErrorCode::dimension_mismatch,
             "evaluate_probe: split has " + std::to_string(split.inputs.cols) +
                 " features, probe expects " + std::to_string(probe.feature_dim));
    if (split.num_classes != probe.num_classes)
        fail(ErrorCode::dimension_mismatch,
             "evaluate_probe: split declares " + std::to_string(split.num_classes) +
                 " classes, probe has " + std::to_string(probe.num_classes));

    const std::vector<int> pred = probe_predict(probe, split.inputs);
    const std::size_t C = static_cast<std::size_t>(probe.num_classes);
    std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto truth = static_cast<std::size_t>(split.labels[i]);
        const auto guess = static_cast<std::size_t>(pred[i]);
        if (guess == truth) {
            ++correct;
            ++tp[truth];
        } else {
            ++fp[guess];
            ++fn[truth];
        }
    }

    ProbeMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double precision =
            tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double recall =
            tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        if (precision + recall > 0.0)
            f1_sum += 2.0 * precision * recall / (precision + recall);
        // A class absent from both predictions and truth contributes 0.
    }
    m.macro_f1 = f1_sum / static_cast<double>(C);
    return m;
}

ProbeReport run_probe_suite(const Checkpoint& model, const ToyArchitecture& arch,
                            const std::vector<ProbeTask>& tasks, const ProbeConfig& config,
                            const std::string& model_id) {
    if (tasks.empty())
        fail(ErrorCode::parameter_out_of_range, "run_probe_suite: no tasks given");

    std::vector<const ProbeTask*> order;
    order.reserve(tasks.size());
    for (const auto& t : tasks) order.push_back(&t);
    std::sort(order.begin(), order.end(),
              [](const ProbeTask* a, const ProbeTask* b) { return a->task_id < b->task_id; });

    ProbeReport report;
    report.model_id = model_id;
    for (const ProbeTask* task : order) {
        ProbeTask rep_task;
        rep_task.task_id = task->task_id;
        rep_task.phenomenon = task->phenomenon;
        for (auto [src, dst] : {std::pair{&task->train, &rep_task.train},
                                std::pair{&task->dev, &rep_task.dev},
                                std::pair{&task->test, &rep_task.test}}) {
            dst->labels = src->labels;
            dst->num_classes = src->num_classes;
            dst->inputs = src->size() > 0 ? extract_representation(model, arch, src->inputs)
                                          : Matrix{};
        }

        const Probe probe = train_probe(rep_task, config);
        const ProbeMetrics metrics = evaluate_probe(probe, rep_task.test);
        report.rows.push_back({model_id, task->task_id, task->phenomenon, metrics.accuracy,
                               metrics.macro_f1});
    }

    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& row : report.rows) {
        sums[row.phenomenon].first += row.accuracy;
        sums[row.phenomenon].second += 1;
    }
    for (const auto& [phen, sum_count] : sums)
        report.phenomenon_means[phen] = sum_count.first / sum_count.second;
    return report;
}

nlohmann::json probe_report_to_json(const ProbeReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"model_id", r.model_id},
                        {"task_id", r.task_id},
                        {"phenomenon", r.phenomenon},
                        {"accuracy", r.accuracy},
                        {"macro_f1", r.macro_f1}});
    return {{"model_id", report.model_id},
            {"rows", std::move(rows)},
            {"phenomenon_means", report.phenomenon_means}};
}

ProbeReport probe_report_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object() || !j.contains("model_id") || !j.contains("rows"))
        fail(ErrorCode::manifest_error,
             context + ": expected a probe report object with model_id and rows");
    ProbeReport report;
    report.model_id = j.at("model_id").get<std::string>();
    for (const auto& r : j.at("rows")) {
        ProbeRow row;
        row.model_id = r.at("model_id").get<std::string>();
        row.task_id = r.at("task_id").get<std::string>();
        row.phenomenon = r.at("phenomenon").get<std::string>();
        row.accuracy = r.at("accuracy").get<double>();
        row.macro_f1 = r.at("macro_f1").get<double>();
        report.rows.push_back(std::move(row));
    }
    if (j.contains("phenomenon_means"))
        for (const auto& [phen, v] : j.at("phenomenon_means").items())
            report.phenomenon_means[phen] = v.get<double>();
    return report;
}

std::string probe_report_to_csv(const ProbeReport& report) {
    std::string out = "model_id,task_id,phenomenon,accuracy,macro_f1\n";
    for (const auto& r : report.rows)
        out += r.model_id + "," + r.task_id + "," + r.phenomenon + "," +
               fmt_double(r.accuracy) + "," + fmt_double(r.macro_f1) + "\n";
    return out;
}

std::vector<ProbeTask> load_probe_tasks(const std::filesystem::path& path) {
    const nlohmann::json j = read_json_file(path, ErrorCode::manifest_error);
    const std::string context = path.string();
    if (!j.is_object() || !j.contains("tasks") || !j.at("tasks").is_array() ||
        j.at("tasks").empty())
        fail(ErrorCode::manifest_error, context + ": expected {\"tasks\": [...]}");

    const std::filesystem::path dir = path.parent_path();
    std::vector<ProbeTask> tasks;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < j.at("tasks").size(); ++i) {
        const auto& tj = j.at("tasks").at(i);
        const std::string tctx = context + ".tasks[" + std::to_string(i) + "]";
        if (!tj.is_object())
            fail(ErrorCode::manifest_error, tctx + ": expected an object");
        for (const auto& [key, value] : tj.items()) {
            (void)value;
            if (key != "task_id" && key != "phenomenon" && key != "train" &&
                key != "dev" && key != "test")
                fail(ErrorCode::manifest_error, tctx + ": unexpected key '" + key + "'");
        }
        ProbeTask task;
        for (const char* key : {"task_id", "phenomenon"}) {
            if (!tj.contains(key) || !tj.at(key).is_string() ||
                tj.at(key).get<std::string>().empty())
                fail(ErrorCode::manifest_error,
                     tctx + "." + key + ": required non-empty string");
        }
        task.task_id = tj.at("task_id").get<std::string>();
        task.phenomenon = tj.at("phenomenon").get<std::string>();
        if (!ids.insert(task.task_id).second)
            fail(ErrorCode::manifest_error,
                 tctx + ".task_id: duplicate task id '" + task.task_id + "'");

        for (auto [key, dst] : {std::pair{"train", &task.train}, std::pair{"dev", &task.dev},
                                std::pair{"test", &task.test}}) {
            if (!tj.contains(key))
                fail(ErrorCode::manifest_error,
                     tctx + "." + key + ": required split reference");
            const auto& ref = tj.at(key);
            if (ref.is_string())
                *dst = load_dataset_or_generate(dir / ref.get<std::string>());
            else
                *dst = dataset_from_reference(ref, tctx + "." + key);
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

}  // namespace mergeprobe
