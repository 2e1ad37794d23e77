#include <algorithm>
#include <cmath>
#include <doctest.h>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/probe.hpp"
#include "mergeprobe/rng.hpp"
#include "test_util.hpp"

using namespace mergeprobe;
using namespace mergeprobe::testing;

namespace {

// Blob task over raw 2-D features (splits drawn from independent streams).
ProbeTask blob_task(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                    double separation, double noise, bool shuffle = false) {
    GenSpec spec = parse_gen_spec({{"kind", "blobs"},
                                   {"n", 1},
                                   {"seed", seed},
                                   {"separation", separation},
                                   {"noise", noise},
                                   {"shuffle_labels", shuffle}});
    spec.splits = {{"train", n_train}, {"dev", n_test}, {"test", n_test}};
    auto splits = generate_splits(spec);
    ProbeTask task;
    task.task_id = "blobs-" + std::to_string(seed);
    task.phenomenon = "geometry";
    task.train = std::move(splits.at("train"));
    task.dev = std::move(splits.at("dev"));
    task.test = std::move(splits.at("test"));
    return task;
}

Probe hand_probe_1d() {
    Probe p;
    p.feature_dim = 1;
    p.num_classes = 2;
    p.weight = {-1.0, 1.0};  // class 0 likes negative inputs, class 1 positive
    p.bias = {0.0, 0.0};
    p.mean = {0.0};
    p.stddev = {1.0};
    return p;
}

LabeledDataset column_dataset(const std::vector<float>& xs, std::vector<int> labels,
                              int num_classes) {
    LabeledDataset ds;
    ds.inputs.rows = xs.size();
    ds.inputs.cols = 1;
    ds.inputs.data = xs;
    ds.labels = std::move(labels);
    ds.num_classes = num_classes;
    return ds;
}

}  // namespace

// ---- task validation --------------------------------------------------------

TEST_CASE("probe task: validation accepts a healthy task") {
    CHECK_NOTHROW(validate_probe_task(blob_task(1, 40, 20, 4.0, 0.5)));
}

TEST_CASE("probe task: validation rejects broken tasks") {
    ProbeTask task = blob_task(2, 40, 20, 4.0, 0.5);
    task.train = LabeledDataset{};
    CHECK(error_code_of([&] { validate_probe_task(task); }) == ErrorCode::empty_split);

    task = blob_task(2, 40, 20, 4.0, 0.5);
    task.test.inputs.cols = 3;
    task.test.inputs.data.resize(task.test.size() * 3, 0.0f);
    CHECK(error_code_of([&] { validate_probe_task(task); }) ==
          ErrorCode::dimension_mismatch);

    task = blob_task(2, 40, 20, 4.0, 0.5);
    task.dev.num_classes = 3;
    CHECK(error_code_of([&] { validate_probe_task(task); }) ==
          ErrorCode::dimension_mismatch);

    task = blob_task(2, 40, 20, 4.0, 0.5);
    for (auto& l : task.train.labels) l = 0;  // single class left in train
    CHECK(error_code_of([&] { validate_probe_task(task); }) == ErrorCode::degenerate_task);

    // Declared class never appears in train.
    task = blob_task(2, 40, 20, 4.0, 0.5);
    task.train.num_classes = task.dev.num_classes = task.test.num_classes = 3;
    CHECK(error_code_of([&] { validate_probe_task(task); }) == ErrorCode::degenerate_task);
}

// ---- training ---------------------------------------------------------------

TEST_CASE("probe: near-perfect on well-separated blobs") {
    // Margin far exceeds the spread, so the Bayes classifier is linear and
    // near-perfect; the probe should reach it. n = 500 per the documented
    // sanity band.
    const ProbeTask task = blob_task(3, 500, 200, 6.0, 0.5);
    const Probe probe = train_probe(task, ProbeConfig{});
    const ProbeMetrics m = evaluate_probe(probe, task.test);
    CHECK(m.accuracy >= 0.99);
    CHECK(m.macro_f1 >= 0.99);
}

TEST_CASE("probe: chance level on shuffled labels") {
    const ProbeTask task = blob_task(4, 500, 500, 4.0, 0.5, /*shuffle=*/true);
    const Probe probe = train_probe(task, ProbeConfig{});
    const ProbeMetrics m = evaluate_probe(probe, task.test);
    CHECK(m.accuracy >= 0.40);
    CHECK(m.accuracy <= 0.60);
}

TEST_CASE("probe: config validation") {
    const ProbeTask task = blob_task(5, 30, 10, 4.0, 0.5);
    ProbeConfig cfg;
    cfg.epochs = -1;
    CHECK(error_code_of([&] { train_probe(task, cfg); }) ==
          ErrorCode::parameter_out_of_range);
    cfg = ProbeConfig{};
    cfg.learning_rate = 0.0;
    CHECK(error_code_of([&] { train_probe(task, cfg); }) ==
          ErrorCode::parameter_out_of_range);
    cfg = ProbeConfig{};
    cfg.l2_penalty = -1e-4;
    CHECK(error_code_of([&] { train_probe(task, cfg); }) ==
          ErrorCode::parameter_out_of_range);
}

TEST_CASE("probe: zero-variance feature is passed through without dividing by zero") {
    ProbeTask task = blob_task(6, 40, 20, 5.0, 0.4);
    for (std::size_t r = 0; r < task.train.size(); ++r) task.train.inputs.at(r, 1) = 2.5f;
    const Probe probe = train_probe(task, ProbeConfig{});
    CHECK(probe.stddev[1] == 1.0);
    for (double v : probe.weight) CHECK(std::isfinite(v));
}

// ---- prediction and metrics -------------------------------------------------

TEST_CASE("probe: all-correct predictions score perfect metrics") {
    const Probe probe = hand_probe_1d();
    const LabeledDataset split =
        column_dataset({-2.0f, -1.0f, 1.0f, 2.0f}, {0, 0, 1, 1}, 2);
    const ProbeMetrics m = evaluate_probe(probe, split);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);
}

TEST_CASE("probe: all-class-0 predictions on a 50/50 split score macro-F1 1/3") {
    // Zero weights leave every logit tied; ties resolve to class 0. Class 0
    // then has precision 0.5 and recall 1 (F1 = 2/3), class 1 contributes 0.
    Probe probe = hand_probe_1d();
    probe.weight = {0.0, 0.0};
    const LabeledDataset split =
        column_dataset({1.0f, -1.0f, 2.0f, -2.0f, 3.0f, -3.0f}, {0, 0, 0, 1, 1, 1}, 2);
    const ProbeMetrics m = evaluate_probe(probe, split);
    CHECK(m.accuracy == 0.5);
    CHECK(m.macro_f1 == 1.0 / 3.0);
}

TEST_CASE("probe: argmax ties break toward the lowest class index") {
    Probe probe = hand_probe_1d();
    probe.weight = {0.0, 0.0};
    probe.bias = {0.0, 0.0};
    const std::vector<int> pred =
        probe_predict(probe, column_dataset({5.0f, -5.0f, 0.0f}, {0, 0, 0}, 2).inputs);
    CHECK(pred == std::vector<int>{0, 0, 0});
}

TEST_CASE("probe: metric errors") {
    const Probe probe = hand_probe_1d();
    CHECK(error_code_of([&] { evaluate_probe(probe, LabeledDataset{}); }) ==
          ErrorCode::empty_split);

    LabeledDataset wide = column_dataset({1.0f, 2.0f}, {0, 1}, 2);
    wide.inputs.cols = 2;
    wide.inputs.rows = 1;
    wide.labels = {0};
    CHECK(error_code_of([&] { evaluate_probe(probe, wide); }) ==
          ErrorCode::dimension_mismatch);

    LabeledDataset extra_classes = column_dataset({1.0f, -1.0f, 0.5f}, {0, 1, 2}, 3);
    CHECK(error_code_of([&] { evaluate_probe(probe, extra_classes); }) ==
          ErrorCode::dimension_mismatch);

    CHECK(error_code_of([&] { probe_predict(probe, Matrix(2, 3)); }) ==
          ErrorCode::dimension_mismatch);
}

// ---- documented invariants --------------------------------------------------

TEST_CASE("probe: rescaling a feature does not change predicted labels") {
    const ProbeTask task = blob_task(7, 200, 100, 5.0, 0.6);
    const Probe probe = train_probe(task, ProbeConfig{});
    const std::vector<int> baseline = probe_predict(probe, task.test.inputs);

    ProbeTask scaled = task;
    auto rescale = [](LabeledDataset& ds) {
        for (std::size_t r = 0; r < ds.size(); ++r)
            ds.inputs.at(r, 0) = 3.5f * ds.inputs.at(r, 0) - 2.0f;
    };
    rescale(scaled.train);
    rescale(scaled.dev);
    rescale(scaled.test);
    const Probe probe2 = train_probe(scaled, ProbeConfig{});
    CHECK(probe_predict(probe2, scaled.test.inputs) == baseline);
}

TEST_CASE("probe: zero epochs predict one constant class") {
    const ProbeTask task = blob_task(8, 50, 25, 4.0, 0.5);
    ProbeConfig cfg;
    cfg.epochs = 0;
    const Probe probe = train_probe(task, cfg);
    const std::vector<int> pred = probe_predict(probe, task.test.inputs);
    for (int p : pred) CHECK(p == 0);
}

TEST_CASE("probe: training loss is non-increasing at lr 0.01") {
    const ProbeTask task = blob_task(9, 120, 40, 3.0, 0.8);
    // Reuse the probe's standardization, then replay descent by hand.
    const Probe fitted = train_probe(task, ProbeConfig{});
    Matrix X(task.train.size(), fitted.feature_dim);
    for (std::size_t r = 0; r < X.rows; ++r)
        for (std::size_t c = 0; c < X.cols; ++c)
            X.at(r, c) = static_cast<float>(
                (static_cast<double>(task.train.inputs.at(r, c)) - fitted.mean[c]) /
                fitted.stddev[c]);

    const double l2 = 1e-4;
    std::vector<double> params(2 * fitted.feature_dim + 2, 0.0);
    double prev = probe_loss(params, fitted.feature_dim, 2, X, task.train.labels, l2);
    for (int epoch = 0; epoch < 100; ++epoch) {
        const auto grad =
            probe_loss_grad(params, fitted.feature_dim, 2, X, task.train.labels, l2);
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= 0.01 * grad[i];
        const double loss =
            probe_loss(params, fitted.feature_dim, 2, X, task.train.labels, l2);
        CHECK(loss <= prev + 1e-12);
        prev = loss;
    }
}

TEST_CASE("probe: loss gradient matches central finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream rng(derive_key(seed, "probe-grad", 0));
        const std::size_t F = 2 + rng.below(3);
        const int C = 2 + static_cast<int>(rng.below(2));
        const std::size_t n = 8;

        Matrix X(n, F);
        for (float& v : X.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng.below(C));
        std::vector<double> params(static_cast<std::size_t>(C) * F + C);
        for (auto& p : params) p = rng.uniform(-1.0, 1.0);
        const double l2 = 1e-3;

        const auto analytic = probe_loss_grad(params, F, C, X, labels, l2);
        const double h = 1e-4;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = probe_loss(params, F, C, X, labels, l2);
            params[i] = saved - h;
            const double down = probe_loss(params, F, C, X, labels, l2);
            params[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            num += (analytic[i] - fd) * (analytic[i] - fd);
            den += fd * fd;
        }
        CHECK(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-12));
    }
}

// ---- suites -----------------------------------------------------------------

namespace {

// Model + arch whose representations the suite probes. Training makes the
// representation informative for blob geometry.
struct SuiteFixture {
    ToyArchitecture arch;
    Checkpoint model;

    SuiteFixture() {
        arch.input_dim = 2;
        arch.hidden_dims = {6};
        arch.num_classes = 2;
        const LabeledDataset data = generate_dataset(parse_gen_spec(
            {{"kind", "blobs"}, {"n", 80}, {"seed", 100}, {"separation", 4.0}}));
        model = train_toy_model(arch, data, 60, 0.2, 100);
    }
};

}  // namespace

TEST_CASE("probe suite: one task yields one row and its phenomenon mean") {
    const SuiteFixture fx;
    const std::vector<ProbeTask> tasks = {blob_task(10, 60, 30, 4.0, 0.5)};
    const ProbeReport report =
        run_probe_suite(fx.model, fx.arch, tasks, ProbeConfig{}, "m0");
    REQUIRE(report.rows.size() == 1);
    CHECK(report.model_id == "m0");
    CHECK(report.rows[0].model_id == "m0");
    CHECK(report.rows[0].task_id == tasks[0].task_id);
    CHECK(report.rows[0].phenomenon == "geometry");
    CHECK(report.phenomenon_means.at("geometry") == report.rows[0].accuracy);
}

TEST_CASE("probe suite: rows sort by task id and means average member tasks") {
    const SuiteFixture fx;
    std::vector<ProbeTask> tasks = {blob_task(12, 60, 30, 4.0, 0.5),
                                    blob_task(11, 60, 30, 2.0, 1.5)};
    tasks[0].task_id = "z-task";
    tasks[1].task_id = "a-task";
    tasks[1].phenomenon = "geometry";

    const ProbeReport report =
        run_probe_suite(fx.model, fx.arch, tasks, ProbeConfig{}, "m1");
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].task_id == "a-task");
    CHECK(report.rows[1].task_id == "z-task");
    CHECK(report.phenomenon_means.at("geometry") ==
          (report.rows[0].accuracy + report.rows[1].accuracy) / 2);
}

TEST_CASE("probe suite: deterministic across invocations") {
    const SuiteFixture fx;
    const std::vector<ProbeTask> tasks = {blob_task(13, 60, 30, 4.0, 0.5),
                                          blob_task(14, 60, 30, 3.0, 1.0)};
    const ProbeReport a = run_probe_suite(fx.model, fx.arch, tasks, ProbeConfig{}, "m");
    const ProbeReport b = run_probe_suite(fx.model, fx.arch, tasks, ProbeConfig{}, "m");
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
        CHECK(a.rows[i].macro_f1 == b.rows[i].macro_f1);
    }
    CHECK(a.phenomenon_means == b.phenomenon_means);
}

TEST_CASE("probe suite: probes representations, not raw inputs") {
    const SuiteFixture fx;
    const std::vector<ProbeTask> tasks = {blob_task(15, 60, 30, 4.0, 0.5)};
    const ProbeReport report =
        run_probe_suite(fx.model, fx.arch, tasks, ProbeConfig{}, "m");

    // Manual pipeline: extract representations, then probe them directly.
    ProbeTask rep_task = tasks[0];
    for (LabeledDataset* split : {&rep_task.train, &rep_task.dev, &rep_task.test})
        split->inputs = extract_representation(fx.model, fx.arch, split->inputs);
    const Probe probe = train_probe(rep_task, ProbeConfig{});
    const ProbeMetrics m = evaluate_probe(probe, rep_task.test);
    CHECK(report.rows[0].accuracy == m.accuracy);
    CHECK(report.rows[0].macro_f1 == m.macro_f1);

    CHECK(error_code_of([&] {
        run_probe_suite(fx.model, fx.arch, {}, ProbeConfig{}, "m");
    }) == ErrorCode::parameter_out_of_range);
}

// ---- serialization ----------------------------------------------------------

TEST_CASE("probe report: JSON round trip and CSV layout") {
    ProbeReport report;
    report.model_id = "demo";
    report.rows = {{"demo", "t1", "syntax", 0.875, 0.8},
                   {"demo", "t2", "syntax", 0.625, 0.5}};
    report.phenomenon_means = {{"syntax", 0.75}};

    const ProbeReport back = probe_report_from_json(probe_report_to_json(report), "rt");
    REQUIRE(back.rows.size() == 2);
    CHECK(back.model_id == "demo");
    CHECK(back.rows[1].task_id == "t2");
    CHECK(back.rows[1].accuracy == 0.625);
    CHECK(back.phenomenon_means.at("syntax") == 0.75);

    const std::string csv = probe_report_to_csv(report);
    CHECK(csv ==
          "model_id,task_id,phenomenon,accuracy,macro_f1\n"
          "demo,t1,syntax,0.875,0.8\n"
          "demo,t2,syntax,0.625,0.5\n");

    CHECK(error_code_of([&] {
        probe_report_from_json(nlohmann::json::array(), "bad");
    }) == ErrorCode::manifest_error);
}

// ---- task manifests ---------------------------------------------------------

TEST_CASE("probe tasks: manifest loading resolves paths and inline specs") {
    TempDir tmp;
    std::filesystem::create_directories(tmp / "data");
    const LabeledDataset lit = blob_task(16, 20, 10, 4.0, 0.5).train;
    save_dataset(lit, tmp / "data" / "train.json");

    const nlohmann::json genspec = {
        {"kind", "blobs"}, {"n", 10}, {"seed", 17}, {"separation", 4.0}};
    write_json_file(tmp / "tasks.json",
                    nlohmann::json{{"tasks",
                                    {{{"task_id", "mixed"},
                                      {"phenomenon", "geometry"},
                                      {"train", "data/train.json"},
                                      {"dev", genspec},
                                      {"test", genspec}}}}});

    const auto tasks = load_probe_tasks(tmp / "tasks.json");
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0].task_id == "mixed");
    CHECK(tasks[0].train.inputs == lit.inputs);  // path resolved against manifest dir
    CHECK(tasks[0].dev.size() == 10);
    CHECK(tasks[0].test.size() == 10);
}

TEST_CASE("probe tasks: manifest validation") {
    TempDir tmp;
    auto write_and_load = [&](const nlohmann::json& j) {
        write_json_file(tmp / "t.json", j);
        return error_code_of([&] { load_probe_tasks(tmp / "t.json"); });
    };
    const nlohmann::json split = {{"kind", "blobs"}, {"n", 8}, {"seed", 1}};
    const nlohmann::json good_task = {{"task_id", "a"},
                                      {"phenomenon", "p"},
                                      {"train", split},
                                      {"dev", split},
                                      {"test", split}};

    CHECK(write_and_load({{"tasks", nlohmann::json::array()}}) ==
          ErrorCode::manifest_error);
    CHECK(write_and_load({{"tasks", {good_task, good_task}}}) ==
          ErrorCode::manifest_error);  // duplicate task_id

    nlohmann::json missing = good_task;
    missing.erase("test");
    CHECK(write_and_load({{"tasks", {missing}}}) == ErrorCode::manifest_error);

    nlohmann::json extra = good_task;
    extra["surprise"] = 1;
    CHECK(write_and_load({{"tasks", {extra}}}) == ErrorCode::manifest_error);

    nlohmann::json unnamed = good_task;
    unnamed["task_id"] = "";
    CHECK(write_and_load({{"tasks", {unnamed}}}) == ErrorCode::manifest_error);

    CHECK(error_code_of([&] { load_probe_tasks(tmp / "absent.json"); }) ==
          ErrorCode::io_failure);
}
