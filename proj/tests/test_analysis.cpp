#include <algorithm>
#include <cmath>
#include <doctest.h>

#include "mergeprobe/analysis.hpp"
#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/rng.hpp"
#include "test_util.hpp"

using namespace mergeprobe;
using namespace mergeprobe::testing;

namespace {

// Identity model over 2-D inputs: prediction = argmax of the coordinates,
// ties to class 0. Makes task accuracies exactly controllable.
struct IdentityModel {
    ToyArchitecture arch;
    Checkpoint model;

    IdentityModel() {
        arch.input_dim = 2;
        arch.num_classes = 2;
        model.tensors["layer0.weight"] = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
        model.tensors["layer0.bias"] = Tensor::from({2}, {0.0f, 0.0f});
    }
};

// Dataset of one-hot-ish points; `correct` of them match the identity model's
// prediction, the rest are mislabeled on purpose.
LabeledDataset task_with_accuracy(std::size_t correct, std::size_t total) {
    LabeledDataset ds;
    ds.num_classes = 2;
    ds.inputs.rows = total;
    ds.inputs.cols = 2;
    for (std::size_t i = 0; i < total; ++i) {
        const int cls = static_cast<int>(i % 2);
        ds.inputs.data.push_back(cls == 0 ? 1.0f : 0.0f);
        ds.inputs.data.push_back(cls == 0 ? 0.0f : 1.0f);
        ds.labels.push_back(i < correct ? cls : 1 - cls);
    }
    return ds;
}

}  // namespace

// ---- behavioral evaluation --------------------------------------------------

TEST_CASE("behavior: perfect model scores accuracy 1") {
    const IdentityModel fx;
    const BehaviorSuite suite = {"s", {{"all-correct", task_with_accuracy(6, 6)}}};
    const BehaviorReport report = evaluate_behavior(fx.model, fx.arch, {suite}, "m");
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].accuracy == 1.0);
    CHECK(report.suite_means.at("s") == 1.0);
}

TEST_CASE("behavior: zero-weight model scores 0.5 on a balanced binary task") {
    const IdentityModel fx;
    Checkpoint zero = fx.model;
    for (auto& [name, t] : zero.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);

    // All logits tie, so every prediction is class 0; half the labels match.
    LabeledDataset balanced = task_with_accuracy(8, 8);
    const BehaviorSuite suite = {"s", {{"balanced", balanced}}};
    const BehaviorReport report = evaluate_behavior(zero, fx.arch, {suite}, "m");
    CHECK(report.rows[0].accuracy == 0.5);
}

TEST_CASE("behavior: suite means average member tasks") {
    const IdentityModel fx;
    const BehaviorSuite suite = {"s",
                                 {{"t-a", task_with_accuracy(3, 5)},
                                  {"t-b", task_with_accuracy(4, 5)}}};
    const BehaviorReport report = evaluate_behavior(fx.model, fx.arch, {suite}, "m");
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].accuracy == 0.6);
    CHECK(report.rows[1].accuracy == 0.8);
    CHECK(report.suite_means.at("s") == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("behavior: rows sort by suite then task regardless of input order") {
    const IdentityModel fx;
    const std::vector<BehaviorSuite> suites = {
        {"z-suite", {{"t", task_with_accuracy(2, 2)}}},
        {"a-suite",
         {{"t-later", task_with_accuracy(2, 2)}, {"t-early", task_with_accuracy(2, 2)}}}};
    const BehaviorReport report = evaluate_behavior(fx.model, fx.arch, suites, "m");
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].suite_id == "a-suite");
    CHECK(report.rows[0].task_id == "t-early");
    CHECK(report.rows[1].task_id == "t-later");
    CHECK(report.rows[2].suite_id == "z-suite");
    for (const auto& row : report.rows) CHECK(row.model_id == "m");
}

TEST_CASE("behavior: evaluation errors") {
    const IdentityModel fx;
    CHECK(error_code_of([&] { evaluate_behavior(fx.model, fx.arch, {}, "m"); }) ==
          ErrorCode::parameter_out_of_range);

    LabeledDataset three_class = task_with_accuracy(2, 2);
    three_class.num_classes = 3;
    CHECK(error_code_of([&] {
        evaluate_behavior(fx.model, fx.arch, {{"s", {{"t", three_class}}}}, "m");
    }) == ErrorCode::dimension_mismatch);

    LabeledDataset empty;
    empty.num_classes = 2;
    empty.inputs.cols = 2;
    CHECK(error_code_of([&] {
        evaluate_behavior(fx.model, fx.arch, {{"s", {{"t", empty}}}}, "m");
    }) == ErrorCode::empty_split);

    CHECK(error_code_of([&] {
        evaluate_behavior(random_checkpoint(1), fx.arch,
                          {{"s", {{"t", task_with_accuracy(2, 2)}}}}, "m");
    }) == ErrorCode::architecture_mismatch);
}

TEST_CASE("behavior: report JSON round trip and CSV layout") {
    BehaviorReport report;
    report.model_id = "demo";
    report.rows = {{"demo", "s1", "t1", 0.75}, {"demo", "s1", "t2", 0.5}};
    report.suite_means = {{"s1", 0.625}};

    const BehaviorReport back =
        behavior_report_from_json(behavior_report_to_json(report), "rt");
    REQUIRE(back.rows.size() == 2);
    CHECK(back.model_id == "demo");
    CHECK(back.rows[1].accuracy == 0.5);
    CHECK(back.suite_means.at("s1") == 0.625);

    CHECK(behavior_report_to_csv(report) ==
          "model_id,suite_id,task_id,accuracy\n"
          "demo,s1,t1,0.75\n"
          "demo,s1,t2,0.5\n");

    CHECK(error_code_of([&] {
        behavior_report_from_json(nlohmann::json{{"rows", 1}}, "bad");
    }) == ErrorCode::manifest_error);
}

TEST_CASE("behavior: suite manifest loading and validation") {
    TempDir tmp;
    save_dataset(task_with_accuracy(3, 4), tmp / "t.json");
    const nlohmann::json genspec = {{"kind", "blobs"}, {"n", 8}, {"seed", 1}};
    write_json_file(
        tmp / "suites.json",
        nlohmann::json{
            {"suites",
             {{{"suite_id", "s1"},
               {"tasks",
                {{{"task_id", "from-file"}, {"data", "t.json"}},
                 {{"task_id", "generated"}, {"data", genspec}}}}}}}});
    const auto suites = load_behavior_suites(tmp / "suites.json");
    REQUIRE(suites.size() == 1);
    REQUIRE(suites[0].tasks.size() == 2);
    CHECK(suites[0].suite_id == "s1");
    CHECK(suites[0].tasks[0].data.size() == 4);
    CHECK(suites[0].tasks[1].data.size() == 8);

    auto write_and_load = [&](const nlohmann::json& j) {
        write_json_file(tmp / "bad.json", j);
        return error_code_of([&] { load_behavior_suites(tmp / "bad.json"); });
    };
    const nlohmann::json task = {{"task_id", "t"}, {"data", genspec}};
    const nlohmann::json suite = {{"suite_id", "s"}, {"tasks", {task}}};
    CHECK(write_and_load({{"suites", nlohmann::json::array()}}) ==
          ErrorCode::manifest_error);
    CHECK(write_and_load({{"suites", {suite, suite}}}) == ErrorCode::manifest_error);
    CHECK(write_and_load({{"suites",
                           {{{"suite_id", "s"}, {"tasks", {task, task}}}}}}) ==
          ErrorCode::manifest_error);
    CHECK(write_and_load({{"suites",
                           {{{"suite_id", "s"},
                             {"tasks", {{{"task_id", "t"}}}}}}}}) ==
          ErrorCode::manifest_error);
    CHECK(write_and_load({{"suites",
                           {{{"suite_id", "s"},
                             {"tasks",
                              {{{"task_id", "t"}, {"data", genspec}, {"x", 1}}}}}}}}) ==
          ErrorCode::manifest_error);
    CHECK(error_code_of([&] { load_behavior_suites(tmp / "absent.json"); }) ==
          ErrorCode::io_failure);
}

// ---- categorization ---------------------------------------------------------

TEST_CASE("categorize: the documented three-way rule") {
    CHECK(categorize_vs_parents(0.5, 0.4, 0.6) == Category::between);
    CHECK(categorize_vs_parents(0.7, 0.4, 0.6) == Category::better);
    CHECK(categorize_vs_parents(0.3, 0.4, 0.6) == Category::worse);
    // Boundaries land in Between: not strictly above max / below min.
    CHECK(categorize_vs_parents(0.6, 0.4, 0.6) == Category::between);
    CHECK(categorize_vs_parents(0.4, 0.4, 0.6) == Category::between);
}

TEST_CASE("categorize: epsilon widens the Between band") {
    CHECK(categorize_vs_parents(0.65, 0.4, 0.6, 0.1) == Category::between);
    CHECK(categorize_vs_parents(0.71, 0.4, 0.6, 0.1) == Category::better);
    CHECK(categorize_vs_parents(0.35, 0.4, 0.6, 0.1) == Category::between);
    CHECK(categorize_vs_parents(0.29, 0.4, 0.6, 0.1) == Category::worse);
}

TEST_CASE("categorize: symmetric in the parents") {
    RngStream rng(derive_key(5, "cat-sym", 0));
    for (int i = 0; i < 50; ++i) {
        const double m = rng.unit(), a = rng.unit(), b = rng.unit();
        const double eps = rng.unit() * 0.2;
        CHECK(categorize_vs_parents(m, a, b, eps) == categorize_vs_parents(m, b, a, eps));
    }
}

TEST_CASE("categorize: rejects out-of-range inputs") {
    CHECK(error_code_of([] { categorize_vs_parents(1.5, 0.4, 0.6); }) ==
          ErrorCode::parameter_out_of_range);
    CHECK(error_code_of([] { categorize_vs_parents(0.5, -0.1, 0.6); }) ==
          ErrorCode::parameter_out_of_range);
    CHECK(error_code_of([] { categorize_vs_parents(0.5, 0.4, 0.6, -0.01); }) ==
          ErrorCode::parameter_out_of_range);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(error_code_of([&] { categorize_vs_parents(nan, 0.4, 0.6); }) ==
          ErrorCode::parameter_out_of_range);
}

TEST_CASE("compare_scores: shared tasks only, sorted, categories counted") {
    const std::map<std::string, double> merged = {
        {"t1", 0.9}, {"t2", 0.5}, {"t3", 0.1}, {"only-merged", 1.0}};
    const std::map<std::string, double> pa = {
        {"t1", 0.4}, {"t2", 0.4}, {"t3", 0.4}, {"only-a", 0.2}};
    const std::map<std::string, double> pb = {{"t1", 0.6}, {"t2", 0.6}, {"t3", 0.6}};

    const auto rows = compare_scores("merged", merged, pa, pb, 0.0);
    REQUIRE(rows.size() == 3);  // tasks shared by all three models
    CHECK(rows[0].task_id == "t1");
    CHECK(rows[0].category == Category::better);
    CHECK(rows[1].category == Category::between);
    CHECK(rows[2].category == Category::worse);
    CHECK(rows[0].parent_a_score == 0.4);
    CHECK(rows[0].parent_b_score == 0.6);
    CHECK(rows[0].merged_score == 0.9);
    CHECK(rows[0].merged_model_id == "merged");
}

TEST_CASE("compare_scores: serialization formats") {
    const auto rows =
        compare_scores("m", {{"t", 0.75}}, {{"t", 0.5}}, {{"t", 0.25}}, 0.05);
    const nlohmann::json j = comparisons_to_json(rows);
    REQUIRE(j.is_array());
    CHECK(j[0]["category"] == "Better");
    CHECK(j[0]["epsilon"] == 0.05);

    CHECK(comparisons_to_csv(rows) ==
          "merged_model_id,task_id,category,parent_a_score,parent_b_score,merged_score,"
          "epsilon\n"
          "m,t,Better,0.5,0.25,0.75,0.05\n");
}

// ---- correlation coefficients -----------------------------------------------

TEST_CASE("pearson: exact endpoints and the hand-computed example") {
    const std::vector<double> x = {1, 2, 3, 4};
    CHECK(pearson(x, x) == 1.0);

    std::vector<double> anti;
    for (double v : x) anti.push_back(-2.0 * v + 7.0);
    CHECK(pearson(x, anti) == -1.0);

    CHECK(pearson(x, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("pearson: symmetric and affine-invariant") {
    RngStream rng(derive_key(6, "pearson-props", 0));
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(6), y(6);
        for (auto& v : x) v = rng.uniform(-3.0, 3.0);
        for (auto& v : y) v = rng.uniform(-3.0, 3.0);
        const double r = pearson(x, y);
        CHECK(pearson(y, x) == r);

        std::vector<double> scaled;
        for (double v : x) scaled.push_back(2.5 * v + 10.0);
        CHECK(std::fabs(pearson(scaled, y) - r) <= 1e-12);
    }
}

TEST_CASE("pearson: error codes") {
    CHECK(error_code_of([] { pearson({1, 2, 3}, {1, 2}); }) ==
          ErrorCode::dimension_mismatch);
    CHECK(error_code_of([] { pearson({1, 2}, {1, 2}); }) == ErrorCode::insufficient_data);
    CHECK(error_code_of([] { pearson({5, 5, 5}, {1, 2, 3}); }) ==
          ErrorCode::constant_input);
    CHECK(error_code_of([] { pearson({1, 2, 3}, {4, 4, 4}); }) ==
          ErrorCode::constant_input);
}

TEST_CASE("ranks: ties receive average ranks") {
    CHECK(fractional_ranks({10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
    CHECK(fractional_ranks({3, 1, 2}) == std::vector<double>{3, 1, 2});
    CHECK(fractional_ranks({7, 7, 7}) == std::vector<double>{2, 2, 2});
}

TEST_CASE("spearman: rank-based endpoints and the tie example") {
    // exp is strictly monotone, so ranks — and rho — are those of x itself.
    const std::vector<double> x = {0.1, 1.5, -2.0, 0.7, 3.0};
    std::vector<double> ex;
    for (double v : x) ex.push_back(std::exp(v));
    CHECK(spearman(x, ex) == 1.0);

    CHECK(spearman({1, 2, 3}, {3, 2, 1}) == -1.0);

    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) ==
          doctest::Approx(0.9486832980505138).epsilon(1e-12));
}

TEST_CASE("spearman: invariant under strictly monotone transforms") {
    RngStream rng(derive_key(7, "spearman-props", 0));
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(7), y(7);
        for (auto& v : x) v = rng.uniform(-2.0, 2.0);
        for (auto& v : y) v = rng.uniform(-2.0, 2.0);
        const double rho = spearman(x, y);

        std::vector<double> tx;
        for (double v : x) tx.push_back(std::exp(v));  // same ranks exactly
        CHECK(spearman(tx, y) == rho);
    }
}

// ---- correlation matrix -----------------------------------------------------

namespace {

ProbeReport probe_means(const std::string& model_id,
                        std::map<std::string, double> means) {
    ProbeReport r;
    r.model_id = model_id;
    r.phenomenon_means = std::move(means);
    return r;
}

BehaviorReport behavior_means(const std::string& model_id,
                              std::map<std::string, double> means) {
    BehaviorReport r;
    r.model_id = model_id;
    r.suite_means = std::move(means);
    return r;
}

}  // namespace

TEST_CASE("correlation matrix: identical score vectors give all ones") {
    std::vector<ProbeReport> probes;
    std::vector<BehaviorReport> behaviors;
    const std::vector<double> scores = {0.2, 0.5, 0.9, 0.4};
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::string id = "m" + std::to_string(i);
        probes.push_back(probe_means(id, {{"phen", scores[i]}}));
        behaviors.push_back(behavior_means(id, {{"suite", scores[i]}}));
    }
    for (CorrMethod method : {CorrMethod::pearson, CorrMethod::spearman}) {
        const CorrelationMatrix m = correlation_matrix(probes, behaviors, method);
        REQUIRE(m.row_labels == std::vector<std::string>{"phen"});
        REQUIRE(m.col_labels == std::vector<std::string>{"suite"});
        const CorrelationCell& cell = m.at(0, 0);
        CHECK(cell.defined);
        CHECK(cell.n == 4);
        CHECK(cell.value == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("correlation matrix: fewer than three shared models leaves cells undefined") {
    const std::vector<ProbeReport> probes = {probe_means("a", {{"p", 0.1}}),
                                             probe_means("b", {{"p", 0.9}})};
    const std::vector<BehaviorReport> behaviors = {behavior_means("a", {{"s", 0.3}}),
                                                   behavior_means("b", {{"s", 0.7}})};
    const CorrelationMatrix m = correlation_matrix(probes, behaviors, CorrMethod::pearson);
    const CorrelationCell& cell = m.at(0, 0);
    CHECK_FALSE(cell.defined);
    CHECK(cell.n == 2);
}

TEST_CASE("correlation matrix: five-model fixture matches the offline oracle") {
    // Hand-built scores; expected coefficients recomputed independently
    // (two-pass mean/covariance, average ranks) and frozen to 1e-12.
    const std::vector<double> morph = {0.52, 0.61, 0.58, 0.70, 0.66};
    const std::vector<double> synt = {0.45, 0.50, 0.49, 0.55, 0.41};
    const std::vector<double> alpha = {0.33, 0.41, 0.38, 0.52, 0.47};
    const std::vector<double> beta = {0.60, 0.58, 0.62, 0.66, 0.55};

    std::vector<ProbeReport> probes;
    std::vector<BehaviorReport> behaviors;
    for (std::size_t i = 0; i < 5; ++i) {
        const std::string id = "m" + std::to_string(i);
        probes.push_back(probe_means(id, {{"morphology", morph[i]}, {"syntax", synt[i]}}));
        behaviors.push_back(behavior_means(id, {{"alpha", alpha[i]}, {"beta", beta[i]}}));
    }

    const CorrelationMatrix p = correlation_matrix(probes, behaviors, CorrMethod::pearson);
    REQUIRE(p.row_labels == std::vector<std::string>{"morphology", "syntax"});
    REQUIRE(p.col_labels == std::vector<std::string>{"alpha", "beta"});
    CHECK(p.at(0, 0).value == doctest::Approx(0.9954738343765416).epsilon(1e-12));
    CHECK(p.at(0, 1).value == doctest::Approx(0.19501782717615304).epsilon(1e-12));
    CHECK(p.at(1, 0).value == doctest::Approx(0.35450423065341136).epsilon(1e-12));
    CHECK(p.at(1, 1).value == doctest::Approx(0.8543936913005732).epsilon(1e-12));

    const CorrelationMatrix s = correlation_matrix(probes, behaviors, CorrMethod::spearman);
    CHECK(s.at(0, 0).value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.at(0, 1).value == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.at(1, 0).value == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(s.at(1, 1).value == doctest::Approx(0.7).epsilon(1e-12));

    for (const auto& m : {p, s})
        for (const auto& cell : m.cells) {
            CHECK(cell.defined);
            CHECK(cell.n == 5);
            CHECK(cell.value >= -1.0);
            CHECK(cell.value <= 1.0);
        }
}

TEST_CASE("correlation matrix: constant scores mark the cell undefined, not zero") {
    std::vector<ProbeReport> probes;
    std::vector<BehaviorReport> behaviors;
    for (int i = 0; i < 4; ++i) {
        const std::string id = "m" + std::to_string(i);
        probes.push_back(probe_means(id, {{"p", 0.5}}));  // constant across models
        behaviors.push_back(behavior_means(id, {{"s", 0.1 * i}}));
    }
    const CorrelationMatrix m = correlation_matrix(probes, behaviors, CorrMethod::pearson);
    CHECK_FALSE(m.at(0, 0).defined);
    CHECK(m.at(0, 0).n == 4);
}

TEST_CASE("correlation matrix: partial coverage shrinks a cell's n") {
    std::vector<ProbeReport> probes;
    std::vector<BehaviorReport> behaviors;
    for (int i = 0; i < 4; ++i) {
        const std::string id = "m" + std::to_string(i);
        std::map<std::string, double> means = {{"p", 0.1 + 0.2 * i}};
        if (i != 0) means["q"] = 0.9 - 0.2 * i;  // model m0 lacks phenomenon q
        probes.push_back(probe_means(id, std::move(means)));
        behaviors.push_back(behavior_means(id, {{"s", 0.05 + 0.1 * i}}));
    }
    const CorrelationMatrix m = correlation_matrix(probes, behaviors, CorrMethod::pearson);
    REQUIRE(m.row_labels == std::vector<std::string>{"p", "q"});
    CHECK(m.at(0, 0).n == 4);
    CHECK(m.at(1, 0).n == 3);
    CHECK(m.at(1, 0).defined);

    CHECK(error_code_of([&] {
        auto dup = probes;
        dup.push_back(probes[0]);
        correlation_matrix(dup, behaviors, CorrMethod::pearson);
    }) == ErrorCode::manifest_error);
}

TEST_CASE("correlation matrix: serialization uses null for undefined cells") {
    CorrelationMatrix m;
    m.method = CorrMethod::spearman;
    m.row_labels = {"p"};
    m.col_labels = {"s1", "s2"};
    m.cells = {{0.5, true, 4}, {0.0, false, 2}};

    const nlohmann::json j = correlation_matrix_to_json(m);
    CHECK(j["method"] == "spearman");
    CHECK(j["values"][0][0] == 0.5);
    CHECK(j["values"][0][1].is_null());
    CHECK(j["n"][0] == nlohmann::json::array({4, 2}));
    CHECK(j.dump().find("nan") == std::string::npos);

    CHECK(correlation_matrix_to_csv(m) ==
          "row,column,value\n"
          "p,s1,0.5\n"
          "p,s2,\n");
}
