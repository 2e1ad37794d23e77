#include "mergeprobe/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "mergeprobe/analysis.hpp"
#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/rng.hpp"
#include "mergeprobe/safetensors.hpp"
#include "mergeprobe/sha256.hpp"

#ifndef MERGEPROBE_VERSION
#define MERGEPROBE_VERSION "0.0.0"
#endif

namespace mergeprobe {

namespace {

struct Ctx {
    const RunManifest& manifest;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    int jobs = 1;
};

std::filesystem::path ck_path(const Ctx& c, const std::string& name) {
    return c.out / "checkpoints" / (name + ".safetensors");
}

Checkpoint load_model(const Ctx& c, const std::string& name) {
    const std::filesystem::path p = ck_path(c, name);
    if (!std::filesystem::is_regular_file(p))
        fail(ErrorCode::io_failure,
             "no checkpoint for model '" + name +
                 "' — run the materialize/merge stages first (" + p.string() + ")");
    return load_checkpoint(p);
}

/// Work items run under an index-pulling thread pool; the lowest-index
/// exception wins, so failures are reported deterministically regardless of
/// scheduling.
void parallel_for(std::size_t count, int jobs,
                  const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---- stages -----------------------------------------------------------------

void stage_materialize(Ctx& c) {
    std::filesystem::create_directories(c.out / "checkpoints");
    const RunManifest& m = c.manifest;

    std::map<std::string, Checkpoint> done;
    std::function<const Checkpoint&(const std::string&)> get =
        [&](const std::string& name) -> const Checkpoint& {
        auto it = done.find(name);
        if (it != done.end()) return it->second;

        const ModelSource& src = name == "base" ? m.base : m.parents.at(name);
        Checkpoint ck;
        if (src.is_checkpoint) {
            ck = load_checkpoint(src.checkpoint_path);
            check_conformance(ck, m.arch);
        } else {
            LabeledDataset data =
                src.train.data.is_string()
                    ? load_dataset_or_generate(src.train.data.get<std::string>())
                    : dataset_from_reference(src.train.data, name + ".train.data");
            const Checkpoint* init = nullptr;
            if (!src.train.init_from.empty())
                init = &get(src.train.init_from);  // std::map nodes stay put
            const std::uint64_t seed = src.train.has_seed
                                           ? src.train.seed
                                           : derive_key(c.seed, "train/" + name, 0);
            ck = train_toy_model(m.arch, data, src.train.epochs, src.train.learning_rate,
                                 seed, init);
        }
        ck.metadata["model_id"] = name;
        save_checkpoint(ck, ck_path(c, name));
        return done.emplace(name, std::move(ck)).first->second;
    };

    if (m.has_base) get("base");
    for (const auto& [name, src] : m.parents) {
        (void)src;
        get(name);
    }

    nlohmann::json parents = nlohmann::json::array();
    for (const auto& [name, src] : m.parents) {
        (void)src;
        parents.push_back(name);
    }
    nlohmann::json merged = nlohmann::json::array();
    for (const auto& r : m.recipes) merged.push_back(r.name);
    write_json_file(c.out / "models.json",
                    {{"base", m.has_base ? nlohmann::json("base") : nlohmann::json()},
                     {"parents", std::move(parents)},
                     {"merged", std::move(merged)},
                     {"evaluated", evaluated_models(m)}});
}

void stage_merge(Ctx& c) {
    std::filesystem::create_directories(c.out / "checkpoints");
    for (const MergeRecipe& declared : c.manifest.recipes) {
        MergeRecipe recipe = declared;
        if (recipe.method == MergeMethod::dare_ties && !recipe.has_seed) {
            recipe.seed = derive_key(c.seed, "recipe/" + recipe.name, 0);
            recipe.has_seed = true;
        }

        std::vector<Checkpoint> parents;
        parents.reserve(recipe.parents.size());
        for (const std::string& p : recipe.parents) parents.push_back(load_model(c, p));
        Checkpoint base;
        const bool needs_base = !recipe.base.empty();
        if (needs_base) base = load_model(c, recipe.base);

        Checkpoint out = run_merge(recipe, parents, needs_base ? &base : nullptr);
        out.metadata["model_id"] = recipe.name;
        out.metadata["merge.parents"] = nlohmann::json(recipe.parents).dump();
        if (needs_base) out.metadata["merge.base"] = recipe.base;
        save_checkpoint(out, ck_path(c, recipe.name));
    }
}

std::vector<BehaviorSuite> load_all_suites(const RunManifest& m) {
    std::vector<BehaviorSuite> suites;
    std::set<std::string> ids;
    for (const auto& path : m.behavior_suites)
        for (auto& suite : load_behavior_suites(path)) {
            if (!ids.insert(suite.suite_id).second)
                fail(ErrorCode::manifest_error,
                     "duplicate suite id '" + suite.suite_id + "' across suite files");
            suites.push_back(std::move(suite));
        }
    return suites;
}

std::vector<ProbeTask> load_all_tasks(const RunManifest& m) {
    std::vector<ProbeTask> tasks;
    std::set<std::string> ids;
    for (const auto& path : m.probe_tasks)
        for (auto& task : load_probe_tasks(path)) {
            if (!ids.insert(task.task_id).second)
                fail(ErrorCode::manifest_error,
                     "duplicate task id '" + task.task_id + "' across task files");
            tasks.push_back(std::move(task));
        }
    return tasks;
}

void stage_behave(Ctx& c) {
    std::filesystem::create_directories(c.out / "behavior");
    const std::vector<BehaviorSuite> suites = load_all_suites(c.manifest);
    const std::vector<std::string> models = evaluated_models(c.manifest);
    parallel_for(models.size(), c.jobs, [&](std::size_t i) {
        const std::string& name = models[i];
        const Checkpoint ck = load_model(c, name);
        const BehaviorReport report = evaluate_behavior(ck, c.manifest.arch, suites, name);
        write_json_file(c.out / "behavior" / (name + ".json"),
                        behavior_report_to_json(report));
        write_text_file(c.out / "behavior" / (name + ".csv"),
                        behavior_report_to_csv(report));
    });
}

void stage_probe(Ctx& c) {
    std::filesystem::create_directories(c.out / "probes");
    const std::vector<ProbeTask> tasks = load_all_tasks(c.manifest);
    const std::vector<std::string> models = evaluated_models(c.manifest);
    parallel_for(models.size(), c.jobs, [&](std::size_t i) {
        const std::string& name = models[i];
        const Checkpoint ck = load_model(c, name);
        const ProbeReport report =
            run_probe_suite(ck, c.manifest.arch, tasks, ProbeConfig{}, name);
        write_json_file(c.out / "probes" / (name + ".json"), probe_report_to_json(report));
        write_text_file(c.out / "probes" / (name + ".csv"), probe_report_to_csv(report));
    });
}

void stage_categorize(Ctx& c) {
    std::filesystem::create_directories(c.out / "comparisons");
    const RunManifest& m = c.manifest;

    struct Side {
        const char* dir;
        const char* out_name;
        // task_id -> score extraction from a report file
        std::function<std::map<std::string, double>(const nlohmann::json&)> scores;
    };
    const Side sides[2] = {
        {"behavior", "behavior",
         [](const nlohmann::json& j) {
             std::map<std::string, double> out;
             const BehaviorReport r = behavior_report_from_json(j, "behavior report");
             for (const auto& row : r.rows)
                 out[row.suite_id + "/" + row.task_id] = row.accuracy;
             return out;
         }},
        {"probes", "probes",
         [](const nlohmann::json& j) {
             std::map<std::string, double> out;
             const ProbeReport r = probe_report_from_json(j, "probe report");
             for (const auto& row : r.rows) out[row.task_id] = row.accuracy;
             return out;
         }},
    };

    for (const Side& side : sides) {
        std::vector<ParentComparisonRow> all_rows;
        nlohmann::json counts = nlohmann::json::object();
        for (const MergeRecipe& recipe : m.recipes) {
            const std::string pa = recipe.parents.front();
            const std::string pb = recipe.parents.size() > 1 ? recipe.parents[1] : pa;
            auto read_scores = [&](const std::string& model) {
                return side.scores(read_json_file(
                    c.out / side.dir / (model + ".json"), ErrorCode::io_failure));
            };
            const auto rows = compare_scores(recipe.name, read_scores(recipe.name),
                                             read_scores(pa), read_scores(pb), m.epsilon);
            int better = 0, between = 0, worse = 0;
            for (const auto& row : rows) {
                if (row.category == Category::better) ++better;
                else if (row.category == Category::worse) ++worse;
                else ++between;
            }
            counts[recipe.name] = {{"Better", better}, {"Between", between},
                                   {"Worse", worse}};
            all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        }
        write_json_file(c.out / "comparisons" / (std::string(side.out_name) + ".json"),
                        {{"epsilon", m.epsilon},
                         {"rows", comparisons_to_json(all_rows)},
                         {"counts", std::move(counts)}});
        write_text_file(c.out / "comparisons" / (std::string(side.out_name) + ".csv"),
                        comparisons_to_csv(all_rows));
    }
}

void stage_correlate(Ctx& c) {
    std::filesystem::create_directories(c.out / "correlation");
    std::vector<ProbeReport> probes;
    std::vector<BehaviorReport> behaviors;
    for (const std::string& name : evaluated_models(c.manifest)) {
        probes.push_back(probe_report_from_json(
            read_json_file(c.out / "probes" / (name + ".json"), ErrorCode::io_failure),
            name));
        behaviors.push_back(behavior_report_from_json(
            read_json_file(c.out / "behavior" / (name + ".json"), ErrorCode::io_failure),
            name));
    }
    for (const CorrMethod method : {CorrMethod::pearson, CorrMethod::spearman}) {
        const CorrelationMatrix matrix = correlation_matrix(probes, behaviors, method);
        const std::string stem = corr_method_name(method);
        write_json_file(c.out / "correlation" / (stem + ".json"),
                        correlation_matrix_to_json(matrix));
        write_text_file(c.out / "correlation" / (stem + ".csv"),
                        correlation_matrix_to_csv(matrix));
    }
}

void stage_report(Ctx& c) {
    const RunManifest& m = c.manifest;
    nlohmann::json models = nlohmann::json::object();
    auto add_model = [&](const std::string& name, const char* role) {
        const std::string rel = "checkpoints/" + name + ".safetensors";
        models[name] = {{"role", role},
                        {"checkpoint", rel},
                        {"sha256", sha256_file(c.out / rel)}};
    };
    if (m.has_base) add_model("base", "base");
    for (const auto& [name, src] : m.parents) {
        (void)src;
        add_model(name, "parent");
    }
    for (const auto& r : m.recipes) add_model(r.name, "merged");

    nlohmann::json outputs;
    nlohmann::json behavior = nlohmann::json::array(), probes = nlohmann::json::array();
    for (const std::string& name : evaluated_models(m)) {
        behavior.push_back("behavior/" + name + ".json");
        behavior.push_back("behavior/" + name + ".csv");
        probes.push_back("probes/" + name + ".json");
        probes.push_back("probes/" + name + ".csv");
    }
    outputs["behavior"] = std::move(behavior);
    outputs["probes"] = std::move(probes);
    outputs["comparisons"] = {"comparisons/behavior.json", "comparisons/behavior.csv",
                              "comparisons/probes.json", "comparisons/probes.csv"};
    outputs["correlation"] = {"correlation/pearson.json", "correlation/pearson.csv",
                              "correlation/spearman.json", "correlation/spearman.csv"};

    write_json_file(c.out / "report.json",
                    {{"tool", {{"name", "mergeprobe"}, {"version", MERGEPROBE_VERSION}}},
                     {"manifest_sha256", sha256_file(m.source_path)},
                     {"seed", c.seed},
                     {"epsilon", m.epsilon},
                     {"models", std::move(models)},
                     {"outputs", std::move(outputs)}});
}

}  // namespace

const std::vector<std::string>& pipeline_stage_names() {
    static const std::vector<std::string> names = {
        "materialize", "merge", "behave", "probe", "categorize", "correlate", "report"};
    return names;
}

PipelineResult run_pipeline(const RunManifest& manifest, const PipelineOptions& options) {
    Ctx c{manifest,
          options.out_dir.empty() ? manifest.out_dir : options.out_dir,
          options.has_seed ? options.seed : manifest.seed,
          std::max(1, options.jobs)};
    if (c.out.empty())
        fail(ErrorCode::manifest_error,
             "no output directory: set out_dir in the manifest or pass --out");

    using StageFn = void (*)(Ctx&);
    static const std::map<std::string, StageFn> stage_fns = {
        {"materialize", stage_materialize}, {"merge", stage_merge},
        {"behave", stage_behave},           {"probe", stage_probe},
        {"categorize", stage_categorize},   {"correlate", stage_correlate},
        {"report", stage_report}};

    std::vector<std::string> selected;
    if (options.stage.empty()) {
        selected = pipeline_stage_names();
    } else {
        if (!stage_fns.count(options.stage))
            fail(ErrorCode::manifest_error, "unknown stage '" + options.stage + "'");
        selected = {options.stage};
    }

    std::filesystem::create_directories(c.out);
    std::filesystem::remove(c.out / "FAILED");

    PipelineResult result;
    result.out_dir = c.out;
    nlohmann::json timings = nlohmann::json::array();
    const auto run_start = std::chrono::steady_clock::now();
    for (const std::string& stage : selected) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            stage_fns.at(stage)(c);
        } catch (const std::exception& e) {
            write_text_file(c.out / "FAILED",
                            "stage: " + stage + "\nerror: " + e.what() + "\n");
            throw;
        } catch (...) {
            write_text_file(c.out / "FAILED", "stage: " + stage + "\nerror: unknown\n");
            throw;
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        timings.push_back({{"stage", stage}, {"seconds", dt.count()}});
        result.stages_run.push_back(stage);
    }
    const std::chrono::duration<double> total =
        std::chrono::steady_clock::now() - run_start;
    write_json_file(c.out / "timings.json",
                    {{"stages", std::move(timings)}, {"total_seconds", total.count()}});
    return result;
}

}  // namespace mergeprobe
