#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mergeprobe/analysis.hpp"
#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/pipeline.hpp"
#include "mergeprobe/safetensors.hpp"

#ifndef MERGEPROBE_VERSION
#define MERGEPROBE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace mergeprobe;

namespace {

std::filesystem::path resolve_against(const fs::path& anchor_file, const std::string& ref) {
    fs::path p = ref;
    if (p.is_relative()) p = anchor_file.parent_path() / p;
    return p;
}

ToyArchitecture arch_for(const Checkpoint& ck, const fs::path& arch_path) {
    if (!arch_path.empty())
        return arch_from_json(read_json_file(arch_path, ErrorCode::manifest_error),
                              arch_path.string());
    const auto it = ck.metadata.find("toy_arch");
    if (it == ck.metadata.end())
        fail(ErrorCode::manifest_error,
             "checkpoint carries no toy_arch metadata; pass --arch");
    const nlohmann::json j = nlohmann::json::parse(it->second, nullptr, false);
    if (j.is_discarded())
        fail(ErrorCode::malformed_container, "toy_arch metadata is not valid JSON");
    return arch_from_json(j, "toy_arch metadata");
}

std::string model_id_for(const Checkpoint& ck, const fs::path& model_path,
                         const std::string& flag) {
    if (!flag.empty()) return flag;
    const auto it = ck.metadata.find("model_id");
    if (it != ck.metadata.end() && !it->second.empty()) return it->second;
    return model_path.stem().string();
}

void cmd_run(const fs::path& manifest_path, const fs::path& out, bool has_seed,
             std::uint64_t seed, int jobs, const std::string& stage) {
    const RunManifest manifest = validate_manifest(manifest_path);
    PipelineOptions options;
    options.out_dir = out;
    options.has_seed = has_seed;
    options.seed = seed;
    options.jobs = jobs;
    options.stage = stage;
    const PipelineResult result = run_pipeline(manifest, options);
    std::cout << "stages:";
    for (const std::string& s : result.stages_run) std::cout << ' ' << s;
    std::cout << "\noutput: " << result.out_dir.string() << '\n';
}

void cmd_merge(const fs::path& recipe_path, const fs::path& out) {
    const nlohmann::json j = read_json_file(recipe_path, ErrorCode::manifest_error);
    const MergeRecipe recipe = parse_recipe(j, recipe_path.string());

    std::vector<Checkpoint> parents;
    parents.reserve(recipe.parents.size());
    for (const std::string& ref : recipe.parents)
        parents.push_back(load_checkpoint(resolve_against(recipe_path, ref)));
    Checkpoint base;
    const bool needs_base = !recipe.base.empty();
    if (needs_base) base = load_checkpoint(resolve_against(recipe_path, recipe.base));

    const Checkpoint merged = run_merge(recipe, parents, needs_base ? &base : nullptr);
    save_checkpoint(merged, out);
    std::cout << "wrote " << out.string() << '\n';
}

void cmd_gen_data(const fs::path& spec_path, const fs::path& out) {
    const nlohmann::json j = read_json_file(spec_path, ErrorCode::manifest_error);
    const GenSpec spec = parse_gen_spec(j, spec_path.string());
    if (spec.splits.empty()) {
        save_dataset(generate_dataset(spec), out);
        std::cout << "wrote " << out.string() << '\n';
        return;
    }
    for (const auto& [name, ds] : generate_splits(spec)) {
        const fs::path target = out / (name + ".json");
        save_dataset(ds, target);
        std::cout << "wrote " << target.string() << '\n';
    }
}

void cmd_behave(const fs::path& model_path, const std::vector<fs::path>& suite_files,
                const fs::path& arch_path, const std::string& id_flag,
                const fs::path& out, const fs::path& csv) {
    const Checkpoint ck = load_checkpoint(model_path);
    const ToyArchitecture arch = arch_for(ck, arch_path);
    std::vector<BehaviorSuite> suites;
    std::set<std::string> seen;
    for (const fs::path& f : suite_files)
        for (auto& suite : load_behavior_suites(f)) {
            if (!seen.insert(suite.suite_id).second)
                fail(ErrorCode::manifest_error,
                     "duplicate suite id '" + suite.suite_id + "' across suite files");
            suites.push_back(std::move(suite));
        }
    const BehaviorReport report =
        evaluate_behavior(ck, arch, suites, model_id_for(ck, model_path, id_flag));
    write_json_file(out, behavior_report_to_json(report));
    if (!csv.empty()) write_text_file(csv, behavior_report_to_csv(report));
    for (const auto& [suite_id, mean] : report.suite_means)
        std::cout << suite_id << ": " << fmt_double(mean) << '\n';
    std::cout << "wrote " << out.string() << '\n';
}

void cmd_probe(const fs::path& model_path, const std::vector<fs::path>& task_files,
               const fs::path& arch_path, const std::string& id_flag, const fs::path& out,
               const fs::path& csv, const ProbeConfig& config) {
    const Checkpoint ck = load_checkpoint(model_path);
    const ToyArchitecture arch = arch_for(ck, arch_path);
    std::vector<ProbeTask> tasks;
    std::set<std::string> seen;
    for (const fs::path& f : task_files)
        for (auto& task : load_probe_tasks(f)) {
            if (!seen.insert(task.task_id).second)
                fail(ErrorCode::manifest_error,
                     "duplicate task id '" + task.task_id + "' across task files");
            tasks.push_back(std::move(task));
        }
    const ProbeReport report =
        run_probe_suite(ck, arch, tasks, config, model_id_for(ck, model_path, id_flag));
    write_json_file(out, probe_report_to_json(report));
    if (!csv.empty()) write_text_file(csv, probe_report_to_csv(report));
    for (const auto& [phenomenon, mean] : report.phenomenon_means)
        std::cout << phenomenon << ": " << fmt_double(mean) << '\n';
    std::cout << "wrote " << out.string() << '\n';
}

void cmd_correlate(const std::vector<fs::path>& probe_files,
                   const std::vector<fs::path>& behavior_files,
                   const std::string& method, const fs::path& out) {
    std::vector<ProbeReport> probes;
    for (const fs::path& f : probe_files)
        probes.push_back(
            probe_report_from_json(read_json_file(f, ErrorCode::io_failure), f.string()));
    std::vector<BehaviorReport> behaviors;
    for (const fs::path& f : behavior_files)
        behaviors.push_back(behavior_report_from_json(
            read_json_file(f, ErrorCode::io_failure), f.string()));

    std::vector<CorrMethod> methods;
    if (method == "pearson" || method == "both") methods.push_back(CorrMethod::pearson);
    if (method == "spearman" || method == "both") methods.push_back(CorrMethod::spearman);
    for (const CorrMethod m : methods) {
        const CorrelationMatrix matrix = correlation_matrix(probes, behaviors, m);
        const std::string stem = corr_method_name(m);
        write_json_file(out / (stem + ".json"), correlation_matrix_to_json(matrix));
        write_text_file(out / (stem + ".csv"), correlation_matrix_to_csv(matrix));
        std::cout << "wrote " << (out / (stem + ".json")).string() << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"merge toy-model checkpoints and measure what the merge preserves"};
    app.set_version_flag("--version", MERGEPROBE_VERSION);
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    // run
    fs::path run_manifest, run_out;
    std::uint64_t run_seed = 0;
    int run_jobs = 1;
    std::string run_stage;
    auto* run = app.add_subcommand("run", "Execute the pipeline from a run manifest");
    run->add_option("--manifest", run_manifest, "Run manifest (JSON)")->required();
    run->add_option("--out", run_out, "Output directory (overrides the manifest)");
    auto* run_seed_opt =
        run->add_option("--seed", run_seed, "Global seed (overrides the manifest)");
    run->add_option("--jobs", run_jobs, "Parallel work items within a stage")
        ->check(CLI::PositiveNumber);
    run->add_option("--stage", run_stage, "Run a single stage")
        ->check(CLI::IsMember(pipeline_stage_names()));
    run->callback([&] {
        cmd_run(run_manifest, run_out, run_seed_opt->count() > 0, run_seed, run_jobs,
                run_stage);
    });

    // merge
    fs::path merge_recipe, merge_out;
    auto* merge = app.add_subcommand(
        "merge", "Apply one merge recipe to checkpoint files");
    merge->add_option("--recipe", merge_recipe,
                      "Recipe (JSON; parents/base are checkpoint paths)")
        ->required();
    merge->add_option("--out", merge_out, "Output checkpoint path")->required();
    merge->callback([&] { cmd_merge(merge_recipe, merge_out); });

    // gen-data
    fs::path gen_spec, gen_out;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
    gen->add_option("--spec", gen_spec, "Generator spec (JSON)")->required();
    gen->add_option("--out", gen_out,
                    "Output file, or directory when the spec declares splits")
        ->required();
    gen->callback([&] { cmd_gen_data(gen_spec, gen_out); });

    // behave
    fs::path bh_model, bh_arch, bh_out, bh_csv;
    std::vector<fs::path> bh_suites;
    std::string bh_id;
    auto* behave = app.add_subcommand("behave", "Behavioral evaluation of one model");
    behave->add_option("--model", bh_model, "Checkpoint to evaluate")->required();
    behave->add_option("--suites", bh_suites, "Behavior suite file(s)")->required();
    behave->add_option("--arch", bh_arch,
                       "Architecture (JSON; default: checkpoint metadata)");
    behave->add_option("--id", bh_id, "Model id for the report rows");
    behave->add_option("--out", bh_out, "Report output (JSON)")->required();
    behave->add_option("--csv", bh_csv, "Also write a CSV copy here");
    behave->callback([&] { cmd_behave(bh_model, bh_suites, bh_arch, bh_id, bh_out, bh_csv); });

    // probe
    fs::path pr_model, pr_arch, pr_out, pr_csv;
    std::vector<fs::path> pr_tasks;
    std::string pr_id;
    ProbeConfig pr_config;
    auto* probe = app.add_subcommand(
        "probe", "Train linear probes on one model's representations");
    probe->add_option("--model", pr_model, "Checkpoint to probe")->required();
    probe->add_option("--tasks", pr_tasks, "Probe task file(s)")->required();
    probe->add_option("--arch", pr_arch,
                      "Architecture (JSON; default: checkpoint metadata)");
    probe->add_option("--id", pr_id, "Model id for the report rows");
    probe->add_option("--out", pr_out, "Report output (JSON)")->required();
    probe->add_option("--csv", pr_csv, "Also write a CSV copy here");
    probe->add_option("--epochs", pr_config.epochs, "Probe training epochs")
        ->check(CLI::NonNegativeNumber);
    probe->add_option("--lr", pr_config.learning_rate, "Probe learning rate");
    probe->add_option("--l2", pr_config.l2_penalty, "Probe L2 penalty");
    probe->callback([&] {
        cmd_probe(pr_model, pr_tasks, pr_arch, pr_id, pr_out, pr_csv, pr_config);
    });

    // correlate
    std::vector<fs::path> co_probes, co_behavior;
    std::string co_method = "both";
    fs::path co_out;
    auto* correlate = app.add_subcommand(
        "correlate", "Correlate probe phenomena against behavior suites");
    correlate->add_option("--probes", co_probes, "Probe report file(s)")->required();
    correlate->add_option("--behavior", co_behavior, "Behavior report file(s)")
        ->required();
    correlate->add_option("--method", co_method, "pearson, spearman, or both")
        ->check(CLI::IsMember({"pearson", "spearman", "both"}));
    correlate->add_option("--out", co_out, "Output directory")->required();
    correlate->callback([&] { cmd_correlate(co_probes, co_behavior, co_method, co_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help / --version
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::manifest_error ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
