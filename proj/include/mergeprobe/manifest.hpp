#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/merge.hpp"
#include "mergeprobe/toy_model.hpp"

namespace mergeprobe {

/// How a named model comes to exist: load a checkpoint file, or train a toy
/// model (optionally fine-tuning from another declared model).
struct TrainSpec {
    nlohmann::json data;     // dataset reference: resolved path string or inline
    int epochs = 1;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;  // derived from the global seed when absent
    bool has_seed = false;
    std::string init_from;   // empty = fresh seeded init
};

struct ModelSource {
    bool is_checkpoint = false;
    std::filesystem::path checkpoint_path;  // resolved absolute
    TrainSpec train;
};

/// One pipeline run. Model names form a single namespace: "base" (reserved
/// for the base model), the declared parents, and the recipe names. Parents
/// and merged models are evaluated; the base is merge input only.
struct RunManifest {
    std::filesystem::path source_path;  // the manifest file itself
    std::filesystem::path dir;          // its directory
    ToyArchitecture arch;
    std::uint64_t seed = 0;
    double epsilon = 0.0;             // categorization tolerance
    std::filesystem::path out_dir;    // may be empty when the CLI supplies --out
    bool has_base = false;
    ModelSource base;
    std::map<std::string, ModelSource> parents;
    std::vector<MergeRecipe> recipes;
    std::vector<std::filesystem::path> behavior_suites;
    std::vector<std::filesystem::path> probe_tasks;
};

/// Parse a manifest object. `manifest_path` anchors relative paths; all
/// referenced files must exist. Throws Error(manifest_error) naming the first
/// offending field path.
RunManifest parse_manifest(const nlohmann::json& j,
                           const std::filesystem::path& manifest_path);

/// Read + parse + validate a manifest file.
RunManifest validate_manifest(const std::filesystem::path& path);

/// Names of the models evaluated downstream (parents then recipes), sorted.
std::vector<std::string> evaluated_models(const RunManifest& manifest);

}  // namespace mergeprobe
