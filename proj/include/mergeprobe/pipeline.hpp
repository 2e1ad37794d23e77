#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mergeprobe/manifest.hpp"

namespace mergeprobe {

struct PipelineOptions {
    std::filesystem::path out_dir;  // overrides the manifest's out_dir when set
    bool has_seed = false;
    std::uint64_t seed = 0;         // overrides the manifest's seed when has_seed
    int jobs = 1;                   // parallel (model x task) work items per stage
    std::string stage;              // run a single named stage; empty = all
};

struct PipelineResult {
    std::filesystem::path out_dir;
    std::vector<std::string> stages_run;
};

/// Stage names in execution order: materialize, merge, behave, probe,
/// categorize, correlate, report.
const std::vector<std::string>& pipeline_stage_names();

/// Execute the merge-and-evaluate pipeline. Artifacts land under the output
/// directory:
///
///   checkpoints/<model>.safetensors   materialized parents, base, and merges
///   models.json                       model index (roles and lineage)
///   behavior/<model>.{json,csv}       behavioral reports
///   probes/<model>.{json,csv}         probe reports
///   comparisons/{behavior,probes}.{json,csv}
///   correlation/{pearson,spearman}.{json,csv}
///   report.json                       provenance (tool version, hashes)
///   timings.json                      wall times (diagnostic; the one file
///                                     exempt from the byte-identity contract)
///
/// Reruns with the same manifest and seed are byte-identical (timings.json
/// aside). A failing stage leaves a FAILED marker naming the stage and
/// rethrows; partial outputs stay on disk for inspection.
PipelineResult run_pipeline(const RunManifest& manifest, const PipelineOptions& options = {});

}  // namespace mergeprobe
