#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/tensor.hpp"

namespace mergeprobe {

/// Row-major feature matrix plus integer labels in [0, num_classes).
struct LabeledDataset {
    Matrix inputs;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
};

/// Check the dataset invariants (row counts match, labels in range, finite
/// features). Throws DimensionMismatch / ParameterOutOfRange; `what` prefixes
/// the message.
void validate_dataset(const LabeledDataset& ds, const std::string& what);

// On-disk form: {"num_classes": C, "inputs": [[...], ...], "labels": [...]}.
nlohmann::json dataset_to_json(const LabeledDataset& ds);
LabeledDataset dataset_from_json(const nlohmann::json& j, const std::string& context);
LabeledDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);

/// Seeded synthetic 2-D dataset generator. Kinds:
///   blobs    — `classes` Gaussian clusters with centers evenly spaced on a
///              circle of radius `separation`, coordinate noise stddev `noise`
///   xor_grid — points uniform in [-1,1]^2, label = quadrant XOR; `noise` adds
///              coordinate jitter after labeling
///   rings    — concentric circles at radius `radius` + class * `gap` with
///              radial noise stddev `noise`
/// Labels round-robin over classes, so class counts are balanced. With
/// `shuffle_labels`, labels are redrawn uniformly at random (chance-level
/// fixture). `splits` maps split names to point counts; each split draws from
/// an independently keyed stream.
struct GenSpec {
    std::string kind;           // "blobs" | "xor_grid" | "rings"
    std::size_t n = 0;
    std::uint64_t seed = 0;
    int classes = 2;            // blobs/rings
    double separation = 4.0;    // blobs
    double noise = 0.0;         // per-kind default set by parse_gen_spec
    double radius = 1.0;        // rings
    double gap = 1.0;           // rings
    bool shuffle_labels = false;
    std::map<std::string, std::size_t> splits;
};

/// Parse and validate; unknown keys and keys for another kind are rejected.
/// Throws Error(manifest_error).
GenSpec parse_gen_spec(const nlohmann::json& j, const std::string& context = "genspec");

/// Generate a single dataset (the `splits` field is ignored here).
LabeledDataset generate_dataset(const GenSpec& spec);

/// One dataset per entry of `splits` (which must be non-empty).
std::map<std::string, LabeledDataset> generate_splits(const GenSpec& spec);

/// A dataset reference is either a literal dataset file or a generator spec;
/// the two are distinguished by the presence of a "kind" key.
LabeledDataset dataset_from_reference(const nlohmann::json& j, const std::string& context);
LabeledDataset load_dataset_or_generate(const std::filesystem::path& path);

}  // namespace mergeprobe
