#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/checkpoint.hpp"

namespace mergeprobe {

/// Per-tensor difference fine_tuned - base. Key set and shapes equal those of
/// the base checkpoint it was derived from.
struct TaskVector {
    std::map<std::string, Tensor> tensors;
};

/// Elected per-parameter signs, +1 or -1, same key set/shapes as the task
/// vectors they were derived from.
struct SignVector {
    std::map<std::string, std::vector<std::int8_t>> signs;
};

// ---- merge operators --------------------------------------------------------
//
// All operators are pure functions of their inputs; outputs are freshly
// allocated f32 checkpoints. Element arithmetic runs in double and is rounded
// to f32 once at the end.

/// Weighted average sum(w_i * theta_i) / sum(w_i). Per-element contributions
/// are summed in value order, so permuting (parent, weight) pairs cannot
/// change rounding. Output metadata records the method and normalized weights.
Checkpoint merge_linear(const std::vector<Checkpoint>& parents,
                        const std::vector<double>& weights);

/// Spherical interpolation on each flattened tensor:
///   omega = arccos(clamp(<a,b> / (|a||b|), -1, 1))
///   out   = sin((1-t) omega)/sin(omega) * a + sin(t omega)/sin(omega) * b
/// Falls back to linear interpolation when |sin omega| < 1e-6 (near-collinear
/// operands or a zero norm).
Checkpoint merge_slerp(const Checkpoint& a, const Checkpoint& b, double t);

/// tau = theta_ft - theta_base, per tensor.
TaskVector compute_task_vector(const Checkpoint& fine_tuned, const Checkpoint& base);

/// base + lambda * sum(tau_i). Differences are accumulated in double and cast
/// to f32 once, so a single model at lambda = 1 reproduces it exactly.
Checkpoint merge_task_arithmetic(const Checkpoint& base,
                                 const std::vector<Checkpoint>& fine_tuned,
                                 double lambda);

/// Keep the top ceil(k*n) entries of each tensor by |value|, zero the rest.
/// Magnitude ties at the threshold are broken by lower flat index.
TaskVector trim_by_magnitude(const TaskVector& tv, double density_k);

/// Per parameter, the sign of the sum of entries across models; a zero sum
/// elects +1.
SignVector elect_sign(const std::vector<TaskVector>& tvs);

/// Per parameter, the mean over models whose entry is nonzero and carries the
/// elected sign; 0 when no model qualifies.
TaskVector disjoint_merge(const std::vector<TaskVector>& tvs, const SignVector& signs);

/// base + lambda * disjoint_merge(trimmed, elect_sign(trimmed));
/// sub-step order is trim -> elect -> disjoint-merge.
Checkpoint merge_ties(const Checkpoint& base, const std::vector<Checkpoint>& fine_tuned,
                      double density_k, double lambda);

/// Drop each entry with probability p, rescale survivors by 1/(1-p).
/// Randomness is counter-based and keyed by (seed, tensor name, model_index),
/// so results are independent of evaluation order.
TaskVector dare_sparsify(const TaskVector& tv, double drop_prob, std::uint64_t seed,
                         std::uint32_t model_index);

/// merge_ties over DARE-sparsified task vectors (drop/rescale per model first,
/// then trim/elect/merge).
Checkpoint merge_dare_ties(const Checkpoint& base, const std::vector<Checkpoint>& fine_tuned,
                           double drop_prob, double density_k, double lambda,
                           std::uint64_t seed);

/// Keyed survival draw used by the DARE sparsifier; exposed so tests can
/// average a single entry across many seeds.
double dare_unit_draw(std::uint64_t seed, const std::string& tensor_name,
                      std::uint32_t model_index, std::uint64_t flat_index);

// ---- recipes ----------------------------------------------------------------

enum class MergeMethod { linear, slerp, task_arithmetic, ties, dare_ties };

const char* merge_method_name(MergeMethod method);

/// Declarative description of one merge. `parents` and `base` are references:
/// file paths for the standalone CLI, model names inside a run manifest.
struct MergeRecipe {
    std::string name;
    MergeMethod method = MergeMethod::linear;
    std::vector<std::string> parents;
    std::string base;                   // required for task_arithmetic/ties/dare_ties
    std::vector<double> weights;        // linear; empty = equal weights
    double t = 0.5;                     // slerp
    double lambda = 1.0;                // task_arithmetic/ties/dare_ties
    double density = 0.5;               // ties/dare_ties
    double drop_prob = 0.5;             // dare_ties
    std::uint64_t seed = 0;             // dare_ties
    bool has_seed = false;              // set when the recipe names a seed
};

/// Parse a recipe from JSON. Unknown keys and keys belonging to a different
/// method are rejected; hyperparameters are optional with the documented
/// defaults. `context` prefixes error messages (e.g. "recipes[2]").
/// Throws Error(manifest_error).
MergeRecipe parse_recipe(const nlohmann::json& j, const std::string& context = "recipe");

/// Structural validation: parent counts, base presence, hyperparameter ranges.
/// Throws Error(manifest_error) with the offending field in the message.
void validate_recipe(const MergeRecipe& recipe, const std::string& context = "recipe");

/// Dispatch a validated recipe on resolved checkpoints. `base` may be null
/// for methods that take none. The result inherits metadata keys on which all
/// parents agree (except model_id and merge.*) and records merge provenance.
Checkpoint run_merge(const MergeRecipe& recipe, const std::vector<Checkpoint>& parents,
                     const Checkpoint* base);

}  // namespace mergeprobe
