#pragma once

#include <map>
#include <string>
#include <vector>

#include "mergeprobe/tensor.hpp"

namespace mergeprobe {

/// Named-tensor checkpoint. std::map keeps iteration in lexicographic name
/// order, which is the determinism anchor for everything downstream.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

inline bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.tensors == b.tensors && a.metadata == b.metadata;
}

inline bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
    if (a.metadata != b.metadata) return false;
    if (a.tensors.size() != b.tensors.size()) return false;
    auto it = b.tensors.begin();
    for (const auto& [name, t] : a.tensors) {
        if (it->first != name || !bitwise_equal(t, it->second)) return false;
        ++it;
    }
    return true;
}

enum class MismatchKind { missing, shape, extra };

const char* mismatch_kind_name(MismatchKind kind);

struct Mismatch {
    std::string tensor;
    MismatchKind kind;
    std::string details;
};

/// Result of checking a set of checkpoints for merge compatibility.
/// compatible <=> mismatches is empty.
struct CompatReport {
    bool compatible = true;
    std::vector<Mismatch> mismatches;
};

/// Compatible iff every checkpoint has exactly the first checkpoint's
/// tensor-name set with identical per-name shapes. Mismatch kinds are
/// relative to the first checkpoint: "missing" = absent from a later one,
/// "extra" = present only in a later one.
CompatReport validate_compatibility(const std::vector<const Checkpoint*>& checkpoints);
CompatReport validate_compatibility(const std::vector<Checkpoint>& checkpoints);

/// Throws Error(incompatible_parents) when the set is not compatible.
void require_compatible(const std::vector<const Checkpoint*>& checkpoints,
                        const std::string& what);

}  // namespace mergeprobe
