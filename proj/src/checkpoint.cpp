#include "mergeprobe/checkpoint.hpp"

#include <sstream>

#include "mergeprobe/errors.hpp"

namespace mergeprobe {

namespace {

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace

const char* mismatch_kind_name(MismatchKind kind) {
    switch (kind) {
        case MismatchKind::missing: return "missing";
        case MismatchKind::shape:   return "shape";
        case MismatchKind::extra:   return "extra";
    }
    return "?";
}

CompatReport validate_compatibility(const std::vector<const Checkpoint*>& checkpoints) {
    CompatReport report;
    if (checkpoints.empty()) return report;

    const Checkpoint& ref = *checkpoints.front();
    for (std::size_t i = 1; i < checkpoints.size(); ++i) {
        const Checkpoint& other = *checkpoints[i];
        for (const auto& [name, tensor] : ref.tensors) {
            auto it = other.tensors.find(name);
            if (it == other.tensors.end()) {
                report.mismatches.push_back(
                    {name, MismatchKind::missing,
                     "absent from checkpoint " + std::to_string(i)});
            } else if (it->second.shape != tensor.shape) {
                report.mismatches.push_back(
                    {name, MismatchKind::shape,
                     "checkpoint " + std::to_string(i) + " has " +
                         shape_str(it->second.shape) + ", reference has " +
                         shape_str(tensor.shape)});
            }
        }
        for (const auto& [name, tensor] : other.tensors) {
            if (!ref.tensors.count(name)) {
                report.mismatches.push_back(
                    {name, MismatchKind::extra,
                     "only in checkpoint " + std::to_string(i)});
            }
        }
    }
    report.compatible = report.mismatches.empty();
    return report;
}

CompatReport validate_compatibility(const std::vector<Checkpoint>& checkpoints) {
    std::vector<const Checkpoint*> ptrs;
    ptrs.reserve(checkpoints.size());
    for (const auto& c : checkpoints) ptrs.push_back(&c);
    return validate_compatibility(ptrs);
}

void require_compatible(const std::vector<const Checkpoint*>& checkpoints,
                        const std::string& what) {
    CompatReport report = validate_compatibility(checkpoints);
    if (report.compatible) return;
    const Mismatch& first = report.mismatches.front();
    fail(ErrorCode::incompatible_parents,
         what + ": tensor '" + first.tensor + "' (" +
             mismatch_kind_name(first.kind) + "): " + first.details +
             (report.mismatches.size() > 1
                  ? " (+" + std::to_string(report.mismatches.size() - 1) + " more)"
                  : ""));
}

}  // namespace mergeprobe
