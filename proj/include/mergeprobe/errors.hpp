#pragma once

#include <stdexcept>
#include <string>

namespace mergeprobe {

enum class ErrorCode {
    malformed_container,
    nonfinite_weights,
    duplicate_tensor_name,
    io_failure,
    incompatible_parents,
    degenerate_weights,
    parameter_out_of_range,
    architecture_mismatch,
    degenerate_task,
    dimension_mismatch,
    empty_split,
    insufficient_data,
    constant_input,
    manifest_error,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::malformed_container:   return "MalformedContainer";
        case ErrorCode::nonfinite_weights:     return "NonFiniteWeights";
        case ErrorCode::duplicate_tensor_name: return "DuplicateTensorName";
        case ErrorCode::io_failure:            return "IoFailure";
        case ErrorCode::incompatible_parents:  return "IncompatibleParents";
        case ErrorCode::degenerate_weights:    return "DegenerateWeights";
        case ErrorCode::parameter_out_of_range: return "ParameterOutOfRange";
        case ErrorCode::architecture_mismatch: return "ArchitectureMismatch";
        case ErrorCode::degenerate_task:       return "DegenerateTask";
        case ErrorCode::dimension_mismatch:    return "DimensionMismatch";
        case ErrorCode::empty_split:           return "EmptySplit";
        case ErrorCode::insufficient_data:     return "InsufficientData";
        case ErrorCode::constant_input:        return "ConstantInput";
        case ErrorCode::manifest_error:        return "ManifestError";
    }
    return "UnknownError";
}

}  // namespace mergeprobe
