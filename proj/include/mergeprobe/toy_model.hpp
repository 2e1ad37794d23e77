#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/checkpoint.hpp"
#include "mergeprobe/dataset.hpp"

namespace mergeprobe {

/// Plain tanh MLP: affine -> tanh for each hidden layer, affine for the
/// output. A conforming checkpoint holds exactly layer{i}.weight [out, in]
/// and layer{i}.bias [out] along the dims chain.
struct ToyArchitecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;

    std::size_t num_layers() const { return hidden_dims.size() + 1; }

    /// input_dim, hidden..., num_classes.
    std::vector<std::size_t> dims() const;

    /// Width of the representation extract_representation returns: the last
    /// hidden layer, or input_dim when there is none.
    std::size_t last_hidden_dim() const {
        return hidden_dims.empty() ? input_dim : hidden_dims.back();
    }
};

bool operator==(const ToyArchitecture& a, const ToyArchitecture& b);

// {"input_dim": 2, "hidden_dims": [8, 6], "num_classes": 2}
nlohmann::json arch_to_json(const ToyArchitecture& arch);
ToyArchitecture arch_from_json(const nlohmann::json& j, const std::string& context = "arch");

/// Verify the checkpoint carries exactly the tensors the architecture
/// requires, with matching shapes. Throws Error(architecture_mismatch).
void check_conformance(const Checkpoint& model, const ToyArchitecture& arch);

/// Logits [n, num_classes] for a batch of inputs [n, input_dim].
/// Internally evaluated in double; the result is rounded to f32.
Matrix forward(const Checkpoint& model, const ToyArchitecture& arch, const Matrix& inputs);

/// Post-activation output of the final hidden layer [n, last_hidden_dim] —
/// the representation the probe harness consumes. With no hidden layers this
/// is the raw input.
Matrix extract_representation(const Checkpoint& model, const ToyArchitecture& arch,
                              const Matrix& inputs);

/// Full-batch gradient descent on softmax cross-entropy. Initialization is
/// uniform in [-0.1, 0.1] from the seeded generator unless `init_from` is
/// given (fine-tuning). Deterministic: same arguments, bitwise-identical
/// checkpoint. Throws ParameterOutOfRange (epochs < 1, learning_rate <= 0,
/// empty data), DimensionMismatch, ArchitectureMismatch (bad init_from).
Checkpoint train_toy_model(const ToyArchitecture& arch, const LabeledDataset& data,
                           int epochs, double learning_rate, std::uint64_t seed,
                           const Checkpoint* init_from = nullptr);

// ---- double-precision parameter view ---------------------------------------
//
// Training and the gradient checks run on a flat double vector packed as
// layer0.weight (row-major), layer0.bias, layer1.weight, ... The f32
// checkpoint is a serialization boundary, not the compute format.

std::size_t param_count(const ToyArchitecture& arch);
Checkpoint params_to_checkpoint(const ToyArchitecture& arch, const std::vector<double>& p);
std::vector<double> checkpoint_to_params(const ToyArchitecture& arch, const Checkpoint& model);

/// Mean softmax cross-entropy of the packed parameters on `data`.
double toy_loss(const ToyArchitecture& arch, const std::vector<double>& params,
                const LabeledDataset& data);

/// Analytic gradient of toy_loss, same packing.
std::vector<double> toy_loss_grad(const ToyArchitecture& arch,
                                  const std::vector<double>& params,
                                  const LabeledDataset& data);

}  // namespace mergeprobe
