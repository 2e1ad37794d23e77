#include "mergeprobe/toy_model.hpp"

#include <cmath>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/rng.hpp"

namespace mergeprobe {

std::vector<std::size_t> ToyArchitecture::dims() const {
    std::vector<std::size_t> d;
    d.reserve(hidden_dims.size() + 2);
    d.push_back(input_dim);
    d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
    d.push_back(num_classes);
    return d;
}

bool operator==(const ToyArchitecture& a, const ToyArchitecture& b) {
    return a.input_dim == b.input_dim && a.hidden_dims == b.hidden_dims &&
           a.num_classes == b.num_classes;
}

nlohmann::json arch_to_json(const ToyArchitecture& arch) {
    return {{"input_dim", arch.input_dim},
            {"hidden_dims", arch.hidden_dims},
            {"num_classes", arch.num_classes}};
}

ToyArchitecture arch_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "input_dim" && key != "hidden_dims" && key != "num_classes")
            fail(ErrorCode::manifest_error, context + ": unexpected key '" + key + "'");
    }
    auto positive = [&](const char* key) -> std::size_t {
        if (!j.contains(key) || !is_nonneg_integer(j.at(key)) ||
            j.at(key).get<std::size_t>() == 0)
            fail(ErrorCode::manifest_error,
                 context + "." + std::string(key) + ": required positive integer");
        return j.at(key).get<std::size_t>();
    };
    ToyArchitecture arch;
    arch.input_dim = positive("input_dim");
    arch.num_classes = positive("num_classes");
    if (j.contains("hidden_dims")) {
        if (!j.at("hidden_dims").is_array())
            fail(ErrorCode::manifest_error, context + ".hidden_dims: expected an array");
        for (const auto& d : j.at("hidden_dims")) {
            if (!is_nonneg_integer(d) || d.get<std::size_t>() == 0)
                fail(ErrorCode::manifest_error,
                     context + ".hidden_dims: entries must be positive integers");
            arch.hidden_dims.push_back(d.get<std::size_t>());
        }
    }
    return arch;
}

void check_conformance(const Checkpoint& model, const ToyArchitecture& arch) {
    const auto dims = arch.dims();
    std::size_t expected = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const auto in = static_cast<std::int64_t>(dims[i]);
        const auto out = static_cast<std::int64_t>(dims[i + 1]);
        const std::string w = "layer" + std::to_string(i) + ".weight";
        const std::string b = "layer" + std::to_string(i) + ".bias";
        auto wit = model.tensors.find(w);
        if (wit == model.tensors.end())
            fail(ErrorCode::architecture_mismatch, "missing tensor '" + w + "'");
        if (wit->second.shape != std::vector<std::int64_t>{out, in})
            fail(ErrorCode::architecture_mismatch,
                 "tensor '" + w + "' has the wrong shape for dims " + std::to_string(in) +
                     "->" + std::to_string(out));
        auto bit = model.tensors.find(b);
        if (bit == model.tensors.end())
            fail(ErrorCode::architecture_mismatch, "missing tensor '" + b + "'");
        if (bit->second.shape != std::vector<std::int64_t>{out})
            fail(ErrorCode::architecture_mismatch, "tensor '" + b + "' has the wrong shape");
        expected += 2;
    }
    if (model.tensors.size() != expected) {
        // Every required tensor was found above, so a count mismatch means
        // the checkpoint carries something extra.
        for (const auto& [name, t] : model.tensors) {
            (void)t;
            bool known = false;
            for (std::size_t i = 0; i + 1 < dims.size() && !known; ++i)
                known = name == "layer" + std::to_string(i) + ".weight" ||
                        name == "layer" + std::to_string(i) + ".bias";
            if (!known)
                fail(ErrorCode::architecture_mismatch,
                     "unexpected tensor '" + name + "' for this architecture");
        }
    }
}

Matrix forward(const Checkpoint& model, const ToyArchitecture& arch, const Matrix& inputs) {
    check_conformance(model, arch);
    if (inputs.cols != arch.input_dim)
        fail(ErrorCode::dimension_mismatch,
             "forward: inputs have " + std::to_string(inputs.cols) +
                 " features, architecture expects " + std::to_string(arch.input_dim));

    const auto dims = arch.dims();
    Matrix logits(inputs.rows, arch.num_classes);
    std::vector<double> act, next;
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        act.assign(inputs.row(r), inputs.row(r) + inputs.cols);
        for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
            const std::size_t in = dims[layer], out = dims[layer + 1];
            const Tensor& w = model.tensors.at("layer" + std::to_string(layer) + ".weight");
            const Tensor& b = model.tensors.at("layer" + std::to_string(layer) + ".bias");
            next.assign(out, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = static_cast<double>(b.data[o]);
                for (std::size_t i = 0; i < in; ++i)
                    acc += static_cast<double>(w.data[o * in + i]) * act[i];
                next[o] = acc;
            }
            if (layer + 2 < dims.size())
                for (double& v : next) v = std::tanh(v);
            act.swap(next);
        }
        for (std::size_t c = 0; c < arch.num_classes; ++c)
            logits.at(r, c) = static_cast<float>(act[c]);
    }
    return logits;
}

Matrix extract_representation(const Checkpoint& model, const ToyArchitecture& arch,
                              const Matrix& inputs) {
    check_conformance(model, arch);
    if (inputs.cols != arch.input_dim)
        fail(ErrorCode::dimension_mismatch,
             "extract_representation: inputs have " + std::to_string(inputs.cols) +
                 " features, architecture expects " + std::to_string(arch.input_dim));
    if (arch.hidden_dims.empty()) return inputs;  // degenerate depth: raw features

    const auto dims = arch.dims();
    Matrix rep(inputs.rows, arch.last_hidden_dim());
    std::vector<double> act, next;
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        act.assign(inputs.row(r), inputs.row(r) + inputs.cols);
        // Stop after the last hidden layer's activation.
        for (std::size_t layer = 0; layer + 2 < dims.size(); ++layer) {
            const std::size_t in = dims[layer], out = dims[layer + 1];
            const Tensor& w = model.tensors.at("layer" + std::to_string(layer) + ".weight");
            const Tensor& b = model.tensors.at("layer" + std::to_string(layer) + ".bias");
            next.assign(out, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = static_cast<double>(b.data[o]);
                for (std::size_t i = 0; i < in; ++i)
                    acc += static_cast<double>(w.data[o * in + i]) * act[i];
                next[o] = std::tanh(acc);
            }
            act.swap(next);
        }
        for (std::size_t c = 0; c < rep.cols; ++c)
            rep.at(r, c) = static_cast<float>(act[c]);
    }
    return rep;
}

std::size_t param_count(const ToyArchitecture& arch) {
    const auto dims = arch.dims();
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i + 1] * (dims[i] + 1);
    return n;
}

Checkpoint params_to_checkpoint(const ToyArchitecture& arch, const std::vector<double>& p) {
    if (p.size() != param_count(arch))
        fail(ErrorCode::dimension_mismatch,
             "params_to_checkpoint: expected " + std::to_string(param_count(arch)) +
                 " parameters, got " + std::to_string(p.size()));
    const auto dims = arch.dims();
    Checkpoint ck;
    std::size_t pos = 0;
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
        const auto in = static_cast<std::int64_t>(dims[layer]);
        const auto out = static_cast<std::int64_t>(dims[layer + 1]);
        Tensor w = Tensor::zeros({out, in});
        for (auto& v : w.data) v = static_cast<float>(p[pos++]);
        Tensor b = Tensor::zeros({out});
        for (auto& v : b.data) v = static_cast<float>(p[pos++]);
        ck.tensors.emplace("layer" + std::to_string(layer) + ".weight", std::move(w));
        ck.tensors.emplace("layer" + std::to_string(layer) + ".bias", std::move(b));
    }
    ck.metadata["toy_arch"] = arch_to_json(arch).dump();
    return ck;
}

std::vector<double> checkpoint_to_params(const ToyArchitecture& arch, const Checkpoint& model) {
    check_conformance(model, arch);
    const auto dims = arch.dims();
    std::vector<double> p;
    p.reserve(param_count(arch));
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
        const Tensor& w = model.tensors.at("layer" + std::to_string(layer) + ".weight");
        const Tensor& b = model.tensors.at("layer" + std::to_string(layer) + ".bias");
        for (float v : w.data) p.push_back(static_cast<double>(v));
        for (float v : b.data) p.push_back(static_cast<double>(v));
    }
    return p;
}

namespace {

struct BatchPass {
    double loss = 0.0;
    // Post-activation values per layer (activations[0] = inputs), one flat
    // row-major matrix per layer, kept for the backward pass.
    std::vector<std::vector<double>> activations;
    std::vector<std::vector<double>> logits_rows;  // [n][num_classes] softmax inputs
};

void check_training_inputs(const ToyArchitecture& arch, const LabeledDataset& data) {
    if (data.size() == 0)
        fail(ErrorCode::parameter_out_of_range, "training data must be non-empty");
    validate_dataset(data, "training data");
    if (data.inputs.cols != arch.input_dim)
        fail(ErrorCode::dimension_mismatch,
             "training data has " + std::to_string(data.inputs.cols) +
                 " features, architecture expects " + std::to_string(arch.input_dim));
    if (static_cast<std::size_t>(data.num_classes) != arch.num_classes)
        fail(ErrorCode::dimension_mismatch,
             "training data declares " + std::to_string(data.num_classes) +
                 " classes, architecture has " + std::to_string(arch.num_classes));
}

// Forward over the whole batch, keeping activations for backprop.
BatchPass forward_batch(const ToyArchitecture& arch, const std::vector<double>& params,
                        const LabeledDataset& data) {
    const auto dims = arch.dims();
    const std::size_t n = data.size();
    BatchPass pass;
    pass.activations.resize(dims.size() - 1);

    std::vector<double> act, next;
    pass.logits_rows.resize(n);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
        pass.activations[l].reserve(n * dims[l]);

    for (std::size_t r = 0; r < n; ++r) {
        act.assign(data.inputs.row(r), data.inputs.row(r) + data.inputs.cols);
        std::size_t pos = 0;
        for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
            const std::size_t in = dims[layer], out = dims[layer + 1];
            pass.activations[layer].insert(pass.activations[layer].end(), act.begin(),
                                           act.end());
            next.assign(out, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = params[pos + out * in + o];  // bias
                for (std::size_t i = 0; i < in; ++i)
                    acc += params[pos + o * in + i] * act[i];
                next[o] = acc;
            }
            pos += out * in + out;
            if (layer + 2 < dims.size())
                for (double& v : next) v = std::tanh(v);
            act.swap(next);
        }
        pass.logits_rows[r] = act;

        // Stable log-sum-exp for the cross-entropy term.
        double m = act[0];
        for (double v : act) m = std::max(m, v);
        double sum = 0.0;
        for (double v : act) sum += std::exp(v - m);
        pass.loss += (m + std::log(sum)) - act[static_cast<std::size_t>(data.labels[r])];
    }
    pass.loss /= static_cast<double>(n);
    return pass;
}

}  // namespace

double toy_loss(const ToyArchitecture& arch, const std::vector<double>& params,
                const LabeledDataset& data) {
    check_training_inputs(arch, data);
    if (params.size() != param_count(arch))
        fail(ErrorCode::dimension_mismatch, "toy_loss: wrong parameter count");
    return forward_batch(arch, params, data).loss;
}

std::vector<double> toy_loss_grad(const ToyArchitecture& arch,
                                  const std::vector<double>& params,
                                  const LabeledDataset& data) {
    check_training_inputs(arch, data);
    if (params.size() != param_count(arch))
        fail(ErrorCode::dimension_mismatch, "toy_loss_grad: wrong parameter count");

    const auto dims = arch.dims();
    const std::size_t n = data.size();
    const BatchPass pass = forward_batch(arch, params, data);

    std::vector<double> grad(params.size(), 0.0);
    // Layer parameter offsets into the flat vector.
    std::vector<std::size_t> offsets(dims.size() - 1);
    {
        std::size_t pos = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            offsets[l] = pos;
            pos += dims[l + 1] * (dims[l] + 1);
        }
    }

    std::vector<double> delta, prev_delta;
    for (std::size_t r = 0; r < n; ++r) {
        // dL/dz at the output: softmax(z) - onehot(y), averaged over the batch.
        const std::vector<double>& z = pass.logits_rows[r];
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        delta.resize(z.size());
        for (std::size_t c = 0; c < z.size(); ++c)
            delta[c] = std::exp(z[c] - m) / sum;
        delta[static_cast<std::size_t>(data.labels[r])] -= 1.0;
        for (double& d : delta) d /= static_cast<double>(n);

        for (std::size_t layer = dims.size() - 1; layer-- > 0;) {
            const std::size_t in = dims[layer], out = dims[layer + 1];
            const double* act = pass.activations[layer].data() + r * in;
            const std::size_t off = offsets[layer];
            for (std::size_t o = 0; o < out; ++o) {
                for (std::size_t i = 0; i < in; ++i)
                    grad[off + o * in + i] += delta[o] * act[i];
                grad[off + out * in + o] += delta[o];
            }
            if (layer == 0) break;
            // Propagate through the affine map and the tanh of the layer
            // below: tanh'(z) = 1 - tanh(z)^2, and act holds tanh(z).
            prev_delta.assign(in, 0.0);
            for (std::size_t i = 0; i < in; ++i) {
                double acc = 0.0;
                for (std::size_t o = 0; o < out; ++o)
                    acc += params[off + o * in + i] * delta[o];
                prev_delta[i] = acc * (1.0 - act[i] * act[i]);
            }
            delta.swap(prev_delta);
        }
    }
    return grad;
}

Checkpoint train_toy_model(const ToyArchitecture& arch, const LabeledDataset& data,
                           int epochs, double learning_rate, std::uint64_t seed,
                           const Checkpoint* init_from) {
    if (epochs < 1)
        fail(ErrorCode::parameter_out_of_range,
             "train_toy_model: epochs must be >= 1, got " + std::to_string(epochs));
    if (!std::isfinite(learning_rate) || !(learning_rate > 0.0))
        fail(ErrorCode::parameter_out_of_range,
             "train_toy_model: learning_rate must be positive");
    check_training_inputs(arch, data);

    std::vector<double> params;
    if (init_from) {
        params = checkpoint_to_params(arch, *init_from);
    } else {
        params.resize(param_count(arch));
        RngStream rng(derive_key(seed, "toy-init", 0));
        for (double& p : params) p = rng.uniform(-0.1, 0.1);
    }

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const std::vector<double> grad = toy_loss_grad(arch, params, data);
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= learning_rate * grad[i];
    }

    Checkpoint out = params_to_checkpoint(arch, params);
    out.metadata["train.epochs"] = std::to_string(epochs);
    out.metadata["train.learning_rate"] = fmt_double(learning_rate);
    out.metadata["train.seed"] = std::to_string(seed);
    return out;
}

}  // namespace mergeprobe
