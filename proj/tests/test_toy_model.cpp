#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <numeric>

#include "mergeprobe/dataset.hpp"
#include "mergeprobe/errors.hpp"
#include "mergeprobe/rng.hpp"
#include "mergeprobe/toy_model.hpp"
#include "test_util.hpp"

using namespace mergeprobe;
using namespace mergeprobe::testing;

namespace {

// Fixed 2-2-2 network used for the hand-computed forward values below.
Checkpoint fixture_222() {
    Checkpoint ck;
    ck.tensors["layer0.weight"] = Tensor::from({2, 2}, {0.5f, -0.25f, 0.75f, 1.0f});
    ck.tensors["layer0.bias"] = Tensor::from({2}, {0.1f, -0.2f});
    ck.tensors["layer1.weight"] = Tensor::from({2, 2}, {1.0f, 0.5f, -0.5f, 0.25f});
    ck.tensors["layer1.bias"] = Tensor::from({2}, {0.05f, -0.05f});
    return ck;
}

ToyArchitecture arch_222() {
    ToyArchitecture a;
    a.input_dim = 2;
    a.hidden_dims = {2};
    a.num_classes = 2;
    return a;
}

Matrix matrix_from_rows(const std::vector<std::vector<float>>& rows) {
    Matrix m(rows.size(), rows.at(0).size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

std::vector<double> random_params(const ToyArchitecture& arch, std::uint64_t seed) {
    std::vector<double> p(param_count(arch));
    RngStream rng(derive_key(seed, "test-params", 0));
    for (double& v : p) v = rng.uniform(-0.5, 0.5);
    return p;
}

LabeledDataset blob_data(std::uint64_t seed, std::size_t n = 60) {
    return generate_dataset(parse_gen_spec({{"kind", "blobs"},
                                            {"n", n},
                                            {"seed", seed},
                                            {"separation", 4.0},
                                            {"noise", 0.4}}));
}

}  // namespace

// ---- architecture -----------------------------------------------------------

TEST_CASE("arch: dims chain and derived sizes") {
    ToyArchitecture a;
    a.input_dim = 3;
    a.hidden_dims = {8, 6};
    a.num_classes = 2;
    CHECK(a.dims() == std::vector<std::size_t>{3, 8, 6, 2});
    CHECK(a.num_layers() == 3);
    CHECK(a.last_hidden_dim() == 6);
    CHECK(param_count(a) == 8 * 4 + 6 * 9 + 2 * 7);

    ToyArchitecture shallow;
    shallow.input_dim = 4;
    shallow.num_classes = 4;
    CHECK(shallow.dims() == std::vector<std::size_t>{4, 4});
    CHECK(shallow.last_hidden_dim() == 4);  // no hidden layer: raw features
}

TEST_CASE("arch: JSON round trip and validation") {
    ToyArchitecture a;
    a.input_dim = 2;
    a.hidden_dims = {5};
    a.num_classes = 3;
    CHECK(arch_from_json(arch_to_json(a)) == a);

    auto expect_manifest_error = [](nlohmann::json j) {
        CHECK(error_code_of([&] { arch_from_json(j); }) == ErrorCode::manifest_error);
    };
    expect_manifest_error(nlohmann::json::array());
    expect_manifest_error({{"input_dim", 2}});  // num_classes missing
    expect_manifest_error({{"input_dim", 0}, {"num_classes", 2}});
    expect_manifest_error({{"input_dim", 2}, {"num_classes", 2}, {"extra", 1}});
    expect_manifest_error({{"input_dim", 2}, {"num_classes", 2}, {"hidden_dims", 3}});
    expect_manifest_error(
        {{"input_dim", 2}, {"num_classes", 2}, {"hidden_dims", {4, 0}}});
}

TEST_CASE("arch: conformance checks tensor names and shapes") {
    const ToyArchitecture a = arch_222();
    CHECK_NOTHROW(check_conformance(fixture_222(), a));

    Checkpoint ck = fixture_222();
    ck.tensors.erase("layer1.bias");
    CHECK(error_code_of([&] { check_conformance(ck, a); }) ==
          ErrorCode::architecture_mismatch);

    ck = fixture_222();
    ck.tensors["layer0.weight"] = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(error_code_of([&] { check_conformance(ck, a); }) ==
          ErrorCode::architecture_mismatch);

    ck = fixture_222();
    ck.tensors["layer0.bias"] = Tensor::from({3}, {1, 2, 3});
    CHECK(error_code_of([&] { check_conformance(ck, a); }) ==
          ErrorCode::architecture_mismatch);

    ck = fixture_222();
    ck.tensors["stray"] = Tensor::from({1}, {0.0f});
    CHECK(error_code_of([&] { check_conformance(ck, a); }) ==
          ErrorCode::architecture_mismatch);
}

// ---- forward ----------------------------------------------------------------

TEST_CASE("forward: zero weights give all-zero logits") {
    const ToyArchitecture a = arch_222();
    const Checkpoint zeros = params_to_checkpoint(a, std::vector<double>(param_count(a)));
    const Matrix logits = forward(zeros, a, matrix_from_rows({{1.5f, -2.0f}, {0.0f, 3.0f}}));
    CHECK(logits.rows == 2);
    CHECK(logits.cols == 2);
    for (float v : logits.data) CHECK(v == 0.0f);
}

TEST_CASE("forward: identity single layer passes inputs through") {
    ToyArchitecture a;
    a.input_dim = 2;
    a.num_classes = 2;
    Checkpoint ck;
    ck.tensors["layer0.weight"] = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    ck.tensors["layer0.bias"] = Tensor::from({2}, {0.0f, 0.0f});
    const Matrix in = matrix_from_rows({{0.25f, -1.75f}, {3.5f, 0.125f}});
    const Matrix logits = forward(ck, a, in);
    CHECK(logits == in);
}

TEST_CASE("forward: fixed 2-2-2 network matches the hand computation") {
    // Hand evaluation (double precision, f32 weights): for x = [1, 0],
    //   hidden = tanh([0.6, 0.55]) and logits = W1 hidden + b1; likewise for
    //   x = [-0.5, 2.0]. Constants below are the f32 roundings of that.
    const Matrix in = matrix_from_rows({{1.0f, 0.0f}, {-0.5f, 2.0f}});
    const Matrix logits = forward(fixture_222(), arch_222(), in);
    REQUIRE(logits.rows == 2);
    REQUIRE(logits.cols == 2);
    CHECK(logits.at(0, 0) == 0.8373096585273743f);
    CHECK(logits.at(0, 1) == -0.193394735455513f);
    CHECK(logits.at(1, 0) == -0.07635128498077393f);
    CHECK(logits.at(1, 1) == 0.4584943354129791f);
}

TEST_CASE("forward: rejects mismatched inputs and checkpoints") {
    const ToyArchitecture a = arch_222();
    CHECK(error_code_of([&] {
        forward(fixture_222(), a, matrix_from_rows({{1.0f, 2.0f, 3.0f}}));
    }) == ErrorCode::dimension_mismatch);
    CHECK(error_code_of([&] {
        forward(random_checkpoint(1), a, matrix_from_rows({{1.0f, 2.0f}}));
    }) == ErrorCode::architecture_mismatch);
}

TEST_CASE("forward: permutation-equivariant over batch rows") {
    ToyArchitecture a;
    a.input_dim = 3;
    a.hidden_dims = {4};
    a.num_classes = 2;
    const Checkpoint ck = params_to_checkpoint(a, random_params(a, 17));

    RngStream rng(derive_key(18, "perm-inputs", 0));
    Matrix in(7, 3);
    for (float& v : in.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    const Matrix base = forward(ck, a, in);
    const std::vector<std::size_t> perm = {4, 0, 6, 2, 5, 1, 3};
    Matrix permuted(7, 3);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 3; ++c) permuted.at(r, c) = in.at(perm[r], c);
    const Matrix got = forward(ck, a, permuted);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(got.at(r, c) == base.at(perm[r], c));
}

// ---- representations --------------------------------------------------------

TEST_CASE("representation: fixed 2-2-2 network matches the hand computation") {
    const Matrix in = matrix_from_rows({{1.0f, 0.0f}, {-0.5f, 2.0f}});
    const Matrix rep = extract_representation(fixture_222(), arch_222(), in);
    REQUIRE(rep.rows == 2);
    REQUIRE(rep.cols == 2);
    CHECK(rep.at(0, 0) == 0.5370495915412903f);
    CHECK(rep.at(0, 1) == 0.5005202293395996f);
    CHECK(rep.at(1, 0) == -0.5716699361801147f);
    CHECK(rep.at(1, 1) == 0.8906373381614685f);
}

TEST_CASE("representation: no hidden layers returns the raw inputs") {
    ToyArchitecture a;
    a.input_dim = 2;
    a.num_classes = 3;
    const Checkpoint ck = params_to_checkpoint(a, random_params(a, 5));
    const Matrix in = matrix_from_rows({{0.5f, -0.5f}, {2.0f, 1.0f}});
    CHECK(extract_representation(ck, a, in) == in);
}

TEST_CASE("representation: zero-weight hidden layer yields tanh(bias) rows") {
    const ToyArchitecture a = arch_222();
    Checkpoint ck = fixture_222();
    ck.tensors["layer0.weight"] = Tensor::from({2, 2}, {0.0f, 0.0f, 0.0f, 0.0f});
    const std::vector<float> bias = ck.tensors.at("layer0.bias").data;
    const Matrix rep =
        extract_representation(ck, a, matrix_from_rows({{1.0f, 2.0f}, {-9.0f, 0.5f}}));
    for (std::size_t r = 0; r < rep.rows; ++r)
        for (std::size_t c = 0; c < rep.cols; ++c)
            CHECK(rep.at(r, c) ==
                  static_cast<float>(std::tanh(static_cast<double>(bias[c]))));
}

TEST_CASE("representation: composing with the final affine layer gives forward") {
    ToyArchitecture a;
    a.input_dim = 3;
    a.hidden_dims = {5, 4};
    a.num_classes = 3;
    const Checkpoint ck = params_to_checkpoint(a, random_params(a, 23));

    RngStream rng(derive_key(24, "compose-inputs", 0));
    Matrix in(6, 3);
    for (float& v : in.data) v = static_cast<float>(rng.uniform(-1.5, 1.5));

    const Matrix rep = extract_representation(ck, a, in);
    const Matrix logits = forward(ck, a, in);
    const Tensor& w = ck.tensors.at("layer2.weight");
    const Tensor& b = ck.tensors.at("layer2.bias");
    for (std::size_t r = 0; r < in.rows; ++r)
        for (std::size_t o = 0; o < 3; ++o) {
            double acc = static_cast<double>(b.data[o]);
            for (std::size_t i = 0; i < 4; ++i)
                acc += static_cast<double>(w.data[o * 4 + i]) *
                       static_cast<double>(rep.at(r, i));
            CHECK(std::fabs(acc - static_cast<double>(logits.at(r, o))) < 1e-6);
        }
}

// ---- parameter packing ------------------------------------------------------

TEST_CASE("params: checkpoint round trip is exact") {
    const ToyArchitecture a = arch_222();
    const Checkpoint ck = fixture_222();
    const Checkpoint back = params_to_checkpoint(a, checkpoint_to_params(a, ck));
    for (const auto& [name, t] : ck.tensors) CHECK(bitwise_equal(t, back.tensors.at(name)));
    CHECK(back.metadata.at("toy_arch") == arch_to_json(a).dump());

    CHECK(error_code_of([&] {
        params_to_checkpoint(a, std::vector<double>(3));
    }) == ErrorCode::dimension_mismatch);
}

// ---- loss and gradients -----------------------------------------------------

TEST_CASE("loss: zero parameters score log(num_classes)") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(31);
    const double loss = toy_loss(a, std::vector<double>(param_count(a)), data);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss: analytic gradient matches central finite differences") {
    // Spec tolerance: 1e-4 relative at step 1e-4. The acceptance suite runs 20
    // configurations; a handful here keeps the unit run quick.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ToyArchitecture a;
        a.input_dim = 2;
        a.num_classes = 2 + static_cast<int>(seed % 2);
        if (seed % 3 != 0) a.hidden_dims = {3 + static_cast<std::size_t>(seed % 2)};

        LabeledDataset data = blob_data(seed + 40, 12);
        if (a.num_classes == 3) {
            data = generate_dataset(parse_gen_spec({{"kind", "blobs"},
                                                    {"n", 12},
                                                    {"seed", seed + 40},
                                                    {"classes", 3},
                                                    {"separation", 3.0},
                                                    {"noise", 0.5}}));
        }

        std::vector<double> p = random_params(a, seed + 60);
        const std::vector<double> analytic = toy_loss_grad(a, p, data);

        const double h = 1e-4;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = toy_loss(a, p, data);
            p[i] = saved - h;
            const double down = toy_loss(a, p, data);
            p[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            num += (analytic[i] - fd) * (analytic[i] - fd);
            den += fd * fd;
        }
        CHECK(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-12));
    }
}

// ---- training ---------------------------------------------------------------

TEST_CASE("train: rejects bad hyperparameters and data") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(50);
    CHECK(error_code_of([&] { train_toy_model(a, data, 0, 0.1, 1); }) ==
          ErrorCode::parameter_out_of_range);
    CHECK(error_code_of([&] { train_toy_model(a, data, 5, 0.0, 1); }) ==
          ErrorCode::parameter_out_of_range);
    CHECK(error_code_of([&] { train_toy_model(a, data, 5, -0.5, 1); }) ==
          ErrorCode::parameter_out_of_range);
    CHECK(error_code_of([&] { train_toy_model(a, LabeledDataset{}, 5, 0.1, 1); }) ==
          ErrorCode::parameter_out_of_range);

    LabeledDataset wrong = data;
    wrong.num_classes = 3;  // arch has 2 outputs
    for (auto& v : wrong.labels) v = std::min(v, 1);
    CHECK(error_code_of([&] { train_toy_model(a, wrong, 5, 0.1, 1); }) ==
          ErrorCode::dimension_mismatch);
}

TEST_CASE("train: same seed gives bitwise-identical checkpoints") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(51);
    const Checkpoint m1 = train_toy_model(a, data, 20, 0.2, 77);
    const Checkpoint m2 = train_toy_model(a, data, 20, 0.2, 77);
    for (const auto& [name, t] : m1.tensors) CHECK(bitwise_equal(t, m2.tensors.at(name)));
    CHECK(m1.metadata == m2.metadata);
    CHECK(m1.metadata.at("train.epochs") == "20");
    CHECK(m1.metadata.at("train.seed") == "77");

    const Checkpoint other = train_toy_model(a, data, 20, 0.2, 78);
    CHECK(other.tensors.at("layer0.weight").data != m1.tensors.at("layer0.weight").data);
}

TEST_CASE("train: loss decreases over nearly every epoch on separable blobs") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(52, 80);

    // Deterministic training makes the e-epoch model a prefix of the (e+1)-th,
    // so per-epoch losses can be read off retrained checkpoints.
    const int total = 40;
    std::vector<double> losses;
    for (int e = 1; e <= total; ++e) {
        const Checkpoint m = train_toy_model(a, data, e, 0.2, 9);
        losses.push_back(toy_loss(a, checkpoint_to_params(a, m), data));
    }
    int improved = 0;
    for (std::size_t i = 1; i < losses.size(); ++i)
        if (losses[i] < losses[i - 1]) ++improved;
    CHECK(improved >= static_cast<int>(0.9 * (losses.size() - 1)));
    CHECK(losses.back() < losses.front());
}

TEST_CASE("train: init_from fine-tunes the given checkpoint") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(53);
    const Checkpoint base = train_toy_model(a, data, 10, 0.2, 3);

    // A vanishing learning rate keeps the fine-tuned model at its
    // initialization, which pins down that init_from was honored.
    const Checkpoint ft = train_toy_model(a, data, 1, 1e-12, 99, &base);
    for (const auto& [name, t] : base.tensors) {
        const Tensor& got = ft.tensors.at(name);
        for (std::size_t i = 0; i < t.data.size(); ++i)
            CHECK(std::fabs(got.data[i] - t.data[i]) < 1e-6);
    }

    // Non-conforming initialization is rejected.
    const Checkpoint junk = random_checkpoint(4);
    CHECK(error_code_of([&] { train_toy_model(a, data, 1, 0.1, 0, &junk); }) ==
          ErrorCode::architecture_mismatch);
}

TEST_CASE("train: fits the separable blobs it was trained on") {
    const ToyArchitecture a = arch_222();
    const LabeledDataset data = blob_data(54, 100);
    const Checkpoint m = train_toy_model(a, data, 150, 0.2, 6);
    const Matrix logits = forward(m, a, data.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const int pred = logits.at(r, 0) >= logits.at(r, 1) ? 0 : 1;
        if (pred == data.labels[r]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(logits.rows) >= 0.99);
}
