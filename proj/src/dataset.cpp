#include "mergeprobe/dataset.hpp"

#include <cmath>
#include <set>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/rng.hpp"

namespace mergeprobe {

void validate_dataset(const LabeledDataset& ds, const std::string& what) {
    if (ds.inputs.rows != ds.labels.size())
        fail(ErrorCode::dimension_mismatch,
             what + ": " + std::to_string(ds.inputs.rows) + " input rows vs " +
                 std::to_string(ds.labels.size()) + " labels");
    if (ds.inputs.data.size() != ds.inputs.rows * ds.inputs.cols)
        fail(ErrorCode::dimension_mismatch, what + ": input matrix storage size mismatch");
    if (ds.num_classes < 1)
        fail(ErrorCode::parameter_out_of_range, what + ": num_classes must be >= 1");
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes)
            fail(ErrorCode::parameter_out_of_range,
                 what + ": label " + std::to_string(ds.labels[i]) + " at row " +
                     std::to_string(i) + " outside [0, " + std::to_string(ds.num_classes) +
                     ")");
    for (float v : ds.inputs.data)
        if (!std::isfinite(v))
            fail(ErrorCode::parameter_out_of_range, what + ": non-finite input feature");
}

nlohmann::json dataset_to_json(const LabeledDataset& ds) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < ds.inputs.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < ds.inputs.cols; ++c)
            row.push_back(static_cast<double>(ds.inputs.at(r, c)));
        rows.push_back(std::move(row));
    }
    return {{"num_classes", ds.num_classes}, {"inputs", std::move(rows)},
            {"labels", ds.labels}};
}

LabeledDataset dataset_from_json(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "num_classes" && key != "inputs" && key != "labels")
            fail(ErrorCode::manifest_error, context + ": unexpected key '" + key + "'");
    }
    if (!j.contains("num_classes") || !j.at("num_classes").is_number_integer())
        fail(ErrorCode::manifest_error, context + ".num_classes: required integer field");
    if (!j.contains("inputs") || !j.at("inputs").is_array() || j.at("inputs").empty())
        fail(ErrorCode::manifest_error, context + ".inputs: required non-empty array");
    if (!j.contains("labels") || !j.at("labels").is_array())
        fail(ErrorCode::manifest_error, context + ".labels: required array field");

    LabeledDataset ds;
    ds.num_classes = j.at("num_classes").get<int>();
    const auto& rows = j.at("inputs");
    ds.inputs.rows = rows.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows.at(r);
        if (!row.is_array() || row.empty())
            fail(ErrorCode::manifest_error,
                 context + ".inputs[" + std::to_string(r) + "]: expected a non-empty array");
        if (r == 0) ds.inputs.cols = row.size();
        if (row.size() != ds.inputs.cols)
            fail(ErrorCode::manifest_error,
                 context + ".inputs[" + std::to_string(r) + "]: row length " +
                     std::to_string(row.size()) + " != " + std::to_string(ds.inputs.cols));
        for (const auto& v : row) {
            if (!v.is_number())
                fail(ErrorCode::manifest_error,
                     context + ".inputs[" + std::to_string(r) + "]: expected numbers");
            ds.inputs.data.push_back(static_cast<float>(v.get<double>()));
        }
    }
    for (const auto& v : j.at("labels")) {
        if (!v.is_number_integer())
            fail(ErrorCode::manifest_error, context + ".labels: expected integers");
        ds.labels.push_back(v.get<int>());
    }
    try {
        validate_dataset(ds, context);
    } catch (const Error& e) {
        fail(ErrorCode::manifest_error, e.what());
    }
    return ds;
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
    return dataset_from_json(read_json_file(path, ErrorCode::manifest_error), path.string());
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    write_json_file(path, dataset_to_json(ds));
}

// ---- generator --------------------------------------------------------------

GenSpec parse_gen_spec(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    if (!j.contains("kind") || !j.at("kind").is_string())
        fail(ErrorCode::manifest_error, context + ".kind: required string field");

    GenSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    static const std::set<std::string> common = {"kind", "n", "seed", "shuffle_labels",
                                                "splits"};
    std::set<std::string> allowed = common;
    if (spec.kind == "blobs") {
        allowed.insert({"classes", "separation", "noise"});
        spec.noise = 0.5;
    } else if (spec.kind == "xor_grid") {
        allowed.insert({"noise"});
        spec.noise = 0.0;
    } else if (spec.kind == "rings") {
        allowed.insert({"classes", "radius", "gap", "noise"});
        spec.noise = 0.1;
    } else {
        fail(ErrorCode::manifest_error,
             context + ".kind: unknown generator kind '" + spec.kind + "'");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            fail(ErrorCode::manifest_error,
                 context + ": unexpected key '" + key + "' for kind '" + spec.kind + "'");
    }

    if (!j.contains("n") || !is_nonneg_integer(j.at("n")) || j.at("n").get<std::size_t>() == 0)
        fail(ErrorCode::manifest_error, context + ".n: required positive integer");
    spec.n = j.at("n").get<std::size_t>();
    if (j.contains("seed")) {
        if (!is_nonneg_integer(j.at("seed")))
            fail(ErrorCode::manifest_error, context + ".seed: expected a non-negative integer");
        spec.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("classes")) {
        if (!j.at("classes").is_number_integer() || j.at("classes").get<int>() < 2)
            fail(ErrorCode::manifest_error, context + ".classes: expected an integer >= 2");
        spec.classes = j.at("classes").get<int>();
    }
    auto real_field = [&](const char* key, double lo) {
        if (!j.at(key).is_number())
            fail(ErrorCode::manifest_error,
                 context + "." + key + ": expected a number");
        const double v = j.at(key).get<double>();
        if (!std::isfinite(v) || v < lo)
            fail(ErrorCode::manifest_error,
                 context + "." + key + ": must be a finite number >= " + fmt_double(lo));
        return v;
    };
    if (j.contains("separation")) spec.separation = real_field("separation", 0.0);
    if (j.contains("noise")) spec.noise = real_field("noise", 0.0);
    if (j.contains("radius")) spec.radius = real_field("radius", 1e-9);
    if (j.contains("gap")) spec.gap = real_field("gap", 1e-9);
    if (j.contains("shuffle_labels")) {
        if (!j.at("shuffle_labels").is_boolean())
            fail(ErrorCode::manifest_error, context + ".shuffle_labels: expected a boolean");
        spec.shuffle_labels = j.at("shuffle_labels").get<bool>();
    }
    if (j.contains("splits")) {
        if (!j.at("splits").is_object() || j.at("splits").empty())
            fail(ErrorCode::manifest_error, context + ".splits: expected a non-empty object");
        for (const auto& [name, count] : j.at("splits").items()) {
            if (name.empty() || !is_nonneg_integer(count) ||
                count.get<std::size_t>() == 0)
                fail(ErrorCode::manifest_error,
                     context + ".splits: entries must map names to positive counts");
            spec.splits[name] = count.get<std::size_t>();
        }
    }
    return spec;
}

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;

LabeledDataset generate_with_key(const GenSpec& spec, std::size_t n, std::uint64_t key) {
    LabeledDataset ds;
    ds.inputs.rows = n;
    ds.inputs.cols = 2;
    ds.inputs.data.resize(n * 2);
    ds.labels.resize(n);

    RngStream rng(key);
    if (spec.kind == "blobs") {
        ds.num_classes = spec.classes;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
            const double angle = kTau * c / spec.classes;
            const double x = spec.separation * std::cos(angle) + spec.noise * rng.normal();
            const double y = spec.separation * std::sin(angle) + spec.noise * rng.normal();
            ds.inputs.data[i * 2] = static_cast<float>(x);
            ds.inputs.data[i * 2 + 1] = static_cast<float>(y);
            ds.labels[i] = c;
        }
    } else if (spec.kind == "xor_grid") {
        ds.num_classes = 2;
        for (std::size_t i = 0; i < n; ++i) {
            double x = rng.uniform(-1.0, 1.0);
            double y = rng.uniform(-1.0, 1.0);
            ds.labels[i] = ((x > 0.0) != (y > 0.0)) ? 1 : 0;
            // Jitter is applied after labeling, so high noise yields genuinely
            // noisy labels near the quadrant boundaries.
            x += spec.noise * rng.normal();
            y += spec.noise * rng.normal();
            ds.inputs.data[i * 2] = static_cast<float>(x);
            ds.inputs.data[i * 2 + 1] = static_cast<float>(y);
        }
    } else {  // rings
        ds.num_classes = spec.classes;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
            const double r = spec.radius + c * spec.gap + spec.noise * rng.normal();
            const double theta = kTau * rng.unit();
            ds.inputs.data[i * 2] = static_cast<float>(r * std::cos(theta));
            ds.inputs.data[i * 2 + 1] = static_cast<float>(r * std::sin(theta));
            ds.labels[i] = c;
        }
    }

    if (spec.shuffle_labels) {
        // A separate stream keeps the point geometry independent of the
        // shuffle draws.
        RngStream shuffle(derive_key(key, "shuffle", 0));
        for (std::size_t i = 0; i < n; ++i)
            ds.labels[i] = static_cast<int>(
                shuffle.below(static_cast<std::uint64_t>(ds.num_classes)));
    }
    return ds;
}

}  // namespace

LabeledDataset generate_dataset(const GenSpec& spec) {
    return generate_with_key(spec, spec.n, derive_key(spec.seed, spec.kind, 0));
}

std::map<std::string, LabeledDataset> generate_splits(const GenSpec& spec) {
    if (spec.splits.empty())
        fail(ErrorCode::manifest_error, "generate_splits: spec declares no splits");
    std::map<std::string, LabeledDataset> out;
    for (const auto& [name, count] : spec.splits)
        out.emplace(name, generate_with_key(spec, count,
                                            derive_key(spec.seed, spec.kind + "/" + name, 0)));
    return out;
}

LabeledDataset dataset_from_reference(const nlohmann::json& j, const std::string& context) {
    if (j.is_object() && j.contains("kind"))
        return generate_dataset(parse_gen_spec(j, context));
    return dataset_from_json(j, context);
}

LabeledDataset load_dataset_or_generate(const std::filesystem::path& path) {
    return dataset_from_reference(read_json_file(path, ErrorCode::manifest_error),
                                 path.string());
}

}  // namespace mergeprobe
