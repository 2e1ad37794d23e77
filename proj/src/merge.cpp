#include "mergeprobe/merge.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"
#include "mergeprobe/rng.hpp"

namespace mergeprobe {

namespace {

// Metadata keys on which every input checkpoint agrees carry over to the
// merged result; model_id and prior merge provenance never do.
std::map<std::string, std::string> inherit_metadata(
        const std::vector<const Checkpoint*>& inputs) {
    std::map<std::string, std::string> out;
    if (inputs.empty()) return out;
    for (const auto& [key, value] : inputs.front()->metadata) {
        if (key == "model_id" || key.rfind("merge.", 0) == 0) continue;
        bool agreed = true;
        for (std::size_t i = 1; i < inputs.size() && agreed; ++i) {
            auto it = inputs[i]->metadata.find(key);
            agreed = it != inputs[i]->metadata.end() && it->second == value;
        }
        if (agreed) out[key] = value;
    }
    return out;
}

std::string fmt_number(double x) { return nlohmann::json(x).dump(); }

std::vector<const Checkpoint*> pointers(const std::vector<Checkpoint>& cks) {
    std::vector<const Checkpoint*> ptrs;
    ptrs.reserve(cks.size());
    for (const auto& c : cks) ptrs.push_back(&c);
    return ptrs;
}

void check_same_layout(const std::vector<const TaskVector*>& tvs, const char* what) {
    for (std::size_t i = 1; i < tvs.size(); ++i) {
        if (tvs[i]->tensors.size() != tvs[0]->tensors.size())
            fail(ErrorCode::incompatible_parents,
                 std::string(what) + ": task vectors disagree on tensor set");
        auto a = tvs[0]->tensors.begin();
        auto b = tvs[i]->tensors.begin();
        for (; a != tvs[0]->tensors.end(); ++a, ++b) {
            if (a->first != b->first || a->second.shape != b->second.shape)
                fail(ErrorCode::incompatible_parents,
                     std::string(what) + ": task vectors disagree on tensor '" +
                         a->first + "'");
        }
    }
}

}  // namespace

Checkpoint merge_linear(const std::vector<Checkpoint>& parents,
                        const std::vector<double>& weights) {
    if (parents.empty())
        fail(ErrorCode::degenerate_weights, "merge_linear: at least one parent required");
    if (weights.size() != parents.size())
        fail(ErrorCode::degenerate_weights,
             "merge_linear: got " + std::to_string(weights.size()) + " weights for " +
                 std::to_string(parents.size()) + " parents");
    double wsum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w))
            fail(ErrorCode::degenerate_weights, "merge_linear: weights must be finite");
        if (w < 0.0)
            fail(ErrorCode::degenerate_weights,
                 "merge_linear: weights must be non-negative, got " + fmt_number(w));
        wsum += w;
    }
    if (!(wsum > 0.0))
        fail(ErrorCode::degenerate_weights,
             "merge_linear: weight sum must be positive, got " + fmt_number(wsum));
    require_compatible(pointers(parents), "merge_linear");

    std::vector<double> norm(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) norm[i] = weights[i] / wsum;

    Checkpoint out;
    out.metadata = inherit_metadata(pointers(parents));
    std::vector<double> contrib(parents.size());
    for (const auto& [name, ref] : parents.front().tensors) {
        Tensor t = Tensor::zeros(ref.shape);
        for (std::size_t e = 0; e < t.data.size(); ++e) {
            for (std::size_t i = 0; i < parents.size(); ++i)
                contrib[i] = norm[i] * static_cast<double>(parents[i].tensors.at(name).data[e]);
            // Summing in value order makes the result independent of parent
            // order: permuted inputs produce the same sorted sequence, hence
            // the same rounding at every step.
            std::sort(contrib.begin(), contrib.end());
            double acc = 0.0;
            for (double c : contrib) acc += c;
            t.data[e] = static_cast<float>(acc);
        }
        out.tensors.emplace(name, std::move(t));
    }
    out.metadata["merge.method"] = "linear";
    out.metadata["merge.weights"] = nlohmann::json(norm).dump();
    return out;
}

Checkpoint merge_slerp(const Checkpoint& a, const Checkpoint& b, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        fail(ErrorCode::parameter_out_of_range,
             "merge_slerp: t must be in [0, 1], got " + fmt_number(t));
    require_compatible({&a, &b}, "merge_slerp");

    Checkpoint out;
    out.metadata = inherit_metadata({&a, &b});
    for (const auto& [name, ta] : a.tensors) {
        const Tensor& tb = b.tensors.at(name);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t e = 0; e < ta.data.size(); ++e) {
            const double x = ta.data[e], y = tb.data[e];
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);

        double ca = 1.0 - t, cb = t;  // linear fallback coefficients
        if (na > 0.0 && nb > 0.0) {
            const double cosw = std::clamp(dot / (na * nb), -1.0, 1.0);
            const double omega = std::acos(cosw);
            const double sinw = std::sin(omega);
            // Near-collinear tensors make sin(omega) vanish and the spherical
            // coefficients ill-conditioned; interpolate linearly instead.
            if (std::fabs(sinw) >= 1e-6) {
                ca = std::sin((1.0 - t) * omega) / sinw;
                cb = std::sin(t * omega) / sinw;
            }
        }

        Tensor tr = Tensor::zeros(ta.shape);
        for (std::size_t e = 0; e < tr.data.size(); ++e)
            tr.data[e] = static_cast<float>(ca * static_cast<double>(ta.data[e]) +
                                            cb * static_cast<double>(tb.data[e]));
        out.tensors.emplace(name, std::move(tr));
    }
    out.metadata["merge.method"] = "slerp";
    out.metadata["merge.t"] = fmt_number(t);
    return out;
}

TaskVector compute_task_vector(const Checkpoint& fine_tuned, const Checkpoint& base) {
    require_compatible({&base, &fine_tuned}, "compute_task_vector");
    TaskVector tv;
    for (const auto& [name, tf] : fine_tuned.tensors) {
        const Tensor& tb = base.tensors.at(name);
        Tensor d = Tensor::zeros(tf.shape);
        for (std::size_t e = 0; e < d.data.size(); ++e)
            d.data[e] = static_cast<float>(static_cast<double>(tf.data[e]) -
                                           static_cast<double>(tb.data[e]));
        tv.tensors.emplace(name, std::move(d));
    }
    return tv;
}

Checkpoint merge_task_arithmetic(const Checkpoint& base,
                                 const std::vector<Checkpoint>& fine_tuned,
                                 double lambda) {
    if (fine_tuned.empty())
        fail(ErrorCode::parameter_out_of_range,
             "merge_task_arithmetic: at least one fine-tuned model required");
    if (!std::isfinite(lambda) || !(lambda > 0.0))
        fail(ErrorCode::parameter_out_of_range,
             "merge_task_arithmetic: lambda must be positive, got " + fmt_number(lambda));
    std::vector<const Checkpoint*> all = {&base};
    for (const auto& c : fine_tuned) all.push_back(&c);
    require_compatible(all, "merge_task_arithmetic");

    Checkpoint out;
    out.metadata = inherit_metadata(all);
    for (const auto& [name, tb] : base.tensors) {
        Tensor t = Tensor::zeros(tb.shape);
        for (std::size_t e = 0; e < t.data.size(); ++e) {
            // Task-vector differences stay in double until the final cast, so
            // the single-model lambda = 1 case reproduces the fine-tuned model
            // exactly.
            double acc = 0.0;
            for (const auto& c : fine_tuned)
                acc += static_cast<double>(c.tensors.at(name).data[e]) -
                       static_cast<double>(tb.data[e]);
            t.data[e] = static_cast<float>(static_cast<double>(tb.data[e]) + lambda * acc);
        }
        out.tensors.emplace(name, std::move(t));
    }
    out.metadata["merge.method"] = "task_arithmetic";
    out.metadata["merge.lambda"] = fmt_number(lambda);
    return out;
}

TaskVector trim_by_magnitude(const TaskVector& tv, double density_k) {
    if (!(density_k > 0.0 && density_k <= 1.0))
        fail(ErrorCode::parameter_out_of_range,
             "trim_by_magnitude: density must be in (0, 1], got " + fmt_number(density_k));
    TaskVector out;
    for (const auto& [name, t] : tv.tensors) {
        const std::size_t n = t.data.size();
        // ceil(k*n) entries survive; the epsilon guards against products like
        // 0.1 * 10 landing just above an integer in binary.
        std::size_t keep = static_cast<std::size_t>(
            std::ceil(density_k * static_cast<double>(n) - 1e-9));
        keep = std::clamp<std::size_t>(keep, 1, n);

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&t](std::size_t ia, std::size_t ib) {
            const float ma = std::fabs(t.data[ia]), mb = std::fabs(t.data[ib]);
            if (ma != mb) return ma > mb;
            return ia < ib;  // magnitude ties: lower flat index survives
        });

        Tensor kept = Tensor::zeros(t.shape);
        for (std::size_t i = 0; i < keep; ++i) kept.data[order[i]] = t.data[order[i]];
        out.tensors.emplace(name, std::move(kept));
    }
    return out;
}

SignVector elect_sign(const std::vector<TaskVector>& tvs) {
    if (tvs.empty())
        fail(ErrorCode::parameter_out_of_range, "elect_sign: at least one task vector required");
    std::vector<const TaskVector*> ptrs;
    for (const auto& tv : tvs) ptrs.push_back(&tv);
    check_same_layout(ptrs, "elect_sign");

    SignVector out;
    for (const auto& [name, first] : tvs.front().tensors) {
        std::vector<std::int8_t> signs(first.data.size());
        for (std::size_t e = 0; e < signs.size(); ++e) {
            double total = 0.0;
            for (const auto& tv : tvs) total += static_cast<double>(tv.tensors.at(name).data[e]);
            signs[e] = (total < 0.0) ? -1 : 1;  // a zero sum elects +1
        }
        out.signs.emplace(name, std::move(signs));
    }
    return out;
}

TaskVector disjoint_merge(const std::vector<TaskVector>& tvs, const SignVector& signs) {
    if (tvs.empty())
        fail(ErrorCode::parameter_out_of_range,
             "disjoint_merge: at least one task vector required");
    std::vector<const TaskVector*> ptrs;
    for (const auto& tv : tvs) ptrs.push_back(&tv);
    check_same_layout(ptrs, "disjoint_merge");

    TaskVector out;
    for (const auto& [name, first] : tvs.front().tensors) {
        auto sit = signs.signs.find(name);
        if (sit == signs.signs.end() || sit->second.size() != first.data.size())
            fail(ErrorCode::incompatible_parents,
                 "disjoint_merge: sign vector does not match tensor '" + name + "'");
        Tensor t = Tensor::zeros(first.shape);
        for (std::size_t e = 0; e < t.data.size(); ++e) {
            const int elected = sit->second[e];
            double acc = 0.0;
            int count = 0;
            for (const auto& tv : tvs) {
                const float v = tv.tensors.at(name).data[e];
                if (v == 0.0f) continue;
                if ((elected > 0) != (v > 0.0f)) continue;
                acc += static_cast<double>(v);
                ++count;
            }
            t.data[e] = count > 0 ? static_cast<float>(acc / count) : 0.0f;
        }
        out.tensors.emplace(name, std::move(t));
    }
    return out;
}

namespace {

// Internal double-precision task vectors for the TIES / DARE-TIES tail.
// Selection logic (trim counts, tie-breaks, sign election, aligned means)
// mirrors trim_by_magnitude / elect_sign / disjoint_merge; keeping the
// differences in double until the final cast is what makes the documented
// reductions hold bitwise (k = 1 single model -> task arithmetic, p = 0 ->
// plain TIES, and both -> the fine-tuned model at lambda = 1).
using DoubleTV = std::map<std::string, std::vector<double>>;

DoubleTV double_task_vector(const Checkpoint& fine_tuned, const Checkpoint& base) {
    DoubleTV tv;
    for (const auto& [name, tf] : fine_tuned.tensors) {
        const Tensor& tb = base.tensors.at(name);
        std::vector<double> d(tf.data.size());
        for (std::size_t e = 0; e < d.size(); ++e)
            d[e] = static_cast<double>(tf.data[e]) - static_cast<double>(tb.data[e]);
        tv.emplace(name, std::move(d));
    }
    return tv;
}

void trim_double_tv(DoubleTV& tv, double density_k) {
    for (auto& [name, data] : tv) {
        const std::size_t n = data.size();
        std::size_t keep = static_cast<std::size_t>(
            std::ceil(density_k * static_cast<double>(n) - 1e-9));
        keep = std::clamp<std::size_t>(keep, 1, n);
        if (keep == n) continue;

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&data](std::size_t ia, std::size_t ib) {
            const double ma = std::fabs(data[ia]), mb = std::fabs(data[ib]);
            if (ma != mb) return ma > mb;
            return ia < ib;  // magnitude ties: lower flat index survives
        });
        for (std::size_t i = keep; i < n; ++i) data[order[i]] = 0.0;
    }
}

// Shared tail of TIES and DARE-TIES: trim each task vector, elect signs,
// disjoint-merge over aligned nonzero entries, then base + lambda * merged.
Checkpoint ties_combine(const Checkpoint& base, std::vector<DoubleTV> tvs,
                        const std::vector<const Checkpoint*>& all_inputs,
                        double density_k, double lambda) {
    for (auto& tv : tvs) trim_double_tv(tv, density_k);

    Checkpoint out;
    out.metadata = inherit_metadata(all_inputs);
    for (const auto& [name, tb] : base.tensors) {
        Tensor t = Tensor::zeros(tb.shape);
        for (std::size_t e = 0; e < t.data.size(); ++e) {
            double total = 0.0;
            for (const auto& tv : tvs) total += tv.at(name)[e];
            const bool elected_positive = !(total < 0.0);  // zero sum elects +1

            double acc = 0.0;
            int count = 0;
            for (const auto& tv : tvs) {
                const double v = tv.at(name)[e];
                if (v == 0.0) continue;
                if ((v > 0.0) != elected_positive) continue;
                acc += v;
                ++count;
            }
            const double merged = count > 0 ? acc / count : 0.0;
            t.data[e] = static_cast<float>(static_cast<double>(tb.data[e]) + lambda * merged);
        }
        out.tensors.emplace(name, std::move(t));
    }
    out.metadata["merge.lambda"] = fmt_number(lambda);
    out.metadata["merge.density"] = fmt_number(density_k);
    return out;
}

}  // namespace

Checkpoint merge_ties(const Checkpoint& base, const std::vector<Checkpoint>& fine_tuned,
                      double density_k, double lambda) {
    if (fine_tuned.empty())
        fail(ErrorCode::parameter_out_of_range,
             "merge_ties: at least one fine-tuned model required");
    if (!std::isfinite(lambda) || !(lambda > 0.0))
        fail(ErrorCode::parameter_out_of_range,
             "merge_ties: lambda must be positive, got " + fmt_number(lambda));
    std::vector<const Checkpoint*> all = {&base};
    for (const auto& c : fine_tuned) all.push_back(&c);
    require_compatible(all, "merge_ties");

    std::vector<DoubleTV> tvs;
    tvs.reserve(fine_tuned.size());
    for (const auto& ft : fine_tuned) tvs.push_back(double_task_vector(ft, base));
    Checkpoint out = ties_combine(base, std::move(tvs), all, density_k, lambda);
    out.metadata["merge.method"] = "ties";
    return out;
}

double dare_unit_draw(std::uint64_t seed, const std::string& tensor_name,
                      std::uint32_t model_index, std::uint64_t flat_index) {
    const std::uint64_t key = derive_key(seed, tensor_name, model_index);
    // Counter 0 is reserved; element i draws from counter i + 1.
    return keyed_unit(key, flat_index + 1);
}

TaskVector dare_sparsify(const TaskVector& tv, double drop_prob, std::uint64_t seed,
                         std::uint32_t model_index) {
    if (!(drop_prob >= 0.0 && drop_prob < 1.0))
        fail(ErrorCode::parameter_out_of_range,
             "dare_sparsify: drop probability must be in [0, 1), got " + fmt_number(drop_prob));
    const double rescale = 1.0 / (1.0 - drop_prob);
    TaskVector out;
    for (const auto& [name, t] : tv.tensors) {
        const std::uint64_t key = derive_key(seed, name, model_index);
        Tensor kept = Tensor::zeros(t.shape);
        for (std::size_t e = 0; e < kept.data.size(); ++e) {
            if (keyed_unit(key, e + 1) < drop_prob) continue;  // dropped
            kept.data[e] = static_cast<float>(static_cast<double>(t.data[e]) * rescale);
        }
        out.tensors.emplace(name, std::move(kept));
    }
    return out;
}

Checkpoint merge_dare_ties(const Checkpoint& base, const std::vector<Checkpoint>& fine_tuned,
                           double drop_prob, double density_k, double lambda,
                           std::uint64_t seed) {
    if (fine_tuned.empty())
        fail(ErrorCode::parameter_out_of_range,
             "merge_dare_ties: at least one fine-tuned model required");
    if (!std::isfinite(lambda) || !(lambda > 0.0))
        fail(ErrorCode::parameter_out_of_range,
             "merge_dare_ties: lambda must be positive, got " + fmt_number(lambda));
    std::vector<const Checkpoint*> all = {&base};
    for (const auto& c : fine_tuned) all.push_back(&c);
    require_compatible(all, "merge_dare_ties");

    if (!(drop_prob >= 0.0 && drop_prob < 1.0))
        fail(ErrorCode::parameter_out_of_range,
             "merge_dare_ties: drop probability must be in [0, 1), got " +
                 fmt_number(drop_prob));
    const double rescale = 1.0 / (1.0 - drop_prob);
    std::vector<DoubleTV> tvs;
    tvs.reserve(fine_tuned.size());
    for (std::size_t i = 0; i < fine_tuned.size(); ++i) {
        DoubleTV tv = double_task_vector(fine_tuned[i], base);
        // Same keyed draws as dare_sparsify; at p = 0 nothing is dropped and
        // the rescale is exactly 1, so the result matches plain TIES bitwise.
        for (auto& [name, data] : tv) {
            const std::uint64_t key =
                derive_key(seed, name, static_cast<std::uint32_t>(i));
            for (std::size_t e = 0; e < data.size(); ++e) {
                if (keyed_unit(key, e + 1) < drop_prob)
                    data[e] = 0.0;
                else
                    data[e] *= rescale;
            }
        }
        tvs.push_back(std::move(tv));
    }
    Checkpoint out = ties_combine(base, std::move(tvs), all, density_k, lambda);
    out.metadata["merge.method"] = "dare_ties";
    out.metadata["merge.drop_prob"] = fmt_number(drop_prob);
    out.metadata["merge.seed"] = std::to_string(seed);
    return out;
}

// ---- recipes ----------------------------------------------------------------

const char* merge_method_name(MergeMethod method) {
    switch (method) {
        case MergeMethod::linear: return "linear";
        case MergeMethod::slerp: return "slerp";
        case MergeMethod::task_arithmetic: return "task_arithmetic";
        case MergeMethod::ties: return "ties";
        case MergeMethod::dare_ties: return "dare_ties";
    }
    return "?";
}

namespace {

MergeMethod method_from_name(const std::string& name, const std::string& context) {
    if (name == "linear") return MergeMethod::linear;
    if (name == "slerp") return MergeMethod::slerp;
    if (name == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (name == "ties") return MergeMethod::ties;
    if (name == "dare_ties") return MergeMethod::dare_ties;
    fail(ErrorCode::manifest_error, context + ".method: unknown merge method '" + name + "'");
}

double number_field(const nlohmann::json& j, const std::string& key,
                    const std::string& context) {
    if (!j.at(key).is_number())
        fail(ErrorCode::manifest_error, context + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

// Keys each method understands on top of the common name/method/parents.
const std::set<std::string>& method_keys(MergeMethod method) {
    static const std::set<std::string> linear = {"weights"};
    static const std::set<std::string> slerp = {"t"};
    static const std::set<std::string> ta = {"base", "lambda"};
    static const std::set<std::string> ties = {"base", "lambda", "density"};
    static const std::set<std::string> dare = {"base", "lambda", "density", "drop_prob", "seed"};
    switch (method) {
        case MergeMethod::linear: return linear;
        case MergeMethod::slerp: return slerp;
        case MergeMethod::task_arithmetic: return ta;
        case MergeMethod::ties: return ties;
        case MergeMethod::dare_ties: return dare;
    }
    return linear;
}

}  // namespace

MergeRecipe parse_recipe(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    if (!j.contains("method") || !j.at("method").is_string())
        fail(ErrorCode::manifest_error, context + ".method: required string field");

    MergeRecipe r;
    r.method = method_from_name(j.at("method").get<std::string>(), context);

    const std::set<std::string>& extra = method_keys(r.method);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key == "name" || key == "method" || key == "parents") continue;
        if (!extra.count(key))
            fail(ErrorCode::manifest_error,
                 context + ": unexpected key '" + key + "' for method '" +
                     merge_method_name(r.method) + "'");
    }

    if (j.contains("name")) {
        if (!j.at("name").is_string())
            fail(ErrorCode::manifest_error, context + ".name: expected a string");
        r.name = j.at("name").get<std::string>();
    }

    if (!j.contains("parents") || !j.at("parents").is_array())
        fail(ErrorCode::manifest_error, context + ".parents: required array field");
    for (const auto& p : j.at("parents")) {
        if (!p.is_string() || p.get<std::string>().empty())
            fail(ErrorCode::manifest_error,
                 context + ".parents: entries must be non-empty strings");
        r.parents.push_back(p.get<std::string>());
    }

    if (j.contains("base")) {
        if (!j.at("base").is_string())
            fail(ErrorCode::manifest_error, context + ".base: expected a string");
        r.base = j.at("base").get<std::string>();
    }
    if (j.contains("weights")) {
        if (!j.at("weights").is_array())
            fail(ErrorCode::manifest_error, context + ".weights: expected an array of numbers");
        for (const auto& w : j.at("weights")) {
            if (!w.is_number())
                fail(ErrorCode::manifest_error,
                     context + ".weights: expected an array of numbers");
            r.weights.push_back(w.get<double>());
        }
    }
    if (j.contains("t")) r.t = number_field(j, "t", context);
    if (j.contains("lambda")) r.lambda = number_field(j, "lambda", context);
    if (j.contains("density")) r.density = number_field(j, "density", context);
    if (j.contains("drop_prob")) r.drop_prob = number_field(j, "drop_prob", context);
    if (j.contains("seed")) {
        if (!is_nonneg_integer(j.at("seed")))
            fail(ErrorCode::manifest_error,
                 context + ".seed: expected a non-negative integer");
        r.seed = j.at("seed").get<std::uint64_t>();
        r.has_seed = true;
    }

    validate_recipe(r, context);
    return r;
}

void validate_recipe(const MergeRecipe& r, const std::string& context) {
    if (r.parents.empty())
        fail(ErrorCode::manifest_error, context + ".parents: at least one parent required");

    const bool needs_base = r.method == MergeMethod::task_arithmetic ||
                            r.method == MergeMethod::ties ||
                            r.method == MergeMethod::dare_ties;
    if (needs_base && r.base.empty())
        fail(ErrorCode::manifest_error,
             context + ".base: method '" + std::string(merge_method_name(r.method)) +
                 "' requires a base model");

    switch (r.method) {
        case MergeMethod::linear: {
            if (!r.weights.empty() && r.weights.size() != r.parents.size())
                fail(ErrorCode::manifest_error,
                     context + ".weights: got " + std::to_string(r.weights.size()) +
                         " weights for " + std::to_string(r.parents.size()) + " parents");
            double wsum = 0.0;
            for (double w : r.weights) {
                if (!std::isfinite(w) || w < 0.0)
                    fail(ErrorCode::manifest_error,
                         context + ".weights: weights must be finite and non-negative");
                wsum += w;
            }
            if (!r.weights.empty() && !(wsum > 0.0))
                fail(ErrorCode::manifest_error,
                     context + ".weights: weight sum must be positive");
            break;
        }
        case MergeMethod::slerp:
            if (r.parents.size() != 2)
                fail(ErrorCode::manifest_error,
                     context + ".parents: slerp requires exactly 2 parents, got " +
                         std::to_string(r.parents.size()));
            if (!(r.t >= 0.0 && r.t <= 1.0))
                fail(ErrorCode::manifest_error,
                     context + ".t: t must be in [0, 1], got " + fmt_number(r.t));
            break;
        case MergeMethod::task_arithmetic:
            if (!std::isfinite(r.lambda) || !(r.lambda > 0.0))
                fail(ErrorCode::manifest_error,
                     context + ".lambda: lambda must be positive, got " + fmt_number(r.lambda));
            break;
        case MergeMethod::dare_ties:
            if (!(r.drop_prob >= 0.0 && r.drop_prob < 1.0))
                fail(ErrorCode::manifest_error,
                     context + ".drop_prob: drop probability must be in [0, 1), got " +
                         fmt_number(r.drop_prob));
            [[fallthrough]];
        case MergeMethod::ties:
            if (!std::isfinite(r.lambda) || !(r.lambda > 0.0))
                fail(ErrorCode::manifest_error,
                     context + ".lambda: lambda must be positive, got " + fmt_number(r.lambda));
            if (!(r.density > 0.0 && r.density <= 1.0))
                fail(ErrorCode::manifest_error,
                     context + ".density: density must be in (0, 1], got " +
                         fmt_number(r.density));
            break;
    }
}

Checkpoint run_merge(const MergeRecipe& recipe, const std::vector<Checkpoint>& parents,
                     const Checkpoint* base) {
    validate_recipe(recipe, recipe.name.empty() ? "recipe" : "recipe '" + recipe.name + "'");
    if (parents.size() != recipe.parents.size())
        fail(ErrorCode::manifest_error,
             "run_merge: recipe names " + std::to_string(recipe.parents.size()) +
                 " parents but " + std::to_string(parents.size()) + " were supplied");
    const bool needs_base = recipe.method == MergeMethod::task_arithmetic ||
                            recipe.method == MergeMethod::ties ||
                            recipe.method == MergeMethod::dare_ties;
    if (needs_base && base == nullptr)
        fail(ErrorCode::manifest_error,
             std::string("run_merge: method '") + merge_method_name(recipe.method) +
                 "' requires a base checkpoint");

    Checkpoint out;
    switch (recipe.method) {
        case MergeMethod::linear: {
            std::vector<double> w = recipe.weights;
            if (w.empty()) w.assign(parents.size(), 1.0);
            out = merge_linear(parents, w);
            break;
        }
        case MergeMethod::slerp:
            out = merge_slerp(parents[0], parents[1], recipe.t);
            break;
        case MergeMethod::task_arithmetic:
            out = merge_task_arithmetic(*base, parents, recipe.lambda);
            break;
        case MergeMethod::ties:
            out = merge_ties(*base, parents, recipe.density, recipe.lambda);
            break;
        case MergeMethod::dare_ties:
            out = merge_dare_ties(*base, parents, recipe.drop_prob, recipe.density,
                                  recipe.lambda, recipe.seed);
            break;
    }
    if (!recipe.name.empty()) out.metadata["merge.recipe"] = recipe.name;
    return out;
}

}  // namespace mergeprobe
