#include "mergeprobe/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mergeprobe/errors.hpp"
#include "mergeprobe/jsonio.hpp"

namespace mergeprobe {

namespace {

// Model and recipe names become file names; keep them to a safe charset.
bool valid_name(const std::string& name) {
    if (name.empty() || name == "." || name == "..") return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
        if (!ok) return false;
    }
    return true;
}

void require_file(const std::filesystem::path& p, const std::string& context) {
    if (!std::filesystem::is_regular_file(p))
        fail(ErrorCode::manifest_error,
             context + ": referenced file '" + p.string() + "' does not exist");
}

TrainSpec parse_train_spec(const nlohmann::json& j, const std::filesystem::path& dir,
                           const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "data" && key != "epochs" && key != "learning_rate" && key != "seed" &&
            key != "init_from")
            fail(ErrorCode::manifest_error, context + ": unexpected key '" + key + "'");
    }
    TrainSpec spec;
    if (!j.contains("data"))
        fail(ErrorCode::manifest_error, context + ".data: required dataset reference");
    if (j.at("data").is_string()) {
        const std::filesystem::path p = dir / j.at("data").get<std::string>();
        require_file(p, context + ".data");
        spec.data = p.string();
    } else if (j.at("data").is_object()) {
        spec.data = j.at("data");
    } else {
        fail(ErrorCode::manifest_error,
             context + ".data: expected a path string or an inline object");
    }
    if (!j.contains("epochs") || !j.at("epochs").is_number_integer() ||
        j.at("epochs").get<int>() < 1)
        fail(ErrorCode::manifest_error, context + ".epochs: required integer >= 1");
    spec.epochs = j.at("epochs").get<int>();
    if (!j.contains("learning_rate") || !j.at("learning_rate").is_number())
        fail(ErrorCode::manifest_error, context + ".learning_rate: required number");
    spec.learning_rate = j.at("learning_rate").get<double>();
    if (!std::isfinite(spec.learning_rate) || !(spec.learning_rate > 0.0))
        fail(ErrorCode::manifest_error, context + ".learning_rate: must be positive");
    if (j.contains("seed")) {
        if (!is_nonneg_integer(j.at("seed")))
            fail(ErrorCode::manifest_error,
                 context + ".seed: expected a non-negative integer");
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.has_seed = true;
    }
    if (j.contains("init_from")) {
        if (!j.at("init_from").is_string() || j.at("init_from").get<std::string>().empty())
            fail(ErrorCode::manifest_error, context + ".init_from: expected a model name");
        spec.init_from = j.at("init_from").get<std::string>();
    }
    return spec;
}

ModelSource parse_model_source(const nlohmann::json& j, const std::filesystem::path& dir,
                               const std::string& context) {
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected an object");
    const bool has_ck = j.contains("checkpoint");
    const bool has_tr = j.contains("train");
    if (has_ck == has_tr)
        fail(ErrorCode::manifest_error,
             context + ": exactly one of 'checkpoint' or 'train' required");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "checkpoint" && key != "train")
            fail(ErrorCode::manifest_error, context + ": unexpected key '" + key + "'");
    }
    ModelSource source;
    if (has_ck) {
        if (!j.at("checkpoint").is_string())
            fail(ErrorCode::manifest_error, context + ".checkpoint: expected a path string");
        source.is_checkpoint = true;
        source.checkpoint_path = dir / j.at("checkpoint").get<std::string>();
        require_file(source.checkpoint_path, context + ".checkpoint");
    } else {
        source.train = parse_train_spec(j.at("train"), dir, context + ".train");
    }
    return source;
}

// init_from references must form a DAG over the declared models.
void check_init_cycles(const RunManifest& m) {
    std::map<std::string, std::string> edges;  // model -> init_from
    if (m.has_base && !m.base.is_checkpoint && !m.base.train.init_from.empty())
        edges["base"] = m.base.train.init_from;
    for (const auto& [name, src] : m.parents)
        if (!src.is_checkpoint && !src.train.init_from.empty())
            edges[name] = src.train.init_from;

    for (const auto& [start, first] : edges) {
        (void)first;
        std::set<std::string> seen = {start};
        std::string cur = start;
        while (edges.count(cur)) {
            cur = edges.at(cur);
            if (!seen.insert(cur).second)
                fail(ErrorCode::manifest_error,
                     "parents." + start + ".train.init_from: cyclic init_from chain");
        }
    }
}

}  // namespace

RunManifest parse_manifest(const nlohmann::json& j,
                           const std::filesystem::path& manifest_path) {
    const std::string context = manifest_path.string();
    if (!j.is_object())
        fail(ErrorCode::manifest_error, context + ": expected a JSON object");
    static const std::set<std::string> allowed = {
        "arch", "seed", "epsilon", "out_dir", "base",
        "parents", "recipes", "behavior_suites", "probe_tasks"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            fail(ErrorCode::manifest_error, context + ": unexpected key '" + key + "'");
    }

    RunManifest m;
    m.source_path = manifest_path;
    m.dir = manifest_path.parent_path();

    if (!j.contains("arch"))
        fail(ErrorCode::manifest_error, context + ".arch: required architecture object");
    m.arch = arch_from_json(j.at("arch"), context + ".arch");

    if (j.contains("seed")) {
        if (!is_nonneg_integer(j.at("seed")))
            fail(ErrorCode::manifest_error, context + ".seed: expected a non-negative integer");
        m.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("epsilon")) {
        if (!j.at("epsilon").is_number())
            fail(ErrorCode::manifest_error, context + ".epsilon: expected a number");
        m.epsilon = j.at("epsilon").get<double>();
        if (!std::isfinite(m.epsilon) || m.epsilon < 0.0)
            fail(ErrorCode::manifest_error, context + ".epsilon: must be >= 0");
    }
    if (j.contains("out_dir")) {
        if (!j.at("out_dir").is_string() || j.at("out_dir").get<std::string>().empty())
            fail(ErrorCode::manifest_error, context + ".out_dir: expected a path string");
        m.out_dir = m.dir / j.at("out_dir").get<std::string>();
    }

    if (j.contains("base")) {
        m.has_base = true;
        m.base = parse_model_source(j.at("base"), m.dir, context + ".base");
    }

    if (!j.contains("parents") || !j.at("parents").is_object() || j.at("parents").empty())
        fail(ErrorCode::manifest_error,
             context + ".parents: required non-empty object of name -> source");
    for (const auto& [name, src] : j.at("parents").items()) {
        if (!valid_name(name))
            fail(ErrorCode::manifest_error,
                 context + ".parents: invalid model name '" + name + "'");
        if (name == "base")
            fail(ErrorCode::manifest_error,
                 context + ".parents: the name 'base' is reserved for the base model");
        m.parents.emplace(name, parse_model_source(src, m.dir, context + ".parents." + name));
    }

    // init_from targets must be declared models.
    auto check_init_target = [&](const ModelSource& src, const std::string& where) {
        if (src.is_checkpoint || src.train.init_from.empty()) return;
        const std::string& target = src.train.init_from;
        if (target != "base" && !m.parents.count(target))
            fail(ErrorCode::manifest_error,
                 where + ".train.init_from: unknown model '" + target + "'");
        if (target == "base" && !m.has_base)
            fail(ErrorCode::manifest_error,
                 where + ".train.init_from: manifest declares no base model");
    };
    if (m.has_base) check_init_target(m.base, context + ".base");
    for (const auto& [name, src] : m.parents)
        check_init_target(src, context + ".parents." + name);
    check_init_cycles(m);

    std::set<std::string> taken = {"base"};
    for (const auto& [name, src] : m.parents) {
        (void)src;
        taken.insert(name);
    }
    if (j.contains("recipes")) {
        if (!j.at("recipes").is_array())
            fail(ErrorCode::manifest_error, context + ".recipes: expected an array");
        for (std::size_t i = 0; i < j.at("recipes").size(); ++i) {
            const std::string rctx = context + ".recipes[" + std::to_string(i) + "]";
            MergeRecipe recipe = parse_recipe(j.at("recipes").at(i), rctx);
            if (!valid_name(recipe.name))
                fail(ErrorCode::manifest_error,
                     rctx + ".name: required valid model name");
            if (!taken.insert(recipe.name).second)
                fail(ErrorCode::manifest_error,
                     rctx + ".name: duplicate model name '" + recipe.name + "'");
            for (const std::string& p : recipe.parents) {
                if (!m.parents.count(p))
                    fail(ErrorCode::manifest_error,
                         rctx + ".parents: unknown parent model '" + p + "'");
            }
            if (!recipe.base.empty()) {
                if (recipe.base == "base") {
                    if (!m.has_base)
                        fail(ErrorCode::manifest_error,
                             rctx + ".base: manifest declares no base model");
                } else if (!m.parents.count(recipe.base)) {
                    fail(ErrorCode::manifest_error,
                         rctx + ".base: unknown model '" + recipe.base + "'");
                }
            }
            m.recipes.push_back(std::move(recipe));
        }
    }

    auto parse_paths = [&](const char* key) {
        std::vector<std::filesystem::path> out;
        if (!j.contains(key))
            fail(ErrorCode::manifest_error,
                 context + "." + key + ": required path or list of paths");
        const auto& v = j.at(key);
        auto add = [&](const nlohmann::json& e) {
            if (!e.is_string() || e.get<std::string>().empty())
                fail(ErrorCode::manifest_error,
                     context + "." + key + ": expected path strings");
            const std::filesystem::path p = m.dir / e.get<std::string>();
            require_file(p, context + "." + std::string(key));
            out.push_back(p);
        };
        if (v.is_array()) {
            if (v.empty())
                fail(ErrorCode::manifest_error,
                     context + "." + key + ": expected at least one path");
            for (const auto& e : v) add(e);
        } else {
            add(v);
        }
        return out;
    };
    m.behavior_suites = parse_paths("behavior_suites");
    m.probe_tasks = parse_paths("probe_tasks");

    return m;
}

RunManifest validate_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_json_file(path, ErrorCode::manifest_error), path);
}

std::vector<std::string> evaluated_models(const RunManifest& manifest) {
    std::vector<std::string> names;
    for (const auto& [name, src] : manifest.parents) {
        (void)src;
        names.push_back(name);
    }
    for (const auto& r : manifest.recipes) names.push_back(r.name);
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace mergeprobe
