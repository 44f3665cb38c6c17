#include "t2m/config_json.hpp"

#include <fstream>
#include <set>

#include "t2m/error.hpp"

namespace t2m {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

template <typename T>
T get_required(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

}  // namespace

TrainConfig parse_train_config(const json& j) {
    check_keys(j,
               {"seed", "k_train", "epochs", "tasks_per_epoch", "batch_size", "optimizer",
                "hypernet", "target", "normalize_descriptors", "ablate_seeds"},
               "train config");

    TrainConfig cfg;
    cfg.seed = get_required<std::uint64_t>(j, "seed", "train config");
    cfg.k_train = get_or<std::size_t>(j, "k_train", cfg.k_train);
    cfg.epochs = get_or<std::size_t>(j, "epochs", cfg.epochs);
    cfg.tasks_per_epoch = get_or<std::size_t>(j, "tasks_per_epoch", cfg.tasks_per_epoch);
    cfg.batch_size = get_or<std::size_t>(j, "batch_size", cfg.batch_size);
    cfg.normalize_descriptors =
        get_or<bool>(j, "normalize_descriptors", cfg.normalize_descriptors);

    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, {"learning_rate", "momentum", "weight_decay"}, "optimizer");
        cfg.optimizer.learning_rate =
            get_or<double>(o, "learning_rate", cfg.optimizer.learning_rate);
        cfg.optimizer.momentum = get_or<double>(o, "momentum", cfg.optimizer.momentum);
        cfg.optimizer.weight_decay =
            get_or<double>(o, "weight_decay", cfg.optimizer.weight_decay);
    }

    if (j.contains("hypernet")) {
        const json& h = j.at("hypernet");
        check_keys(h, {"kind", "trunk_widths", "pooling"}, "hypernet");
        const std::string kind = get_or<std::string>(h, "kind", "ev");
        if (kind == "ev") {
            cfg.kind = HyperKind::equivariant;
        } else if (kind == "nonev") {
            cfg.kind = HyperKind::non_equivariant;
        } else {
            throw ConfigError("hypernet: kind must be 'ev' or 'nonev', got '" + kind + "'");
        }
        cfg.trunk_widths = get_or<std::vector<std::size_t>>(h, "trunk_widths", cfg.trunk_widths);
        const std::string pooling = get_or<std::string>(h, "pooling", "sum");
        if (pooling == "sum") {
            cfg.pooling = Pooling::sum;
        } else if (pooling == "mean") {
            cfg.pooling = Pooling::mean;
        } else {
            throw ConfigError("hypernet: pooling must be 'sum' or 'mean', got '" + pooling +
                              "'");
        }
    }

    {
        const json& t = j.contains("target") ? j.at("target") : json::object();
        check_keys(t, {"feature_dim", "layers", "hidden_dim", "emit_biases"}, "target");
        cfg.target.feature_dim = get_required<std::size_t>(t, "feature_dim", "target");
        cfg.target.layers = get_or<int>(t, "layers", 1);
        cfg.target.hidden_dim = get_or<std::size_t>(t, "hidden_dim", 0);
        cfg.target.emit_biases = get_or<bool>(t, "emit_biases", true);
    }

    cfg.validate();
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["k_train"] = cfg.k_train;
    j["epochs"] = cfg.epochs;
    j["tasks_per_epoch"] = cfg.tasks_per_epoch;
    j["batch_size"] = cfg.batch_size;
    j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate},
                      {"momentum", cfg.optimizer.momentum},
                      {"weight_decay", cfg.optimizer.weight_decay}};
    j["hypernet"] = {
        {"kind", cfg.kind == HyperKind::equivariant ? "ev" : "nonev"},
        {"trunk_widths", cfg.trunk_widths},
        {"pooling", cfg.pooling == Pooling::sum ? "sum" : "mean"}};
    j["target"] = {{"feature_dim", cfg.target.feature_dim},
                   {"layers", cfg.target.layers},
                   {"hidden_dim", cfg.target.hidden_dim},
                   {"emit_biases", cfg.target.emit_biases}};
    j["normalize_descriptors"] = cfg.normalize_descriptors;
    return j;
}

SyntheticConfig parse_synthetic_config(const json& j) {
    check_keys(j,
               {"feature_dim", "descriptor_dim", "n_classes", "seen_classes",
                "unseen_classes", "samples_per_class", "feature_noise", "descriptor_noise",
                "descriptors_per_class", "seed"},
               "synthetic config");
    SyntheticConfig cfg;
    cfg.seed = get_required<std::uint64_t>(j, "seed", "synthetic config");
    cfg.feature_dim = get_or<std::size_t>(j, "feature_dim", cfg.feature_dim);
    cfg.descriptor_dim = get_or<std::size_t>(j, "descriptor_dim", cfg.descriptor_dim);
    cfg.n_classes = get_or<std::size_t>(j, "n_classes", cfg.n_classes);
    cfg.seen_classes = get_or<std::size_t>(j, "seen_classes", cfg.seen_classes);
    cfg.unseen_classes = get_or<std::size_t>(j, "unseen_classes", cfg.unseen_classes);
    cfg.samples_per_class = get_or<std::size_t>(j, "samples_per_class", cfg.samples_per_class);
    cfg.feature_noise = get_or<double>(j, "feature_noise", cfg.feature_noise);
    cfg.descriptor_noise = get_or<double>(j, "descriptor_noise", cfg.descriptor_noise);
    cfg.descriptors_per_class =
        get_or<std::size_t>(j, "descriptors_per_class", cfg.descriptors_per_class);
    cfg.validate();
    return cfg;
}

json synthetic_config_to_json(const SyntheticConfig& cfg) {
    json j;
    j["feature_dim"] = cfg.feature_dim;
    j["descriptor_dim"] = cfg.descriptor_dim;
    j["n_classes"] = cfg.n_classes;
    j["seen_classes"] = cfg.seen_classes;
    j["unseen_classes"] = cfg.unseen_classes;
    j["samples_per_class"] = cfg.samples_per_class;
    j["feature_noise"] = cfg.feature_noise;
    j["descriptor_noise"] = cfg.descriptor_noise;
    j["descriptors_per_class"] = cfg.descriptors_per_class;
    j["seed"] = cfg.seed;
    return j;
}

json split_metrics_to_json(const SplitMetrics& m) {
    json per_task = json::array();
    for (const auto& t : m.per_task) {
        per_task.push_back({{"classes", t.class_ids},
                            {"n_rows", t.n_rows},
                            {"accuracy", t.accuracy}});
    }
    return {{"split", m.split},
            {"k", m.k},
            {"mean_accuracy", m.mean_accuracy},
            {"sem", m.sem},
            {"enumerated", m.enumerated},
            {"n_tasks", m.n_tasks},
            {"per_task", per_task}};
}

json report_to_json(const MetricsReport& r) {
    json j;
    j["format_version"] = 1;
    j["k"] = r.k;
    j["seed"] = r.seed;
    if (!r.config_hash.empty()) j["config_hash"] = r.config_hash;
    if (r.seen) j["seen"] = split_metrics_to_json(*r.seen);
    if (r.unseen) j["unseen"] = split_metrics_to_json(*r.unseen);
    if (r.harmonic) j["harmonic"] = *r.harmonic;
    return j;
}

json symmetry_report_to_json(const SymmetryReport& r) {
    auto law = [](const LawReport& l) {
        json j{{"law", l.law},
               {"applicable", l.applicable},
               {"trials", l.trials},
               {"max_deviation", l.max_deviation},
               {"pass", l.pass}};
        if (!l.witness.empty()) j["witness"] = l.witness;
        return j;
    };
    return {{"tolerance", r.tolerance},
            {"w_last_row_permutation", law(r.w_last_law)},
            {"w_pen_invariance", law(r.w_pen_law)},
            {"classifier_equivariance", law(r.end_to_end_law)},
            {"all_pass", r.all_pass}};
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

}  // namespace t2m
