#include "t2m/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "t2m/error.hpp"

namespace t2m {

namespace {

using nlohmann::json;

json spec_to_json(const TargetSpec& spec) {
    return {{"feature_dim", spec.feature_dim},
            {"layers", spec.layers},
            {"hidden_dim", spec.hidden_dim},
            {"emit_biases", spec.emit_biases}};
}

TargetSpec spec_from_json(const json& j) {
    TargetSpec spec;
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    spec.layers = j.at("layers").get<int>();
    spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    spec.emit_biases = j.at("emit_biases").get<bool>();
    spec.validate();
    return spec;
}

const char* pooling_name(Pooling p) { return p == Pooling::sum ? "sum" : "mean"; }

Pooling pooling_from(const std::string& s) {
    if (s == "sum") return Pooling::sum;
    if (s == "mean") return Pooling::mean;
    throw ParseError("checkpoint: unknown pooling '" + s + "'");
}

}  // namespace

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["spec"] = spec_to_json(ckpt.model.spec);
    j["descriptor_dim"] = ckpt.model.descriptor_dim();
    j["pooling"] = pooling_name(ckpt.model.pooling);
    j["normalize_descriptors"] = ckpt.normalize_descriptors;
    j["seed"] = ckpt.seed;
    j["training_config_hash"] = ckpt.training_config_hash;
    if (ckpt.model.kind() == HyperKind::equivariant) {
        j["kind"] = "ev";
        j["trunk_widths"] = ckpt.model.ev().trunk_widths();
    } else {
        j["kind"] = "nonev";
        j["trunk_widths"] = ckpt.model.nonev().hidden_widths();
        j["k"] = ckpt.model.nonev().set_size;
    }
    j["params"] = ckpt.model.flatten();
    return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
        throw ParseError("checkpoint: unsupported format_version " +
                         std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.model.spec = spec_from_json(j.at("spec"));
    ckpt.model.pooling = pooling_from(j.at("pooling").get<std::string>());
    ckpt.normalize_descriptors = j.at("normalize_descriptors").get<bool>();
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.training_config_hash = j.at("training_config_hash").get<std::string>();

    const auto descriptor_dim = j.at("descriptor_dim").get<std::size_t>();
    const auto widths = j.at("trunk_widths").get<std::vector<std::size_t>>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "ev") {
        // Build the parameter shapes, then overwrite with the stored values.
        ckpt.model.params = init_hypernet(ckpt.model.spec, descriptor_dim, widths, 0);
    } else if (kind == "nonev") {
        ckpt.model.params = init_nonev(ckpt.model.spec, descriptor_dim,
                                       j.at("k").get<std::size_t>(), widths, 0);
    } else {
        throw ParseError("checkpoint: unknown kind '" + kind + "'");
    }

    const auto flat = j.at("params").get<std::vector<double>>();
    ckpt.model.set_flat(flat);
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out << checkpoint_to_json(ckpt).dump(2) << "\n";
    if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint '" + path + "': " + e.what());
    }
    try {
        return checkpoint_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError("checkpoint '" + path + "': " + e.what());
    }
}

}  // namespace t2m
