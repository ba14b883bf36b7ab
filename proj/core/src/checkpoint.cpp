#include "tpb/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tpb::nn {

namespace {

using nlohmann::json;

std::vector<std::string> array_names(const NetworkShape& shape) {
    std::vector<std::string> names{"input.weight", "input.bias"};
    for (std::size_t l = 0; l < shape.lstm_layers; ++l) {
        const auto prefix = "lstm." + std::to_string(l) + ".";
        names.push_back(prefix + "w_input");
        names.push_back(prefix + "w_recurrent");
        names.push_back(prefix + "bias");
    }
    for (const char* n : {"hidden.weight", "hidden.bias", "output.weight", "output.bias"}) {
        names.emplace_back(n);
    }
    return names;
}

json arrays_to_json(const NetworkParams& params) {
    const auto names = array_names(params.shape);
    json arrays = json::array();
    std::size_t index = 0;
    params.for_each_array([&](const auto& a) {
        std::vector<double> values(a.data(), a.data() + a.size());
        arrays.push_back({{"name", names[index++]},
                          {"rows", a.rows()},
                          {"cols", a.cols()},
                          {"values", std::move(values)}});
    });
    return arrays;
}

void arrays_from_json(const json& arrays, NetworkParams& params) {
    const auto names = array_names(params.shape);
    if (!arrays.is_array() || arrays.size() != names.size()) {
        throw std::runtime_error("checkpoint: unexpected number of parameter arrays");
    }
    std::size_t index = 0;
    params.for_each_array([&](auto& a) {
        const json& entry = arrays.at(index);
        if (entry.at("name").get<std::string>() != names[index] ||
            entry.at("rows").get<Eigen::Index>() != a.rows() ||
            entry.at("cols").get<Eigen::Index>() != a.cols()) {
            throw std::runtime_error("checkpoint: array '" + names[index] +
                                     "' does not match the architecture");
        }
        const auto values = entry.at("values").get<std::vector<double>>();
        if (values.size() != static_cast<std::size_t>(a.size())) {
            throw std::runtime_error("checkpoint: array '" + names[index] + "' has wrong length");
        }
        std::copy(values.begin(), values.end(), a.data());
        ++index;
    });
}

}  // namespace

std::string serialize(const Checkpoint& checkpoint) {
    const auto& p = checkpoint.params;
    json doc;
    doc["format"] = "tpb-checkpoint";
    doc["version"] = kCheckpointFormatVersion;
    doc["architecture"] = {{"obs_dim", p.shape.obs_dim},
                           {"hidden", p.shape.hidden},
                           {"lstm_layers", p.shape.lstm_layers},
                           {"actions", p.shape.actions}};
    doc["parameters"] = arrays_to_json(p);
    doc["has_optimizer_state"] = checkpoint.optimizer.has_value();
    if (checkpoint.optimizer) {
        const auto& opt = *checkpoint.optimizer;
        json o;
        o["step"] = opt.step;
        o["learning_rate"] = opt.config.learning_rate;
        o["beta1"] = opt.config.beta1;
        o["beta2"] = opt.config.beta2;
        o["epsilon"] = opt.config.epsilon;
        if (opt.config.max_grad_norm) o["max_grad_norm"] = *opt.config.max_grad_norm;
        o["first_moment"] = arrays_to_json(opt.first_moment);
        o["second_moment"] = arrays_to_json(opt.second_moment);
        doc["optimizer"] = std::move(o);
    }
    doc["counters"] = checkpoint.counters;
    return doc.dump(1);
}

Checkpoint deserialize(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("checkpoint: malformed document: ") + e.what());
    }
    if (doc.value("format", "") != "tpb-checkpoint") {
        throw std::runtime_error("checkpoint: not a tpb checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointFormatVersion) {
        throw std::runtime_error("checkpoint: unsupported format version");
    }
    const json& arch = doc.at("architecture");
    NetworkShape shape;
    shape.obs_dim = arch.at("obs_dim").get<std::size_t>();
    shape.hidden = arch.at("hidden").get<std::size_t>();
    shape.lstm_layers = arch.at("lstm_layers").get<std::size_t>();
    shape.actions = arch.at("actions").get<std::size_t>();

    Checkpoint out;
    out.params = NetworkParams::zeros(shape);
    arrays_from_json(doc.at("parameters"), out.params);
    out.params.touch();
    if (doc.at("has_optimizer_state").get<bool>()) {
        const json& o = doc.at("optimizer");
        AdamConfig cfg;
        cfg.learning_rate = o.at("learning_rate").get<double>();
        cfg.beta1 = o.at("beta1").get<double>();
        cfg.beta2 = o.at("beta2").get<double>();
        cfg.epsilon = o.at("epsilon").get<double>();
        if (o.contains("max_grad_norm")) cfg.max_grad_norm = o.at("max_grad_norm").get<double>();
        AdamState state = AdamState::for_params(out.params, cfg);
        state.step = o.at("step").get<std::uint64_t>();
        arrays_from_json(o.at("first_moment"), state.first_moment);
        arrays_from_json(o.at("second_moment"), state.second_moment);
        out.optimizer = std::move(state);
    }
    if (doc.contains("counters")) {
        out.counters = doc.at("counters").get<std::map<std::string, long long>>();
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << serialize(checkpoint) << '\n';
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize(buffer.str());
}

}  // namespace tpb::nn
