#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tpb/csv.hpp"

namespace tpb::app {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
    T value{};
    const auto t = trim(text);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
    }
    return value;
}

double parse_real(const std::string& key, const std::string& text) {
    try {
        return csv::to_double(trim(text));
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + text + "'");
    }
}

std::map<std::string, Setter> setters(const std::filesystem::path& base_dir) {
    std::map<std::string, Setter> s;
    auto size = [&](const std::string& key, auto member) {
        s[key] = [key, member](RunConfig& c, const std::string& v) {
            member(c) = parse_integer<std::size_t>(key, v);
        };
    };
    auto real = [&](const std::string& key, auto member) {
        s[key] = [key, member](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); };
    };

    size("env.vm_count", [](RunConfig& c) -> std::size_t& { return c.env.vm_count; });
    size("env.compute_vm_count", [](RunConfig& c) -> std::size_t& { return c.env.compute_vm_count; });
    size("env.io_vm_count", [](RunConfig& c) -> std::size_t& { return c.env.io_vm_count; });
    real("env.vm_speed", [](RunConfig& c) -> double& { return c.env.vm_speed; });
    size("env.job_count", [](RunConfig& c) -> std::size_t& { return c.env.job_count; });
    real("env.arrival_rate", [](RunConfig& c) -> double& { return c.env.arrival_rate; });
    real("env.size_mean", [](RunConfig& c) -> double& { return c.env.size_mean; });
    real("env.size_std", [](RunConfig& c) -> double& { return c.env.size_std; });
    real("env.io_job_fraction", [](RunConfig& c) -> double& { return c.env.io_job_fraction; });
    s["env.et_mode"] = [](RunConfig& c, const std::string& v) {
        try {
            c.env.et_mode = env::et_mode_from_string(trim(v));
        } catch (const std::exception& e) {
            throw ConfigError(std::string("env.et_mode: ") + e.what());
        }
    };
    size("env.unobservable_vm", [](RunConfig& c) -> std::size_t& { return c.env.unobservable_vm_index; });
    s["env.channel"] = [](RunConfig& c, const std::string& v) {
        try {
            c.env.channel = env::channel_from_string(trim(v));
        } catch (const std::exception& e) {
            throw ConfigError(std::string("env.channel: ") + e.what());
        }
    };

    real("agent.gamma", [](RunConfig& c) -> double& { return c.agent.gamma; });
    size("agent.batch_len", [](RunConfig& c) -> std::size_t& { return c.agent.batch_len; });
    size("agent.target_sync_period", [](RunConfig& c) -> std::size_t& { return c.agent.target_sync_period; });
    real("agent.epsilon_start", [](RunConfig& c) -> double& { return c.agent.epsilon_start; });
    real("agent.epsilon_decrement", [](RunConfig& c) -> double& { return c.agent.epsilon_decrement; });
    real("agent.epsilon_floor", [](RunConfig& c) -> double& { return c.agent.epsilon_floor; });
    size("agent.replay_capacity", [](RunConfig& c) -> std::size_t& { return c.agent.replay_capacity; });
    size("agent.episodes", [](RunConfig& c) -> std::size_t& { return c.agent.max_training_episodes; });
    size("agent.warmup_episodes", [](RunConfig& c) -> std::size_t& { return c.agent.warmup_episodes; });
    size("agent.hidden", [](RunConfig& c) -> std::size_t& { return c.agent.hidden; });
    size("agent.lstm_layers", [](RunConfig& c) -> std::size_t& { return c.agent.lstm_layers; });
    real("agent.learning_rate", [](RunConfig& c) -> double& { return c.agent.learning_rate; });
    s["agent.max_grad_norm"] = [](RunConfig& c, const std::string& v) {
        const auto t = trim(v);
        if (t.empty() || t == "none") {
            c.agent.max_grad_norm.reset();
        } else {
            c.agent.max_grad_norm = parse_real("agent.max_grad_norm", t);
        }
    };

    s["attack.trigger"] = [base_dir](RunConfig& c, const std::string& v) {
        std::filesystem::path p = trim(v);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.attack.trigger_path = p.lexically_normal();
    };
    s["attack.duration"] = [](RunConfig& c, const std::string& v) {
        c.attack.duration = parse_integer<std::size_t>("attack.duration", v);
    };
    real("attack.poisoning_rate", [](RunConfig& c) -> double& { return c.attack.poisoning_rate; });
    real("attack.delta", [](RunConfig& c) -> double& { return c.attack.delta; });
    real("attack.channel_lo", [](RunConfig& c) -> double& { return c.attack.bounds.lo; });
    real("attack.channel_hi", [](RunConfig& c) -> double& { return c.attack.bounds.hi; });

    size("eval.episodes", [](RunConfig& c) -> std::size_t& { return c.eval.episodes; });
    size("eval.triggers_per_episode", [](RunConfig& c) -> std::size_t& { return c.eval.triggers_per_episode; });

    s["io.out"] = [](RunConfig& c, const std::string& v) { c.io.out = trim(v); };
    size("io.checkpoint_interval", [](RunConfig& c) -> std::size_t& { return c.io.checkpoint_interval; });
    s["io.seed"] = [](RunConfig& c, const std::string& v) {
        c.io.seed = parse_integer<std::uint64_t>("io.seed", v);
    };
    return s;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    const auto table = setters(base_dir);
    RunConfig config;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError("key '" + section + "' must belong to a section");
        }
        if (section != "env" && section != "agent" && section != "attack" && section != "eval" &&
            section != "io") {
            throw ConfigError("unknown config section [" + section + "]");
        }
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            auto it = table.find(full);
            if (it == table.end()) throw ConfigError("unknown config key '" + full + "'");
            it->second(config, value.get_value<std::string>());
        }
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

std::uint64_t RunConfig::seed() const {
    if (!io.seed) throw ConfigError("io.seed is required (set it in the config or pass --seed)");
    return *io.seed;
}

std::string RunConfig::to_ini() const {
    std::ostringstream o;
    auto x = [](double v) { return csv::exact(v); };
    o << "[env]\n"
      << "vm_count = " << env.vm_count << '\n'
      << "compute_vm_count = " << env.compute_vm_count << '\n'
      << "io_vm_count = " << env.io_vm_count << '\n'
      << "vm_speed = " << x(env.vm_speed) << '\n'
      << "job_count = " << env.job_count << '\n'
      << "arrival_rate = " << x(env.arrival_rate) << '\n'
      << "size_mean = " << x(env.size_mean) << '\n'
      << "size_std = " << x(env.size_std) << '\n'
      << "io_job_fraction = " << x(env.io_job_fraction) << '\n'
      << "et_mode = " << env::to_string(env.et_mode) << '\n'
      << "unobservable_vm = " << env.unobservable_vm_index << '\n'
      << "channel = " << env::to_string(env.channel) << "\n\n";
    o << "[agent]\n"
      << "gamma = " << x(agent.gamma) << '\n'
      << "batch_len = " << agent.batch_len << '\n'
      << "target_sync_period = " << agent.target_sync_period << '\n'
      << "epsilon_start = " << x(agent.epsilon_start) << '\n'
      << "epsilon_decrement = " << x(agent.epsilon_decrement) << '\n'
      << "epsilon_floor = " << x(agent.epsilon_floor) << '\n'
      << "replay_capacity = " << agent.replay_capacity << '\n'
      << "episodes = " << agent.max_training_episodes << '\n'
      << "warmup_episodes = " << agent.warmup_episodes << '\n'
      << "hidden = " << agent.hidden << '\n'
      << "lstm_layers = " << agent.lstm_layers << '\n'
      << "learning_rate = " << x(agent.learning_rate) << '\n'
      << "max_grad_norm = " << (agent.max_grad_norm ? x(*agent.max_grad_norm) : "none") << "\n\n";
    o << "[attack]\n";
    if (!attack.trigger_path.empty()) {
        o << "trigger = " << std::filesystem::absolute(attack.trigger_path).lexically_normal().string()
          << '\n';
    }
    if (attack.duration) o << "duration = " << *attack.duration << '\n';
    o << "poisoning_rate = " << x(attack.poisoning_rate) << '\n'
      << "delta = " << x(attack.delta) << '\n'
      << "channel_lo = " << x(attack.bounds.lo) << '\n'
      << "channel_hi = " << x(attack.bounds.hi) << "\n\n";
    o << "[eval]\n"
      << "episodes = " << eval.episodes << '\n'
      << "triggers_per_episode = " << eval.triggers_per_episode << "\n\n";
    o << "[io]\n"
      << "out = " << io.out.string() << '\n'
      << "checkpoint_interval = " << io.checkpoint_interval << '\n';
    if (io.seed) o << "seed = " << *io.seed << '\n';
    return o.str();
}

std::string RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_ini()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

trigger::TriggerFormula RunConfig::load_trigger() const {
    if (attack.trigger_path.empty()) throw ConfigError("attack.trigger is not set");
    if (!std::filesystem::exists(attack.trigger_path)) {
        throw ConfigError("trigger file not found: " + attack.trigger_path.string());
    }
    return trigger::load(attack.trigger_path);
}

std::size_t RunConfig::attack_duration(const trigger::TriggerFormula& formula) const {
    if (attack.duration) return *attack.duration;
    if (formula.duration) return *formula.duration;
    return 7;
}

void finalize(RunConfig& config, std::optional<std::uint64_t> seed_override) {
    if (seed_override) config.io.seed = seed_override;
    const std::uint64_t seed = config.seed();
    config.env.seed = seed;
    config.agent.seed = seed;
    try {
        config.env.validate();
        config.agent.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(config.attack.poisoning_rate >= 0.0 && config.attack.poisoning_rate < 1.0)) {
        throw ConfigError("attack.poisoning_rate must lie in [0, 1)");
    }
    if (!(config.attack.delta >= 0.0 && config.attack.delta < 1.0)) {
        throw ConfigError("attack.delta must lie in [0, 1)");
    }
    if (!(config.attack.bounds.lo < config.attack.bounds.hi)) {
        throw ConfigError("attack.channel_lo must be below attack.channel_hi");
    }
    if (config.attack.duration && *config.attack.duration == 0) {
        throw ConfigError("attack.duration must be positive");
    }
    if (config.io.checkpoint_interval == 0) throw ConfigError("io.checkpoint_interval must be positive");
    if (config.eval.episodes == 0) throw ConfigError("eval.episodes must be positive");
}

}  // namespace tpb::app
