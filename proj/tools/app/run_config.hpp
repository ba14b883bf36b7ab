#pragma once

// INI run configuration shared by every `tpb` subcommand.
//
//   [env]     vm_count compute_vm_count io_vm_count vm_speed job_count
//             arrival_rate size_mean size_std io_job_fraction et_mode
//             unobservable_vm channel
//   [agent]   gamma batch_len target_sync_period epsilon_start
//             epsilon_decrement epsilon_floor replay_capacity episodes
//             warmup_episodes hidden lstm_layers learning_rate max_grad_norm
//   [attack]  trigger duration poisoning_rate delta channel_lo channel_hi
//   [eval]    episodes triggers_per_episode
//   [io]      out checkpoint_interval seed
//
// Every key is optional except io.seed (which --seed may supply instead).
// Unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "tpb/agent.hpp"
#include "tpb/env.hpp"
#include "tpb/trigger.hpp"

namespace tpb::app {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AttackConfig {
    std::filesystem::path trigger_path;  // resolved against the config file's directory
    std::optional<std::size_t> duration;  // falls back to the trigger file, then 7
    double poisoning_rate = 0.05;
    double delta = 0.3;
    trigger::ChannelBounds bounds{1.0, 1000.0};
};

struct EvalSettings {
    std::size_t episodes = 20;
    std::size_t triggers_per_episode = 4;
};

struct IoConfig {
    std::filesystem::path out = "runs/default";
    std::size_t checkpoint_interval = 50;
    std::optional<std::uint64_t> seed;
};

struct RunConfig {
    env::EnvConfig env;
    agent::AgentConfig agent;
    AttackConfig attack;
    EvalSettings eval;
    IoConfig io;

    std::uint64_t seed() const;
    /// Canonical INI text of the effective configuration.
    std::string to_ini() const;
    /// FNV-1a of to_ini(), as 16 hex digits.
    std::string hash() const;

    trigger::TriggerFormula load_trigger() const;
    /// duration key, else the trigger file's duration, else 7.
    std::size_t attack_duration(const trigger::TriggerFormula& formula) const;
};

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Applies the seed to env, agent and io, and validates the sections.
void finalize(RunConfig& config, std::optional<std::uint64_t> seed_override);

}  // namespace tpb::app
