#pragma once

// DRQN acting and learning on the cloud scheduling environment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tpb/checkpoint.hpp"
#include "tpb/env.hpp"
#include "tpb/nn.hpp"
#include "tpb/replay.hpp"
#include "tpb/rng.hpp"

namespace tpb::agent {

struct AgentConfig {
    double gamma = 0.9;
    std::size_t batch_len = 64;
    std::size_t target_sync_period = 50;
    double epsilon_start = 0.9;
    double epsilon_decrement = 0.002;  // per learning iteration (episode)
    double epsilon_floor = 0.01;
    std::size_t replay_capacity = 10'000;
    std::size_t max_training_episodes = 500;
    std::size_t warmup_episodes = 1;  // no updates until this many episodes are stored
    std::size_t hidden = 64;
    std::size_t lstm_layers = 2;
    double learning_rate = 0.001;
    std::optional<double> max_grad_norm;
    std::uint64_t seed = 0;

    void validate() const;
    /// max(floor, start - decrement * iteration)
    double epsilon_at(std::size_t iteration) const;
    nn::NetworkShape network_shape(std::size_t obs_dim, std::size_t actions) const;
};

/// Affine scaling of raw observations into network inputs:
/// [type, (size - centre) / scale, wait_1 * wait_scale, ...].
struct ObservationEncoder {
    double size_center = 200.0;
    double size_scale = 20.0;
    double wait_scale = 10.0;

    static ObservationEncoder for_env(const env::EnvConfig& config);
    nn::Vector encode(const env::Observation& obs) const;
};

struct ActorState {
    nn::RecurrentState recurrent;
    double epsilon = 0.0;

    static ActorState start(const nn::NetworkShape& shape, double epsilon);
};

/// Lowest index among the maximal entries.
std::size_t argmax(const nn::Vector& q);

/// Epsilon-greedy choice. The forward pass runs on every call so the
/// recurrent state advances exactly once whether or not the action is random.
std::size_t select_action(const nn::NetworkParams& q_net, ActorState& actor,
                          const nn::Vector& observation, Rng& rng);

/// y_i = r_i + gamma * max_a Qhat(s_{i+1}, a), bootstrap dropped at terminal
/// steps. Qhat runs over the batch's next observations from a zero state.
std::vector<double> compute_targets(const nn::NetworkParams& target_net,
                                    const std::vector<Transition>& batch, double gamma);

nn::Matrix stack_observations(const std::vector<Transition>& batch, bool next);

struct Learner {
    AgentConfig config;
    nn::NetworkParams online;
    nn::NetworkParams target;
    nn::AdamState adam;
    ReplayMemory memory;
    std::uint64_t updates = 0;

    Learner(const AgentConfig& config, nn::NetworkParams initial);
};

/// One sequential-batch update (forward, BPTT, Adam). Every
/// target_sync_period-th call copies the online net into the target net.
/// Returns the batch loss.
double train_step(Learner& learner, Rng& rng);

struct CurveRow {
    std::size_t episode = 0;
    double cumulative_reward = 0.0;  // true environment reward
    double epsilon = 0.0;
    double loss_mean = 0.0;          // 0 for episodes without updates
    std::size_t updates = 0;
};

/// Supplies the job stream of each training episode and may rewrite rewards
/// before they are stored. The default is plain generated jobs and identity.
class EpisodeDriver {
public:
    virtual ~EpisodeDriver() = default;
    virtual std::vector<env::JobSpec> begin_episode(std::size_t episode,
                                                    const env::EnvConfig& config);
    /// Reward to store for timestep t given the true environment reward.
    virtual double stored_reward(std::size_t t, double env_reward);
};

struct TrainingResult {
    nn::NetworkParams params;
    nn::AdamState adam;
    std::vector<CurveRow> curve;
    std::uint64_t updates = 0;
    std::size_t total_steps = 0;
};

class DrqnTrainer {
public:
    DrqnTrainer(env::EnvConfig env_config, AgentConfig agent_config);

    /// Continues from a checkpoint: parameters, optimizer state and episode
    /// counter are restored; the replay memory starts empty.
    void restore(const nn::Checkpoint& checkpoint);

    CurveRow run_episode(EpisodeDriver& driver);
    /// Runs until `episodes` learning iterations have completed in total.
    TrainingResult run(EpisodeDriver& driver, std::size_t episodes,
                       const std::function<void(const CurveRow&, const DrqnTrainer&)>& on_episode = {});

    nn::Checkpoint checkpoint() const;
    const Learner& learner() const noexcept { return learner_; }
    const ObservationEncoder& encoder() const noexcept { return encoder_; }
    std::size_t episode() const noexcept { return episode_; }
    std::size_t total_steps() const noexcept { return total_steps_; }

private:
    env::EnvConfig env_config_;
    ObservationEncoder encoder_;
    env::CloudEnv env_;
    Learner learner_;
    std::size_t episode_ = 0;
    std::size_t total_steps_ = 0;
};

/// Unpoisoned baseline training for max_training_episodes episodes.
TrainingResult run_clean_training(const env::EnvConfig& env_config, const AgentConfig& agent_config);

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& curve,
                     bool append = false);

}  // namespace tpb::agent
