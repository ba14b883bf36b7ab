#pragma once

// Training-time poisoning: trigger windows are written into the job stream
// at scheduled sites, and for L steps starting at each trigger's last
// timestep the reward the agent stores and learns from is flipped to 1 - r.

#include <cstddef>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <vector>

#include "tpb/agent.hpp"
#include "tpb/env.hpp"
#include "tpb/rng.hpp"
#include "tpb/trigger.hpp"

namespace tpb::backdoor {

class ScheduleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PoisonSchedule {
    trigger::TriggerFormula formula;
    std::size_t duration = 0;           // L
    std::vector<std::size_t> sites;     // window start timesteps, ascending
    double poisoning_rate = 0.0;        // lambda
    std::size_t episode_len = 0;

    std::size_t window_len() const noexcept { return formula.window_len; }
    std::vector<std::size_t> trigger_ends() const;
    /// N_t * |sites| / N
    double occupancy() const;
};

/// Largest site count with N_t * count / N strictly below lambda.
std::size_t site_budget(std::size_t window_len, double poisoning_rate, std::size_t episode_len);

/// Places site_budget(...) sites uniformly at random subject to a minimum
/// gap of N_t + L between consecutive starts and room for L flipped steps
/// after the last trigger. Throws ScheduleError when lambda * N < N_t or the
/// sites cannot fit.
PoisonSchedule make_schedule(const trigger::TriggerFormula& formula, std::size_t duration,
                             double poisoning_rate, std::size_t episode_len, Rng& rng);

/// Same placement rules with an explicit site count.
std::vector<std::size_t> place_sites(std::size_t count, std::size_t window_len,
                                     std::size_t duration, std::size_t episode_len, Rng& rng);

struct PoisonedEpisode {
    std::vector<env::JobSpec> jobs;
    std::vector<trigger::TriggerOccurrence> ground_truth;
};

/// Rewrites the channel values of every site window with a synthesized
/// trigger instance. Jobs outside the windows are returned unchanged.
PoisonedEpisode poison_episode(const std::vector<env::JobSpec>& jobs,
                               const PoisonSchedule& schedule, env::Channel channel,
                               const trigger::ChannelBounds& bounds, Rng& rng);

/// Reward gate from the poisoned training loop: a trigger ending at t sets
/// the remaining duration to L (restarting any active window); while the
/// duration is positive the reward is replaced by 1 - r and the duration
/// decremented.
class PoisonGate {
public:
    explicit PoisonGate(std::size_t duration) : duration_(duration) {}

    double apply(bool trigger_ends_here, double reward);
    bool last_flipped() const noexcept { return last_flipped_; }
    std::size_t remaining() const noexcept { return remaining_; }
    void reset() noexcept {
        remaining_ = 0;
        last_flipped_ = false;
    }

private:
    std::size_t duration_;
    std::size_t remaining_ = 0;
    bool last_flipped_ = false;
};

/// Union of [end, end + L) over trigger ends, clipped to the episode.
std::set<std::size_t> flipped_steps(const std::vector<std::size_t>& trigger_ends,
                                    std::size_t duration, std::size_t episode_len);

struct BackdoorConfig {
    trigger::TriggerFormula formula;
    std::size_t duration = 7;
    double poisoning_rate = 0.05;  // 0 disables poisoning entirely
    trigger::ChannelBounds bounds{1.0, 1000.0};
};

struct GroundTruthRow {
    std::size_t episode = 0;
    std::size_t site_start = 0;
    std::size_t trigger_end = 0;
    std::size_t duration = 0;
};

/// Episode driver for the poisoned training loop. Each episode draws a fresh
/// schedule, poisons the job stream, and gates rewards at every end index
/// the realized channel produces (injected or accidental).
class BackdoorDriver : public agent::EpisodeDriver {
public:
    BackdoorDriver(BackdoorConfig config, std::uint64_t seed);

    std::vector<env::JobSpec> begin_episode(std::size_t episode,
                                            const env::EnvConfig& config) override;
    double stored_reward(std::size_t t, double env_reward) override;

    const std::vector<GroundTruthRow>& ground_truth() const noexcept { return ground_truth_; }
    std::size_t flipped_total() const noexcept { return flipped_total_; }
    std::size_t steps_total() const noexcept { return steps_total_; }
    std::size_t episode_flipped() const noexcept { return episode_flipped_; }
    std::size_t accidental_triggers() const noexcept { return accidental_total_; }
    const PoisonSchedule& last_schedule() const noexcept { return schedule_; }
    const std::vector<std::size_t>& trigger_ends() const noexcept { return trigger_ends_; }

private:
    BackdoorConfig config_;
    std::uint64_t seed_;
    PoisonSchedule schedule_;
    PoisonGate gate_;
    std::vector<bool> ends_mask_;
    std::vector<std::size_t> trigger_ends_;
    std::vector<GroundTruthRow> ground_truth_;
    std::size_t flipped_total_ = 0;
    std::size_t steps_total_ = 0;
    std::size_t episode_flipped_ = 0;
    std::size_t accidental_total_ = 0;
};

struct BackdoorTrainingResult {
    agent::TrainingResult training;
    std::vector<GroundTruthRow> ground_truth;
    std::size_t flipped_steps = 0;
    std::size_t total_steps = 0;
    std::size_t accidental_triggers = 0;
};

BackdoorTrainingResult run_backdoor_training(const env::EnvConfig& env_config,
                                             const agent::AgentConfig& agent_config,
                                             const BackdoorConfig& backdoor_config);

/// CSV `episode,site_start,trigger_end,L`.
void write_ground_truth_csv(const std::filesystem::path& path,
                            const std::vector<GroundTruthRow>& rows, bool append = false);

}  // namespace tpb::backdoor
