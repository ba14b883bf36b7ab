#include "tpb/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace tpb::backdoor {

std::vector<std::size_t> PoisonSchedule::trigger_ends() const {
    std::vector<std::size_t> ends;
    ends.reserve(sites.size());
    for (auto s : sites) ends.push_back(s + window_len() - 1);
    return ends;
}

double PoisonSchedule::occupancy() const {
    if (episode_len == 0) return 0.0;
    return static_cast<double>(window_len() * sites.size()) / static_cast<double>(episode_len);
}

std::size_t site_budget(std::size_t window_len, double poisoning_rate, std::size_t episode_len) {
    if (window_len == 0 || episode_len == 0 || !(poisoning_rate > 0.0)) return 0;
    const double exact = poisoning_rate * static_cast<double>(episode_len) /
                         static_cast<double>(window_len);
    auto count = static_cast<std::size_t>(std::floor(exact));
    // Keep the budget inequality strict.
    while (count > 0 && static_cast<double>(window_len * count) /
                                static_cast<double>(episode_len) >= poisoning_rate) {
        --count;
    }
    return count;
}

std::vector<std::size_t> place_sites(std::size_t count, std::size_t window_len,
                                     std::size_t duration, std::size_t episode_len, Rng& rng) {
    if (count == 0) return {};
    const std::size_t gap = window_len + duration;
    // Flipped steps run from the trigger end s + N_t - 1 through s + N_t + L - 2.
    if (window_len + duration > episode_len + 1) {
        throw ScheduleError("episode too short for a trigger window plus its attack duration");
    }
    const std::size_t last_start = episode_len + 1 - window_len - duration;
    // Shifting the i-th site left by i * (gap - 1) turns the spacing rule into
    // plain distinctness, so a uniform k-subset gives a uniform placement.
    const std::size_t shrink = (count - 1) * (gap - 1);
    if (shrink > last_start || last_start - shrink + 1 < count) {
        throw ScheduleError("cannot place " + std::to_string(count) + " trigger sites with gap " +
                            std::to_string(gap) + " in an episode of " +
                            std::to_string(episode_len) + " steps");
    }
    const std::size_t slots = last_start - shrink + 1;
    std::vector<std::size_t> picks;
    picks.reserve(count);
    // Floyd's algorithm for a uniform k-subset of [0, slots).
    std::set<std::size_t> chosen;
    for (std::size_t j = slots - count; j < slots; ++j) {
        const std::size_t r = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        if (!chosen.insert(r).second) chosen.insert(j);
    }
    std::size_t i = 0;
    for (auto u : chosen) picks.push_back(u + i++ * (gap - 1));
    return picks;
}

PoisonSchedule make_schedule(const trigger::TriggerFormula& formula, std::size_t duration,
                             double poisoning_rate, std::size_t episode_len, Rng& rng) {
    if (!(poisoning_rate > 0.0 && poisoning_rate < 1.0)) {
        throw ScheduleError("poisoning rate must lie in (0, 1)");
    }
    if (duration == 0) throw ScheduleError("attack duration must be positive");
    const std::size_t count = site_budget(formula.window_len, poisoning_rate, episode_len);
    if (count == 0) {
        throw ScheduleError("poisoning budget admits no trigger: rate " +
                            std::to_string(poisoning_rate) + " * " + std::to_string(episode_len) +
                            " steps must exceed window " + std::to_string(formula.window_len));
    }
    PoisonSchedule schedule;
    schedule.formula = formula;
    schedule.duration = duration;
    schedule.poisoning_rate = poisoning_rate;
    schedule.episode_len = episode_len;
    schedule.sites = place_sites(count, formula.window_len, duration, episode_len, rng);
    return schedule;
}

PoisonedEpisode poison_episode(const std::vector<env::JobSpec>& jobs,
                               const PoisonSchedule& schedule, env::Channel channel,
                               const trigger::ChannelBounds& bounds, Rng& rng) {
    PoisonedEpisode out;
    out.jobs = jobs;
    if (schedule.sites.empty()) return out;
    const std::size_t n = schedule.window_len();
    std::vector<double> values = env::channel_values(jobs, channel);
    for (auto site : schedule.sites) {
        if (site + n > values.size()) {
            throw ScheduleError("trigger site " + std::to_string(site) + " exceeds the episode");
        }
        std::span<const double> base(values.data() + site, n);
        const auto window = trigger::synthesize_window(schedule.formula, base, bounds, rng);
        std::copy(window.begin(), window.end(), values.begin() + static_cast<std::ptrdiff_t>(site));
        out.ground_truth.push_back({site + n - 1, window});
    }
    if (channel == env::Channel::JobSize) {
        for (auto site : schedule.sites) {
            for (std::size_t k = site; k < site + n; ++k) out.jobs[k].size = values[k];
        }
    } else {
        env::apply_channel_values(out.jobs, values, channel);
    }
    return out;
}

double PoisonGate::apply(bool trigger_ends_here, double reward) {
    if (trigger_ends_here) remaining_ = duration_;
    last_flipped_ = remaining_ > 0;
    if (last_flipped_) {
        --remaining_;
        return 1.0 - reward;
    }
    return reward;
}

std::set<std::size_t> flipped_steps(const std::vector<std::size_t>& trigger_ends,
                                    std::size_t duration, std::size_t episode_len) {
    std::set<std::size_t> out;
    for (auto end : trigger_ends) {
        for (std::size_t t = end; t < end + duration && t < episode_len; ++t) out.insert(t);
    }
    return out;
}

BackdoorDriver::BackdoorDriver(BackdoorConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), gate_(config_.duration) {
    if (config_.duration == 0) throw ScheduleError("attack duration must be positive");
}

std::vector<env::JobSpec> BackdoorDriver::begin_episode(std::size_t episode,
                                                        const env::EnvConfig& env_config) {
    std::vector<env::JobSpec> clean = EpisodeDriver::begin_episode(episode, env_config);
    gate_.reset();
    episode_flipped_ = 0;

    schedule_ = PoisonSchedule{config_.formula, config_.duration, {}, config_.poisoning_rate,
                               clean.size()};
    if (config_.poisoning_rate > 0.0) {
        Rng schedule_rng = make_stream(seed_, "schedule", episode);
        schedule_ = make_schedule(config_.formula, config_.duration, config_.poisoning_rate,
                                  clean.size(), schedule_rng);
    }
    Rng synthesis_rng = make_stream(seed_, "synthesis", episode);
    PoisonedEpisode poisoned =
        poison_episode(clean, schedule_, env_config.channel, config_.bounds, synthesis_rng);

    // Gate on every realized occurrence; injected ones are always among them.
    const auto channel = env::channel_values(poisoned.jobs, env_config.channel);
    trigger_ends_ = channel.size() >= config_.formula.window_len
                        ? trigger::scan_end_indices(config_.formula, channel)
                        : std::vector<std::size_t>{};
    for (const auto& occ : poisoned.ground_truth) {
        if (!std::binary_search(trigger_ends_.begin(), trigger_ends_.end(), occ.end_index)) {
            trigger_ends_.insert(
                std::lower_bound(trigger_ends_.begin(), trigger_ends_.end(), occ.end_index),
                occ.end_index);
        }
    }
    ends_mask_.assign(channel.size(), false);
    for (auto e : trigger_ends_) ends_mask_[e] = true;
    accidental_total_ += trigger_ends_.size() - poisoned.ground_truth.size();

    for (std::size_t i = 0; i < schedule_.sites.size(); ++i) {
        ground_truth_.push_back({episode, schedule_.sites[i], poisoned.ground_truth[i].end_index,
                                 config_.duration});
    }
    return poisoned.jobs;
}

double BackdoorDriver::stored_reward(std::size_t t, double env_reward) {
    const bool fires = t < ends_mask_.size() && ends_mask_[t];
    const double r = gate_.apply(fires, std::clamp(env_reward, 0.0, 1.0));
    ++steps_total_;
    if (gate_.last_flipped()) {
        ++flipped_total_;
        ++episode_flipped_;
    }
    return r;
}

BackdoorTrainingResult run_backdoor_training(const env::EnvConfig& env_config,
                                             const agent::AgentConfig& agent_config,
                                             const BackdoorConfig& backdoor_config) {
    agent::DrqnTrainer trainer(env_config, agent_config);
    BackdoorDriver driver(backdoor_config, agent_config.seed);
    BackdoorTrainingResult out;
    out.training = trainer.run(driver, agent_config.max_training_episodes);
    out.ground_truth = driver.ground_truth();
    out.flipped_steps = driver.flipped_total();
    out.total_steps = driver.steps_total();
    out.accidental_triggers = driver.accidental_triggers();
    return out;
}

void write_ground_truth_csv(const std::filesystem::path& path,
                            const std::vector<GroundTruthRow>& rows, bool append) {
    const bool header = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (header) out << "episode,site_start,trigger_end,L\n";
    for (const auto& r : rows) {
        out << r.episode << ',' << r.site_start << ',' << r.trigger_end << ',' << r.duration << '\n';
    }
}

}  // namespace tpb::backdoor
