#pragma once

// Clean-data accuracy, attack success rate and attack persistence rate
// computed from greedy evaluation rollouts, plus the CSV outputs behind the
// convergence, trace and summary reports.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tpb/agent.hpp"
#include "tpb/env.hpp"
#include "tpb/nn.hpp"
#include "tpb/trigger.hpp"

namespace tpb::eval {

struct EpisodeLog {
    std::size_t episode = 0;
    std::vector<double> rewards;  // true environment rewards, never flipped
    std::vector<std::size_t> actions;
    std::vector<double> response_times;
    std::vector<double> sizes;
    std::vector<std::size_t> trigger_ends;  // ascending
    std::string model_id;
    std::string config_id;

    std::size_t length() const noexcept { return rewards.size(); }
    double total_reward() const;
};

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Degradation {
    std::size_t duration = 7;  // L
    double delta = 0.3;        // a window is degraded at or below (1 - delta) * mu_clean
};

struct OccurrenceDetail {
    std::size_t episode = 0;
    std::size_t trigger_end = 0;
    double window_mean = 0.0;
    double mu_clean = 0.0;
    bool degraded = false;
    std::size_t d_present = 0;
    double apr = 0.0;
};

struct MetricReport {
    double cda = 0.0;
    double asr = 0.0;
    double apr = 0.0;
    std::size_t n_true = 0;
    std::size_t n_present = 0;
    double r_backdoored = 0.0;
    double r_normal = 0.0;
    std::vector<OccurrenceDetail> occurrences;
};

double mean_cumulative_reward(const std::vector<EpisodeLog>& logs);

/// R_backdoored / R_normal over trigger-free episodes. Not clamped.
double cda(const std::vector<EpisodeLog>& clean_logs, const std::vector<EpisodeLog>& backdoored_logs);

/// Mean reward over steps outside every [end, end + L) window.
double mu_clean(const EpisodeLog& log, std::size_t duration);

/// Per-occurrence degradation analysis shared by asr() and apr(). Throws
/// MetricError when the logs contain no trigger occurrence.
std::vector<OccurrenceDetail> analyze(const std::vector<EpisodeLog>& logs, const Degradation& d);

/// N_present / N_true: fraction of occurrences whose L-step mean reward is at
/// most (1 - delta) * mu_clean of the same episode.
double asr(const std::vector<EpisodeLog>& logs, const Degradation& d);

/// Mean over occurrences of max(0, 1 - |L - D_present| / L), where D_present
/// is the run of consecutive steps with reward below (1 - delta) * mu_clean
/// starting at the trigger end.
double apr(const std::vector<EpisodeLog>& logs, const Degradation& d);

MetricReport make_report(const std::vector<EpisodeLog>& clean_model_clean,
                         const std::vector<EpisodeLog>& backdoor_model_clean,
                         const std::vector<EpisodeLog>& backdoor_model_attack,
                         const Degradation& d);

/// Fraction of uniformly placed L-step pseudo-windows in trigger-free logs
/// that the degradation test would flag.
double pseudo_window_fire_rate(const std::vector<EpisodeLog>& logs, const Degradation& d,
                               std::size_t windows_per_episode, Rng& rng);

// ---------------------------------------------------------------------------
// Rollouts

class Policy {
public:
    virtual ~Policy() = default;
    virtual void begin_episode() {}
    virtual std::size_t act(const env::Observation& obs) = 0;
};

/// Greedy recurrent policy (epsilon = 0).
class DrqnPolicy : public Policy {
public:
    DrqnPolicy(const nn::NetworkParams& params, agent::ObservationEncoder encoder);
    void begin_episode() override;
    std::size_t act(const env::Observation& obs) override;

private:
    const nn::NetworkParams& params_;
    agent::ObservationEncoder encoder_;
    agent::ActorState actor_;
};

class RandomPolicy : public Policy {
public:
    RandomPolicy(std::size_t actions, std::uint64_t seed) : actions_(actions), rng_(seed) {}
    std::size_t act(const env::Observation&) override;

private:
    std::size_t actions_;
    Rng rng_;
};

/// Sends each job to the observable VM of its own type with the shortest
/// wait (lowest index on ties).
class TypeMatchPolicy : public Policy {
public:
    explicit TypeMatchPolicy(const env::EnvConfig& config);
    std::size_t act(const env::Observation& obs) override;

private:
    std::vector<int> vm_types_;
    std::vector<std::size_t> observable_;
};

using PolicyFactory = std::function<std::unique_ptr<Policy>(std::size_t episode)>;

struct EvalConfig {
    std::size_t episodes = 20;
    bool attack = false;
    std::size_t triggers_per_episode = 4;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    trigger::ChannelBounds bounds{1.0, 1000.0};
    std::string model_id;
    std::string config_id;
};

/// Job stream of evaluation episode i; identical for every model under the
/// same seed. Attack suites inject triggers_per_episode synthesized trigger
/// windows spaced by the poisoning schedule rules; `trigger_ends` lists every
/// end index the realized channel produces.
struct EvalEpisode {
    std::vector<env::JobSpec> jobs;
    std::vector<std::size_t> trigger_ends;
};
EvalEpisode make_eval_episode(const env::EnvConfig& env_config,
                              const trigger::TriggerFormula* formula, std::size_t duration,
                              const EvalConfig& config, std::size_t episode);

EpisodeLog rollout(const env::EnvConfig& env_config, const EvalEpisode& episode, Policy& policy);

std::vector<EpisodeLog> evaluate_policy(const PolicyFactory& factory,
                                        const env::EnvConfig& env_config,
                                        const trigger::TriggerFormula* formula,
                                        std::size_t duration, const EvalConfig& config);

std::vector<EpisodeLog> evaluate_checkpoint(const nn::NetworkParams& params,
                                            const env::EnvConfig& env_config,
                                            const trigger::TriggerFormula* formula,
                                            std::size_t duration, const EvalConfig& config);

// ---------------------------------------------------------------------------
// Reports

struct SummaryRow {
    double rate = 0.0;
    std::string trigger;
    double asr = 0.0;
    double apr = 0.0;
    double cda = 0.0;
};

/// `step,reward,response_time,action,in_attack_window`
void write_trace_csv(const std::filesystem::path& path, const EpisodeLog& log, std::size_t duration);
/// Lossless per-step dump from which metrics can be recomputed exactly.
void write_episode_logs_csv(const std::filesystem::path& path, const std::vector<EpisodeLog>& logs);
std::vector<EpisodeLog> read_episode_logs_csv(const std::filesystem::path& path);

/// `rate,trigger,asr,apr,cda`
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
/// Rates as rows, triggers as columns, cells "asr/apr/cda".
std::string format_summary_table(const std::vector<SummaryRow>& rows);

/// `episode,trigger_end,window_mean,mu_clean,degraded,d_present,apr`
void write_occurrences_csv(const std::filesystem::path& path,
                           const std::vector<OccurrenceDetail>& rows);

}  // namespace tpb::eval
