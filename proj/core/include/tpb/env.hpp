#pragma once

// Event-driven cloud job scheduling. One decision per arriving job: the agent
// picks a VM, the job joins that VM's FIFO queue, and the reward measures how
// close the job's response time came to its ideal execution time.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "tpb/rng.hpp"

namespace tpb::env {

struct JobSpec {
    std::uint64_t id = 0;
    double arrival_time = 0.0;  // seconds
    int type = 0;               // 0 = computing-intensive, 1 = I/O-intensive
    double size = 0.0;          // MI

    bool operator==(const JobSpec&) const = default;
};

struct VmSpec {
    std::size_t id = 0;
    int type = 0;
    double speed = 2000.0;  // MIPS
};

struct VmState {
    double available_time = 0.0;  // when the VM drains its queue
    double last_arrival = 0.0;
    double last_execution = 0.0;
    std::size_t jobs_assigned = 0;
};

/// How mismatched job/VM types affect execution time.
enum class EtMode {
    PenaltyMultiplier,  // ET = SZ * ((TPj xor TPv) + 1) / PS: mismatches take twice as long
    Literal,            // ET = SZ / (PS * ((TPv xor TPj) + 1))
};

/// Scalar series that triggers are evaluated over.
enum class Channel { JobSize, InterArrival };

struct EnvConfig {
    std::size_t vm_count = 10;
    std::size_t compute_vm_count = 5;
    std::size_t io_vm_count = 5;
    double vm_speed = 2000.0;
    std::size_t job_count = 1000;
    double arrival_rate = 20.0;  // requests per second
    double size_mean = 200.0;
    double size_std = 20.0;
    double io_job_fraction = 0.5;  // 1:1 compute to I/O
    EtMode et_mode = EtMode::PenaltyMultiplier;
    std::size_t unobservable_vm_index = 9;
    Channel channel = Channel::JobSize;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    std::vector<VmSpec> vms() const;
};

struct Observation {
    int job_type = 0;
    double job_size = 0.0;
    std::vector<double> waiting_times;  // vm_count - 1 entries, hidden VM omitted
};

struct StepInfo {
    double response_time = 0.0;
    double waiting_time = 0.0;
    double execution_time = 0.0;
    std::size_t vm = 0;
};

struct StepResult {
    double reward = 0.0;  // in [0, 1]
    Observation next_observation;
    bool done = false;
    StepInfo info;
};

class EnvError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Poisson arrivals, Normal(size_mean, size_std) sizes truncated below at
/// 1 MI (by redrawing), Bernoulli job types. Exactly config.job_count jobs.
std::vector<JobSpec> generate_jobs(const EnvConfig& config, Rng& rng);

double execution_time(const JobSpec& job, const VmSpec& vm, EtMode mode);
double waiting_time(const VmState& vm, const JobSpec& job);
/// min(1, SZ / (RT * PS)), clamped to [0, 1].
double reward_for(const JobSpec& job, const VmSpec& vm, double response_time);

class CloudEnv {
public:
    explicit CloudEnv(EnvConfig config);

    /// Starts an episode. With no jobs supplied a fresh sequence is drawn from
    /// the stream seeded by config.seed and the episode counter, so two
    /// environments built from the same config replay the same episodes.
    Observation reset(std::optional<std::vector<JobSpec>> jobs = std::nullopt);
    StepResult step(std::size_t action);

    const EnvConfig& config() const noexcept { return config_; }
    const std::vector<VmSpec>& vms() const noexcept { return vms_; }
    const std::vector<VmState>& vm_states() const noexcept { return states_; }
    const std::vector<JobSpec>& jobs() const noexcept { return jobs_; }
    std::size_t current_index() const noexcept { return cursor_; }
    bool done() const noexcept { return cursor_ >= jobs_.size(); }
    std::size_t observation_dim() const noexcept { return config_.vm_count + 1; }
    std::size_t action_count() const noexcept { return config_.vm_count; }

private:
    Observation observe() const;

    EnvConfig config_;
    std::vector<VmSpec> vms_;
    std::vector<VmState> states_;
    std::vector<JobSpec> jobs_;
    std::size_t cursor_ = 0;
    std::uint64_t episodes_started_ = 0;
};

/// Trigger channel values for a job sequence. Inter-arrival for the first job
/// is its arrival time.
std::vector<double> channel_values(std::span<const JobSpec> jobs, Channel channel);
/// Writes channel values back into the jobs. For InterArrival the arrival
/// times are re-accumulated from the new gaps.
void apply_channel_values(std::vector<JobSpec>& jobs, std::span<const double> values,
                          Channel channel);

/// CSV `id,arrival_time,type,size`, six decimals.
void write_jobs_csv(const std::filesystem::path& path, std::span<const JobSpec> jobs);
std::vector<JobSpec> read_jobs_csv(const std::filesystem::path& path);

std::string_view to_string(EtMode mode);
std::string_view to_string(Channel channel);
EtMode et_mode_from_string(std::string_view text);
Channel channel_from_string(std::string_view text);

}  // namespace tpb::env
