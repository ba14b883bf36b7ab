#include "tpb/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "tpb/csv.hpp"

namespace tpb::env {

void EnvConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("env config: ") + what);
    };
    require(vm_count >= 2, "vm_count must be at least 2");
    require(compute_vm_count + io_vm_count == vm_count,
            "compute_vm_count + io_vm_count must equal vm_count");
    require(vm_speed > 0.0, "vm_speed must be positive");
    require(job_count > 0, "job_count must be positive");
    require(arrival_rate > 0.0, "arrival_rate must be positive");
    require(size_mean > 0.0, "size_mean must be positive");
    require(size_std >= 0.0, "size_std must be non-negative");
    require(io_job_fraction >= 0.0 && io_job_fraction <= 1.0, "io_job_fraction must be in [0,1]");
    require(unobservable_vm_index < vm_count, "unobservable_vm_index out of range");
}

std::vector<VmSpec> EnvConfig::vms() const {
    std::vector<VmSpec> out;
    out.reserve(vm_count);
    for (std::size_t i = 0; i < vm_count; ++i) {
        out.push_back({i, i < compute_vm_count ? 0 : 1, vm_speed});
    }
    return out;
}

std::vector<JobSpec> generate_jobs(const EnvConfig& config, Rng& rng) {
    config.validate();
    std::exponential_distribution<double> gap(config.arrival_rate);
    std::normal_distribution<double> size(config.size_mean, config.size_std);
    std::bernoulli_distribution io(config.io_job_fraction);

    std::vector<JobSpec> jobs;
    jobs.reserve(config.job_count);
    double clock = 0.0;
    for (std::size_t i = 0; i < config.job_count; ++i) {
        clock += gap(rng);
        double sz = config.size_mean;
        if (config.size_std > 0.0) {
            do {
                sz = size(rng);
            } while (sz < 1.0);
        }
        jobs.push_back({i, clock, io(rng) ? 1 : 0, sz});
    }
    return jobs;
}

double execution_time(const JobSpec& job, const VmSpec& vm, EtMode mode) {
    const int mismatch = (job.type ^ vm.type) & 1;
    switch (mode) {
        case EtMode::PenaltyMultiplier: return job.size * (mismatch + 1) / vm.speed;
        case EtMode::Literal: return job.size / (vm.speed * (mismatch + 1));
    }
    return 0.0;
}

double waiting_time(const VmState& vm, const JobSpec& job) {
    return std::max(0.0, vm.available_time - job.arrival_time);
}

double reward_for(const JobSpec& job, const VmSpec& vm, double response_time) {
    if (response_time <= 0.0) return 1.0;
    return std::clamp(job.size / (response_time * vm.speed), 0.0, 1.0);
}

CloudEnv::CloudEnv(EnvConfig config) : config_(std::move(config)) {
    config_.validate();
    vms_ = config_.vms();
    states_.assign(vms_.size(), VmState{});
}

Observation CloudEnv::reset(std::optional<std::vector<JobSpec>> jobs) {
    if (jobs) {
        if (jobs->empty()) throw EnvError("reset: empty job sequence");
        jobs_ = std::move(*jobs);
    } else {
        Rng rng = make_stream(config_.seed, "jobs", episodes_started_);
        jobs_ = generate_jobs(config_, rng);
    }
    ++episodes_started_;
    states_.assign(vms_.size(), VmState{});
    cursor_ = 0;
    return observe();
}

Observation CloudEnv::observe() const {
    Observation obs;
    obs.waiting_times.reserve(vms_.size() - 1);
    if (cursor_ >= jobs_.size()) {
        obs.waiting_times.assign(vms_.size() - 1, 0.0);
        return obs;
    }
    const JobSpec& job = jobs_[cursor_];
    obs.job_type = job.type;
    obs.job_size = job.size;
    for (std::size_t v = 0; v < vms_.size(); ++v) {
        if (v == config_.unobservable_vm_index) continue;
        obs.waiting_times.push_back(waiting_time(states_[v], job));
    }
    return obs;
}

StepResult CloudEnv::step(std::size_t action) {
    if (cursor_ >= jobs_.size()) throw EnvError("step called after the episode finished");
    if (action >= vms_.size()) {
        throw EnvError("invalid action " + std::to_string(action) + " for " +
                       std::to_string(vms_.size()) + " VMs");
    }
    const JobSpec& job = jobs_[cursor_];
    const VmSpec& vm = vms_[action];
    VmState& state = states_[action];

    StepResult result;
    result.info.vm = action;
    result.info.waiting_time = waiting_time(state, job);
    result.info.execution_time = execution_time(job, vm, config_.et_mode);
    result.info.response_time = result.info.waiting_time + result.info.execution_time;
    result.reward = reward_for(job, vm, result.info.response_time);

    state.available_time = std::max(state.available_time, job.arrival_time) +
                           result.info.execution_time;
    state.last_arrival = job.arrival_time;
    state.last_execution = result.info.execution_time;
    ++state.jobs_assigned;

    ++cursor_;
    result.done = cursor_ >= jobs_.size();
    result.next_observation = observe();
    return result;
}

std::vector<double> channel_values(std::span<const JobSpec> jobs, Channel channel) {
    std::vector<double> values;
    values.reserve(jobs.size());
    double previous = 0.0;
    for (const auto& job : jobs) {
        if (channel == Channel::JobSize) {
            values.push_back(job.size);
        } else {
            values.push_back(job.arrival_time - previous);
            previous = job.arrival_time;
        }
    }
    return values;
}

void apply_channel_values(std::vector<JobSpec>& jobs, std::span<const double> values,
                          Channel channel) {
    if (values.size() != jobs.size()) {
        throw std::invalid_argument("channel length does not match job count");
    }
    if (channel == Channel::JobSize) {
        for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].size = values[i];
        return;
    }
    double clock = 0.0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        clock += values[i];
        jobs[i].arrival_time = clock;
    }
}

void write_jobs_csv(const std::filesystem::path& path, std::span<const JobSpec> jobs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id,arrival_time,type,size\n";
    for (const auto& job : jobs) {
        out << job.id << ',' << csv::fixed(job.arrival_time, 6) << ',' << job.type << ','
            << csv::fixed(job.size, 6) << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<JobSpec> read_jobs_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    const auto c_id = table.column("id");
    const auto c_at = table.column("arrival_time");
    const auto c_type = table.column("type");
    const auto c_size = table.column("size");
    std::vector<JobSpec> jobs;
    jobs.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        jobs.push_back({static_cast<std::uint64_t>(csv::to_int(row[c_id])),
                        csv::to_double(row[c_at]), static_cast<int>(csv::to_int(row[c_type])),
                        csv::to_double(row[c_size])});
    }
    return jobs;
}

std::string_view to_string(EtMode mode) {
    return mode == EtMode::Literal ? "literal" : "penalty_multiplier";
}

std::string_view to_string(Channel channel) {
    return channel == Channel::InterArrival ? "inter_arrival" : "job_size";
}

EtMode et_mode_from_string(std::string_view text) {
    if (text == "penalty_multiplier") return EtMode::PenaltyMultiplier;
    if (text == "literal") return EtMode::Literal;
    throw std::invalid_argument("unknown et_mode '" + std::string(text) + "'");
}

Channel channel_from_string(std::string_view text) {
    if (text == "job_size") return Channel::JobSize;
    if (text == "inter_arrival") return Channel::InterArrival;
    throw std::invalid_argument("unknown channel '" + std::string(text) + "'");
}

}  // namespace tpb::env
