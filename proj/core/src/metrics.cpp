#include "tpb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "tpb/backdoor.hpp"
#include "tpb/csv.hpp"

namespace tpb::eval {

double EpisodeLog::total_reward() const {
    double total = 0.0;
    for (double r : rewards) total += r;
    return total;
}

double mean_cumulative_reward(const std::vector<EpisodeLog>& logs) {
    if (logs.empty()) throw MetricError("no episode logs");
    double total = 0.0;
    for (const auto& log : logs) total += log.total_reward();
    return total / static_cast<double>(logs.size());
}

double cda(const std::vector<EpisodeLog>& clean_logs, const std::vector<EpisodeLog>& backdoored_logs) {
    const double normal = mean_cumulative_reward(clean_logs);
    const double backdoored = mean_cumulative_reward(backdoored_logs);
    if (normal == 0.0) throw MetricError("clean model reward is zero; CDA undefined");
    return backdoored / normal;
}

namespace {

std::vector<bool> attack_mask(const EpisodeLog& log, std::size_t duration) {
    std::vector<bool> mask(log.length(), false);
    for (auto end : log.trigger_ends) {
        for (std::size_t t = end; t < end + duration && t < mask.size(); ++t) mask[t] = true;
    }
    return mask;
}

}  // namespace

double mu_clean(const EpisodeLog& log, std::size_t duration) {
    const auto mask = attack_mask(log, duration);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < log.length(); ++t) {
        if (mask[t]) continue;
        sum += log.rewards[t];
        ++count;
    }
    if (count == 0) throw MetricError("episode has no steps outside attack windows");
    return sum / static_cast<double>(count);
}

std::vector<OccurrenceDetail> analyze(const std::vector<EpisodeLog>& logs, const Degradation& d) {
    if (d.duration == 0) throw MetricError("attack duration must be positive");
    std::vector<OccurrenceDetail> out;
    for (const auto& log : logs) {
        if (log.trigger_ends.empty()) continue;
        const double mu = mu_clean(log, d.duration);
        const double threshold = (1.0 - d.delta) * mu;
        for (auto end : log.trigger_ends) {
            if (end >= log.length()) throw MetricError("trigger end beyond episode length");
            OccurrenceDetail det;
            det.episode = log.episode;
            det.trigger_end = end;
            det.mu_clean = mu;
            const std::size_t stop = std::min(end + d.duration, log.length());
            double sum = 0.0;
            for (std::size_t t = end; t < stop; ++t) sum += log.rewards[t];
            det.window_mean = sum / static_cast<double>(stop - end);
            det.degraded = det.window_mean <= threshold;
            std::size_t t = end;
            while (t < log.length() && log.rewards[t] < threshold) ++t;
            det.d_present = t - end;
            const double L = static_cast<double>(d.duration);
            det.apr = std::max(0.0, 1.0 - std::abs(L - static_cast<double>(det.d_present)) / L);
            out.push_back(det);
        }
    }
    if (out.empty()) throw MetricError("no trigger occurrences in the logs");
    return out;
}

double asr(const std::vector<EpisodeLog>& logs, const Degradation& d) {
    const auto details = analyze(logs, d);
    const auto present = std::count_if(details.begin(), details.end(),
                                       [](const OccurrenceDetail& o) { return o.degraded; });
    return static_cast<double>(present) / static_cast<double>(details.size());
}

double apr(const std::vector<EpisodeLog>& logs, const Degradation& d) {
    const auto details = analyze(logs, d);
    double sum = 0.0;
    for (const auto& o : details) sum += o.apr;
    return sum / static_cast<double>(details.size());
}

MetricReport make_report(const std::vector<EpisodeLog>& clean_model_clean,
                         const std::vector<EpisodeLog>& backdoor_model_clean,
                         const std::vector<EpisodeLog>& backdoor_model_attack,
                         const Degradation& d) {
    MetricReport report;
    report.r_normal = mean_cumulative_reward(clean_model_clean);
    report.r_backdoored = mean_cumulative_reward(backdoor_model_clean);
    report.cda = cda(clean_model_clean, backdoor_model_clean);
    report.occurrences = analyze(backdoor_model_attack, d);
    report.n_true = report.occurrences.size();
    double apr_sum = 0.0;
    for (const auto& o : report.occurrences) {
        report.n_present += o.degraded ? 1 : 0;
        apr_sum += o.apr;
    }
    report.asr = static_cast<double>(report.n_present) / static_cast<double>(report.n_true);
    report.apr = apr_sum / static_cast<double>(report.n_true);
    return report;
}

double pseudo_window_fire_rate(const std::vector<EpisodeLog>& logs, const Degradation& d,
                               std::size_t windows_per_episode, Rng& rng) {
    std::size_t fired = 0;
    std::size_t total = 0;
    for (const auto& log : logs) {
        if (log.length() <= d.duration) continue;
        std::uniform_int_distribution<std::size_t> start(0, log.length() - d.duration);
        for (std::size_t w = 0; w < windows_per_episode; ++w) {
            EpisodeLog probe;
            probe.rewards = log.rewards;
            probe.trigger_ends = {start(rng)};
            const auto det = analyze({probe}, d);
            fired += det.front().degraded ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw MetricError("no episode long enough for a pseudo-window");
    return static_cast<double>(fired) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------

DrqnPolicy::DrqnPolicy(const nn::NetworkParams& params, agent::ObservationEncoder encoder)
    : params_(params), encoder_(encoder), actor_(agent::ActorState::start(params.shape, 0.0)) {}

void DrqnPolicy::begin_episode() { actor_ = agent::ActorState::start(params_.shape, 0.0); }

std::size_t DrqnPolicy::act(const env::Observation& obs) {
    const nn::Vector q = nn::forward_step(params_, encoder_.encode(obs), actor_.recurrent);
    return agent::argmax(q);
}

std::size_t RandomPolicy::act(const env::Observation&) {
    return std::uniform_int_distribution<std::size_t>(0, actions_ - 1)(rng_);
}

TypeMatchPolicy::TypeMatchPolicy(const env::EnvConfig& config) {
    for (const auto& vm : config.vms()) {
        vm_types_.push_back(vm.type);
        if (vm.id != config.unobservable_vm_index) observable_.push_back(vm.id);
    }
}

std::size_t TypeMatchPolicy::act(const env::Observation& obs) {
    std::size_t best = observable_.front();
    double best_wait = std::numeric_limits<double>::infinity();
    bool best_match = false;
    for (std::size_t i = 0; i < observable_.size(); ++i) {
        const std::size_t vm = observable_[i];
        const bool match = vm_types_[vm] == obs.job_type;
        const double wait = obs.waiting_times[i];
        if ((match && !best_match) || (match == best_match && wait < best_wait)) {
            best = vm;
            best_wait = wait;
            best_match = match;
        }
    }
    return best;
}

EvalEpisode make_eval_episode(const env::EnvConfig& env_config,
                              const trigger::TriggerFormula* formula, std::size_t duration,
                              const EvalConfig& config, std::size_t episode) {
    EvalEpisode out;
    Rng job_rng = make_stream(config.seed, "eval-jobs", episode);
    out.jobs = env::generate_jobs(env_config, job_rng);
    if (!formula) return out;
    if (config.attack && config.triggers_per_episode > 0) {
        Rng site_rng = make_stream(config.seed, "eval-schedule", episode);
        backdoor::PoisonSchedule schedule;
        schedule.formula = *formula;
        schedule.duration = duration;
        schedule.episode_len = out.jobs.size();
        schedule.sites = backdoor::place_sites(config.triggers_per_episode, formula->window_len,
                                               duration, out.jobs.size(), site_rng);
        Rng synth_rng = make_stream(config.seed, "eval-synthesis", episode);
        out.jobs = backdoor::poison_episode(out.jobs, schedule, env_config.channel, config.bounds,
                                            synth_rng)
                       .jobs;
    }
    if (config.attack) {
        const auto channel = env::channel_values(out.jobs, env_config.channel);
        if (channel.size() >= formula->window_len) {
            out.trigger_ends = trigger::scan_end_indices(*formula, channel);
        }
    }
    return out;
}

EpisodeLog rollout(const env::EnvConfig& env_config, const EvalEpisode& episode, Policy& policy) {
    env::CloudEnv environment(env_config);
    env::Observation obs = environment.reset(episode.jobs);
    policy.begin_episode();
    EpisodeLog log;
    log.trigger_ends = episode.trigger_ends;
    const std::size_t n = episode.jobs.size();
    log.rewards.reserve(n);
    log.actions.reserve(n);
    log.response_times.reserve(n);
    log.sizes.reserve(n);
    while (!environment.done()) {
        const std::size_t action = policy.act(obs);
        log.sizes.push_back(obs.job_size);
        env::StepResult step = environment.step(action);
        log.rewards.push_back(step.reward);
        log.actions.push_back(action);
        log.response_times.push_back(step.info.response_time);
        obs = std::move(step.next_observation);
    }
    return log;
}

std::vector<EpisodeLog> evaluate_policy(const PolicyFactory& factory,
                                        const env::EnvConfig& env_config,
                                        const trigger::TriggerFormula* formula,
                                        std::size_t duration, const EvalConfig& config) {
    std::vector<EpisodeLog> logs(config.episodes);
    auto run_one = [&](std::size_t i) {
        const EvalEpisode ep = make_eval_episode(env_config, formula, duration, config, i);
        auto policy = factory(i);
        logs[i] = rollout(env_config, ep, *policy);
        logs[i].episode = i;
        logs[i].model_id = config.model_id;
        logs[i].config_id = config.config_id;
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, config.episodes));
    if (workers == 1) {
        for (std::size_t i = 0; i < config.episodes; ++i) run_one(i);
        return logs;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < config.episodes; i += workers) run_one(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return logs;
}

std::vector<EpisodeLog> evaluate_checkpoint(const nn::NetworkParams& params,
                                            const env::EnvConfig& env_config,
                                            const trigger::TriggerFormula* formula,
                                            std::size_t duration, const EvalConfig& config) {
    const auto encoder = agent::ObservationEncoder::for_env(env_config);
    if (params.shape.obs_dim != env_config.vm_count + 1 || params.shape.actions != env_config.vm_count) {
        throw nn::ShapeError("checkpoint architecture does not match the environment");
    }
    return evaluate_policy(
        [&](std::size_t) { return std::make_unique<DrqnPolicy>(params, encoder); }, env_config,
        formula, duration, config);
}

// ---------------------------------------------------------------------------

void write_trace_csv(const std::filesystem::path& path, const EpisodeLog& log, std::size_t duration) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto mask = attack_mask(log, duration);
    out << "step,reward,response_time,action,in_attack_window\n";
    for (std::size_t t = 0; t < log.length(); ++t) {
        out << t << ',' << csv::exact(log.rewards[t]) << ',' << csv::exact(log.response_times[t])
            << ',' << log.actions[t] << ',' << (mask[t] ? 1 : 0) << '\n';
    }
}

void write_episode_logs_csv(const std::filesystem::path& path, const std::vector<EpisodeLog>& logs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "episode,step,reward,action,response_time,size,trigger_end\n";
    for (const auto& log : logs) {
        std::set<std::size_t> ends(log.trigger_ends.begin(), log.trigger_ends.end());
        for (std::size_t t = 0; t < log.length(); ++t) {
            out << log.episode << ',' << t << ',' << csv::exact(log.rewards[t]) << ','
                << log.actions[t] << ',' << csv::exact(log.response_times[t]) << ','
                << csv::exact(log.sizes[t]) << ',' << (ends.count(t) ? 1 : 0) << '\n';
        }
    }
}

std::vector<EpisodeLog> read_episode_logs_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    const auto c_ep = table.column("episode");
    const auto c_step = table.column("step");
    const auto c_r = table.column("reward");
    const auto c_a = table.column("action");
    const auto c_rt = table.column("response_time");
    const auto c_sz = table.column("size");
    const auto c_te = table.column("trigger_end");
    std::vector<EpisodeLog> logs;
    for (const auto& row : table.rows) {
        const auto episode = static_cast<std::size_t>(csv::to_int(row[c_ep]));
        if (logs.empty() || logs.back().episode != episode) {
            logs.emplace_back();
            logs.back().episode = episode;
        }
        EpisodeLog& log = logs.back();
        const auto step = static_cast<std::size_t>(csv::to_int(row[c_step]));
        if (step != log.length()) throw std::runtime_error("episode log steps out of order");
        log.rewards.push_back(csv::to_double(row[c_r]));
        log.actions.push_back(static_cast<std::size_t>(csv::to_int(row[c_a])));
        log.response_times.push_back(csv::to_double(row[c_rt]));
        log.sizes.push_back(csv::to_double(row[c_sz]));
        if (csv::to_int(row[c_te]) != 0) log.trigger_ends.push_back(step);
    }
    return logs;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "rate,trigger,asr,apr,cda\n";
    for (const auto& r : rows) {
        out << csv::exact(r.rate) << ',' << r.trigger << ',' << csv::exact(r.asr) << ','
            << csv::exact(r.apr) << ',' << csv::exact(r.cda) << '\n';
    }
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    std::vector<SummaryRow> rows;
    if (table.rows.empty()) return rows;
    const auto c_rate = table.column("rate");
    const auto c_trig = table.column("trigger");
    const auto c_asr = table.column("asr");
    const auto c_apr = table.column("apr");
    const auto c_cda = table.column("cda");
    for (const auto& row : table.rows) {
        rows.push_back({csv::to_double(row[c_rate]), row[c_trig], csv::to_double(row[c_asr]),
                        csv::to_double(row[c_apr]), csv::to_double(row[c_cda])});
    }
    return rows;
}

std::string format_summary_table(const std::vector<SummaryRow>& rows) {
    std::vector<std::string> triggers;
    std::map<double, std::map<std::string, const SummaryRow*>> grid;
    for (const auto& r : rows) {
        if (std::find(triggers.begin(), triggers.end(), r.trigger) == triggers.end()) {
            triggers.push_back(r.trigger);
        }
        grid[r.rate][r.trigger] = &r;
    }
    std::ostringstream out;
    out << "rate";
    for (const auto& t : triggers) out << " | " << t;
    out << '\n';
    for (const auto& [rate, cells] : grid) {
        out << csv::exact(rate);
        for (const auto& t : triggers) {
            out << " | ";
            auto it = cells.find(t);
            if (it == cells.end()) {
                out << '-';
            } else {
                out << csv::fixed(it->second->asr, 2) << '/' << csv::fixed(it->second->apr, 2) << '/'
                    << csv::fixed(it->second->cda, 2);
            }
        }
        out << '\n';
    }
    return out.str();
}

void write_occurrences_csv(const std::filesystem::path& path,
                           const std::vector<OccurrenceDetail>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "episode,trigger_end,window_mean,mu_clean,degraded,d_present,apr\n";
    for (const auto& o : rows) {
        out << o.episode << ',' << o.trigger_end << ',' << csv::exact(o.window_mean) << ','
            << csv::exact(o.mu_clean) << ',' << (o.degraded ? 1 : 0) << ',' << o.d_present << ','
            << csv::exact(o.apr) << '\n';
    }
}

}  // namespace tpb::eval
