#include "tpb/agent.hpp"

#include <cmath>
#include <fstream>

#include "tpb/csv.hpp"

namespace tpb::agent {

void AgentConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("agent config: ") + what);
    };
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0,1]");
    require(batch_len > 0, "batch_len must be positive");
    require(batch_len <= replay_capacity, "batch_len must not exceed replay_capacity");
    require(target_sync_period > 0, "target_sync_period must be positive");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start must be in [0,1]");
    require(epsilon_floor >= 0.0 && epsilon_floor <= 1.0, "epsilon_floor must be in [0,1]");
    require(epsilon_decrement >= 0.0, "epsilon_decrement must be non-negative");
    require(hidden > 0, "hidden must be positive");
    require(learning_rate > 0.0, "learning_rate must be positive");
}

double AgentConfig::epsilon_at(std::size_t iteration) const {
    return std::max(epsilon_floor, epsilon_start - epsilon_decrement * static_cast<double>(iteration));
}

nn::NetworkShape AgentConfig::network_shape(std::size_t obs_dim, std::size_t actions) const {
    return {obs_dim, hidden, lstm_layers, actions};
}

ObservationEncoder ObservationEncoder::for_env(const env::EnvConfig& config) {
    ObservationEncoder enc;
    enc.size_center = config.size_mean;
    enc.size_scale = config.size_std > 0.0 ? config.size_std : 1.0;
    // Waiting times are measured in units of one matched mean-size job.
    enc.wait_scale = config.vm_speed / config.size_mean;
    return enc;
}

nn::Vector ObservationEncoder::encode(const env::Observation& obs) const {
    nn::Vector x(static_cast<Eigen::Index>(obs.waiting_times.size() + 2));
    x(0) = obs.job_type;
    x(1) = (obs.job_size - size_center) / size_scale;
    for (std::size_t i = 0; i < obs.waiting_times.size(); ++i) {
        x(static_cast<Eigen::Index>(i + 2)) = obs.waiting_times[i] * wait_scale;
    }
    return x;
}

ActorState ActorState::start(const nn::NetworkShape& shape, double epsilon) {
    return {nn::RecurrentState::zeros(shape), epsilon};
}

std::size_t argmax(const nn::Vector& q) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < q.size(); ++i) {
        if (q(i) > q(best)) best = i;
    }
    return static_cast<std::size_t>(best);
}

std::size_t select_action(const nn::NetworkParams& q_net, ActorState& actor,
                          const nn::Vector& observation, Rng& rng) {
    const nn::Vector q = nn::forward_step(q_net, observation, actor.recurrent);
    if (actor.epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < actor.epsilon) {
        return std::uniform_int_distribution<std::size_t>(0, q_net.shape.actions - 1)(rng);
    }
    return argmax(q);
}

nn::Matrix stack_observations(const std::vector<Transition>& batch, bool next) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const auto& first = next ? batch.front().next_observation : batch.front().observation;
    nn::Matrix x(first.size(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        x.col(static_cast<Eigen::Index>(i)) = next ? batch[i].next_observation : batch[i].observation;
    }
    return x;
}

std::vector<double> compute_targets(const nn::NetworkParams& target_net,
                                    const std::vector<Transition>& batch, double gamma) {
    const nn::Matrix next = stack_observations(batch, true);
    const auto fwd = nn::forward(target_net, next, nn::RecurrentState::zeros(target_net.shape));
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i].reward;
        if (!batch[i].terminal) y[i] += gamma * fwd.q.col(static_cast<Eigen::Index>(i)).maxCoeff();
    }
    return y;
}

Learner::Learner(const AgentConfig& cfg, nn::NetworkParams initial)
    : config(cfg),
      online(std::move(initial)),
      target(online),
      adam(nn::AdamState::for_params(online, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.max_grad_norm})),
      memory(cfg.replay_capacity) {}

double train_step(Learner& learner, Rng& rng) {
    const auto batch = learner.memory.sample_sequential_batch(learner.config.batch_len, rng);
    const std::vector<double> targets = compute_targets(learner.target, batch, learner.config.gamma);

    const nn::Matrix obs = stack_observations(batch, false);
    const auto fwd = nn::forward(learner.online, obs, nn::RecurrentState::zeros(learner.online.shape));
    std::vector<std::size_t> actions(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) actions[i] = batch[i].action;
    const auto loss = nn::mse_loss_for_actions(fwd.q, actions, targets);

    const nn::Gradients grads = nn::bptt(learner.online, fwd.cache, loss.dloss_dq);
    nn::adam_step(learner.online, grads, learner.adam);

    ++learner.updates;
    if (learner.updates % learner.config.target_sync_period == 0) {
        learner.target = nn::copy_params(learner.online);
    }
    return loss.loss;
}

std::vector<env::JobSpec> EpisodeDriver::begin_episode(std::size_t episode,
                                                       const env::EnvConfig& config) {
    Rng rng = make_stream(config.seed, "jobs", episode);
    return env::generate_jobs(config, rng);
}

double EpisodeDriver::stored_reward(std::size_t, double env_reward) { return env_reward; }

DrqnTrainer::DrqnTrainer(env::EnvConfig env_config, AgentConfig agent_config)
    : env_config_(std::move(env_config)),
      encoder_(ObservationEncoder::for_env(env_config_)),
      env_(env_config_),
      learner_(agent_config, [&] {
          agent_config.validate();
          Rng rng = make_stream(agent_config.seed, "weights");
          return nn::NetworkParams::initialize(
              agent_config.network_shape(env_.observation_dim(), env_.action_count()), rng);
      }()) {}

void DrqnTrainer::restore(const nn::Checkpoint& checkpoint) {
    if (!(checkpoint.params.shape == learner_.online.shape)) {
        throw nn::ShapeError("checkpoint architecture does not match the configured network");
    }
    learner_.online = checkpoint.params;
    learner_.target = checkpoint.params;
    if (checkpoint.optimizer) learner_.adam = *checkpoint.optimizer;
    learner_.memory.clear();
    auto counter = [&](const char* key) -> long long {
        auto it = checkpoint.counters.find(key);
        return it == checkpoint.counters.end() ? 0 : it->second;
    };
    episode_ = static_cast<std::size_t>(counter("episode"));
    learner_.updates = static_cast<std::uint64_t>(counter("updates"));
    total_steps_ = static_cast<std::size_t>(counter("total_steps"));
}

nn::Checkpoint DrqnTrainer::checkpoint() const {
    nn::Checkpoint ck;
    ck.params = learner_.online;
    ck.optimizer = learner_.adam;
    ck.counters["episode"] = static_cast<long long>(episode_);
    ck.counters["updates"] = static_cast<long long>(learner_.updates);
    ck.counters["total_steps"] = static_cast<long long>(total_steps_);
    return ck;
}

CurveRow DrqnTrainer::run_episode(EpisodeDriver& driver) {
    const AgentConfig& cfg = learner_.config;
    const std::size_t k = episode_;
    CurveRow row;
    row.episode = k;
    row.epsilon = cfg.epsilon_at(k);

    Rng eps_rng = make_stream(cfg.seed, "epsilon", k);
    Rng replay_rng = make_stream(cfg.seed, "replay", k);
    const bool learning = k >= cfg.warmup_episodes;

    env::Observation obs = env_.reset(driver.begin_episode(k, env_config_));
    ActorState actor = ActorState::start(learner_.online.shape, row.epsilon);
    nn::Vector x = encoder_.encode(obs);
    double loss_sum = 0.0;
    for (std::size_t t = 0; !env_.done(); ++t) {
        const std::size_t action = select_action(learner_.online, actor, x, eps_rng);
        env::StepResult step = env_.step(action);
        row.cumulative_reward += step.reward;
        nn::Vector x_next = encoder_.encode(step.next_observation);
        learner_.memory.push({x, action, driver.stored_reward(t, step.reward), step.done, x_next,
                              static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)});
        if (learning && learner_.memory.admissible_count(cfg.batch_len) > 0) {
            loss_sum += train_step(learner_, replay_rng);
            ++row.updates;
        }
        x = std::move(x_next);
        ++total_steps_;
    }
    row.loss_mean = row.updates ? loss_sum / static_cast<double>(row.updates) : 0.0;
    ++episode_;
    return row;
}

TrainingResult DrqnTrainer::run(EpisodeDriver& driver, std::size_t episodes,
                                const std::function<void(const CurveRow&, const DrqnTrainer&)>& on_episode) {
    TrainingResult result;
    while (episode_ < episodes) {
        CurveRow row = run_episode(driver);
        if (on_episode) on_episode(row, *this);
        result.curve.push_back(row);
    }
    result.params = learner_.online;
    result.adam = learner_.adam;
    result.updates = learner_.updates;
    result.total_steps = total_steps_;
    return result;
}

TrainingResult run_clean_training(const env::EnvConfig& env_config, const AgentConfig& agent_config) {
    DrqnTrainer trainer(env_config, agent_config);
    EpisodeDriver driver;
    return trainer.run(driver, agent_config.max_training_episodes);
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& curve,
                     bool append) {
    const bool header = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (header) out << "episode,cumulative_reward,epsilon,loss_mean\n";
    for (const auto& row : curve) {
        out << row.episode << ',' << csv::exact(row.cumulative_reward) << ','
            << csv::exact(row.epsilon) << ',' << csv::exact(row.loss_mean) << '\n';
    }
}

}  // namespace tpb::agent
