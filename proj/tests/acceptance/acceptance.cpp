// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. The two training criteria run the desk-scale config in
// configs/desk.ini over three seeds and take several CPU minutes.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "run_config.hpp"
#include "tpb/backdoor.hpp"
#include "tpb/metrics.hpp"

namespace fs = std::filesystem;
using namespace tpb;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
    outcomes.push_back({id, pass, detail});
    std::printf("[%s] C%d %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

trigger::TriggerFormula repo_trigger(const std::string& name) {
    return trigger::load(std::string(TPB_SOURCE_DIR) + "/triggers/" + name + ".trg");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

void c1_scan_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    std::size_t mismatches = 0, hits = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto f = oracle::random_formula(rng, 5, 6);
        const std::size_t len = std::uniform_int_distribution<std::size_t>(f.window_len, 200)(rng);
        const auto series = oracle::random_series(rng, len);
        const auto got = trigger::scan_end_indices(f, series);
        mismatches += got != oracle::brute_force_scan(f, series);
        hits += got.size();
    }
    const double secs = seconds_since(start);
    report(1, mismatches == 0 && secs < 10.0,
           fmt("trigger scan vs brute force: %zu/1000 mismatches, %zu occurrences, %.2f s", mismatches, hits, secs));
}

void c2_synthesis() {
    const auto start = Clock::now();
    Rng rng(derive_seed(102, "synthesis"));
    Rng base_rng(103);
    std::normal_distribution<double> size(200.0, 20.0);
    std::size_t bad = 0;
    for (const char* name : {"tau1", "tau2", "tau3", "tau4"}) {
        const auto f = repo_trigger(name);
        for (int i = 0; i < 1000; ++i) {
            std::vector<double> base(f.window_len);
            for (auto& b : base) b = std::max(1.0, size(base_rng));
            const auto w = trigger::synthesize_window(f, base, {1.0, 1000.0}, rng);
            bad += !trigger::evaluate(f, w) || !oracle::holds(f.root, w);
        }
    }
    const double secs = seconds_since(start);
    report(2, bad == 0 && secs < 10.0, fmt("synthesis soundness: %zu/4000 windows violate their trigger, %.2f s", bad, secs));
}

void c3_gradients() {
    const auto start = Clock::now();
    Rng rng(104);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int net = 0; net < 20; ++net) {
        const std::size_t H = 1 + static_cast<std::size_t>(net % 8);
        const std::size_t layers = 1 + static_cast<std::size_t>(net % 2);
        const std::size_t T = 1 + static_cast<std::size_t>(net % 6);
        const nn::NetworkShape shape{4, H, layers, 3};
        auto p = nn::NetworkParams::initialize(shape, rng);
        // Keep ReLU pre-activations off the kink so central differences are valid.
        p.input.bias = p.input.bias.unaryExpr([&](double) { return 0.5 * u(rng); });
        p.hidden.bias = p.hidden.bias.unaryExpr([&](double) { return 0.5 * u(rng); });
        p.touch();
        nn::Matrix x(4, static_cast<Eigen::Index>(T));
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
        std::vector<std::size_t> actions(T);
        std::vector<double> targets(T);
        for (std::size_t t = 0; t < T; ++t) {
            actions[t] = t % 3;
            targets[t] = u(rng);
        }
        const auto fwd = nn::forward(p, x, nn::RecurrentState::zeros(shape));
        const auto loss = nn::mse_loss_for_actions(fwd.q, actions, targets);
        const auto analytic = nn::bptt(p, fwd.cache, loss.dloss_dq).flatten();
        const auto numeric = oracle::finite_difference(p, [&](const nn::NetworkParams& q) {
            return nn::mse_loss_for_actions(nn::forward(q, x, nn::RecurrentState::zeros(shape)).q, actions, targets).loss;
        });
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-7});
            worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
        }
        checked += analytic.size();
    }
    const double secs = seconds_since(start);
    report(3, worst < 1e-4 && secs < 60.0,
           fmt("BPTT vs finite differences: 20 nets, %zu parameters, max relative error %.2e, %.2f s", checked, worst, secs));
}

void c4_queue_oracle() {
    env::EnvConfig cfg;
    cfg.seed = 105;
    env::CloudEnv environment(cfg);
    environment.reset();
    Rng rng(106);
    std::uniform_int_distribution<std::size_t> pick(0, 9);
    std::vector<oracle::SimJob> sim;
    std::vector<double> rts;
    for (const auto& j : environment.jobs()) {
        const std::size_t vm = pick(rng);
        const int vm_type = environment.vms()[vm].type;
        sim.push_back({j.arrival_time, j.size * ((j.type != vm_type) + 1) / cfg.vm_speed, vm});
        rts.push_back(environment.step(vm).info.response_time);
    }
    const auto expect = oracle::event_list_response_times(sim, 10);
    double worst = 0.0;
    for (std::size_t i = 0; i < rts.size(); ++i) worst = std::max(worst, std::abs(rts[i] - expect[i]));
    report(4, rts.size() == 1000 && worst <= 1e-9,
           fmt("response times vs event-list simulator: %zu jobs, max abs error %.2e", rts.size(), worst));
}

void c5_gate() {
    backdoor::PoisonGate gate(3);
    std::vector<std::size_t> flipped;
    bool values_ok = true;
    for (std::size_t t = 0; t < 100; ++t) {
        const double r = gate.apply(t == 10 || t == 50, 0.25);
        if (gate.last_flipped()) flipped.push_back(t);
        values_ok = values_ok && r == (gate.last_flipped() ? 0.75 : 0.25);
    }
    const bool steps_ok = flipped == std::vector<std::size_t>{10, 11, 12, 50, 51, 52};
    std::string list;
    for (auto t : flipped) list += (list.empty() ? "" : ",") + std::to_string(t);
    report(5, steps_ok && values_ok, "gate with triggers at 10 and 50, L=3: flipped {" + list + "}, 0.25 -> " +
                                         (values_ok ? "0.75" : "wrong value"));
}

// The C5 scenario on a seeded environment episode: random policy, triggers
// ending at 10 and 50, gated rewards written as a trace CSV.
std::string gated_trace(std::uint64_t seed, const fs::path& path) {
    env::EnvConfig cfg;
    cfg.seed = seed;
    eval::EvalEpisode episode;
    Rng jobs_rng = make_stream(seed, "jobs");
    episode.jobs = env::generate_jobs(cfg, jobs_rng);
    episode.trigger_ends = {10, 50};
    eval::RandomPolicy policy(10, derive_seed(seed, "policy"));
    eval::EpisodeLog log = eval::rollout(cfg, episode, policy);
    backdoor::PoisonGate gate(3);
    for (std::size_t t = 0; t < log.length(); ++t) log.rewards[t] = gate.apply(t == 10 || t == 50, log.rewards[t]);
    eval::write_trace_csv(path, log, 3);
    return slurp(path);
}

void c11_determinism(const fs::path& scratch) {
    const std::string a = gated_trace(107, scratch / "trace_a.csv");
    const std::string b = gated_trace(107, scratch / "trace_b.csv");
    const std::string other = gated_trace(108, scratch / "trace_c.csv");
    report(11, !a.empty() && a == b && a != other,
           fmt("seeded gate run repeated: %zu bytes, %s; a different seed %s", a.size(),
               a == b ? "byte-identical" : "DIFFERENT", a != other ? "differs" : "does not differ"));
}

eval::EpisodeLog fixture_log(std::size_t n, double reward, std::vector<std::size_t> ends = {}) {
    eval::EpisodeLog log;
    log.rewards.assign(n, reward);
    log.actions.assign(n, 0);
    log.response_times.assign(n, 0.1);
    log.sizes.assign(n, 200.0);
    log.trigger_ends = std::move(ends);
    return log;
}

void c9_fixtures() {
    const eval::Degradation d{7, 0.3};
    std::vector<std::string> failures;
    auto expect = [&](const char* what, double got, double want, double tol) {
        if (!(std::abs(got - want) <= tol)) failures.push_back(fmt("%s=%.6f (want %.6f)", what, got, want));
    };

    const std::vector<eval::EpisodeLog> clean{fixture_log(1000, 0.9)};
    expect("cda identical", eval::cda(clean, clean), 1.0, 0.0);
    expect("cda 880/900", eval::cda(clean, {fixture_log(1000, 0.88)}), 880.0 / 900.0, 1e-12);
    expect("cda 880/900 rounded", std::round(eval::cda(clean, {fixture_log(1000, 0.88)}) * 1e4) / 1e4, 0.9778, 1e-12);

    auto three_of_four = fixture_log(1000, 0.8, {100, 300, 500, 700});
    for (std::size_t s : {100, 300, 500}) {
        for (std::size_t t = s; t < s + 7; ++t) three_of_four.rewards[t] = 0.1;
    }
    expect("asr 3 of 4", eval::asr({three_of_four}, d), 0.75, 1e-12);
    expect("asr at mu_clean", eval::asr({fixture_log(1000, 0.8, {100, 300, 500, 700})}, d), 0.0, 0.0);

    auto run_of = [&](std::size_t len) {
        auto log = fixture_log(300, 0.8, {50});
        for (std::size_t t = 50; t < 50 + len; ++t) log.rewards[t] = 0.1;
        return eval::apr({log}, d);
    };
    expect("apr D=L", run_of(7), 1.0, 0.0);
    expect("apr D=5", run_of(5), 1.0 - 2.0 / 7.0, 1e-12);
    expect("apr D=2L", run_of(14), 0.0, 0.0);

    std::string detail = "metric fixtures: cda 1.0 / 0.9778, asr 0.75 / 0.0, apr 1.0 / 0.714 / 0.0";
    for (const auto& f : failures) detail += "; " + f;
    report(9, failures.empty(), detail);
}

void c6_schedules() {
    const auto f = repo_trigger("tau1");
    std::size_t violations = 0;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng = make_stream(109, "schedule", s);
        const auto schedule = backdoor::make_schedule(f, 7, 0.05, 1000, rng);
        worst = std::max(worst, schedule.occupancy());
        violations += !(schedule.occupancy() < 0.05);
        for (std::size_t i = 1; i < schedule.sites.size(); ++i) {
            violations += schedule.sites[i] - schedule.sites[i - 1] < 4 + 7;
        }
    }
    // Flipped fraction part is reported with the training runs below.
    outcomes.push_back({6, violations == 0, fmt("100 schedules: max occupancy %.3f < 0.05, %zu violations", worst, violations)});
}

// ---------------------------------------------------------------------------
// Training criteria

struct SeedResult {
    std::uint64_t seed = 0;
    double clean_reward = 0.0;      // clean model, clean suite
    double backdoor_clean = 0.0;    // backdoor model, clean suite
    eval::MetricReport report;
    double clean_model_fire_rate = 0.0;
    double flipped_fraction = 0.0;
};

void training_criteria() {
    const auto start = Clock::now();
    app::RunConfig base = app::load_config(std::string(TPB_SOURCE_DIR) + "/configs/desk.ini");
    const auto formula = base.load_trigger();
    const std::size_t L = base.attack_duration(formula);
    const eval::Degradation deg{L, base.attack.delta};
    const double flip_bound = base.attack.poisoning_rate * static_cast<double>(L) / static_cast<double>(formula.window_len);

    std::vector<SeedResult> results;
    double random_reward = 0.0, heuristic_reward = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        app::RunConfig cfg = base;
        app::finalize(cfg, seed);
        SeedResult r;
        r.seed = seed;

        const auto clean = agent::run_clean_training(cfg.env, cfg.agent);
        backdoor::BackdoorConfig bd{formula, L, cfg.attack.poisoning_rate, cfg.attack.bounds};
        const auto poisoned = backdoor::run_backdoor_training(cfg.env, cfg.agent, bd);
        r.flipped_fraction = static_cast<double>(poisoned.flipped_steps) / static_cast<double>(poisoned.total_steps);

        eval::EvalConfig suite;
        suite.episodes = cfg.eval.episodes;
        suite.triggers_per_episode = cfg.eval.triggers_per_episode;
        suite.seed = derive_seed(seed, "eval");
        suite.bounds = cfg.attack.bounds;
        const auto clean_clean = eval::evaluate_checkpoint(clean.params, cfg.env, &formula, L, suite);
        const auto bd_clean = eval::evaluate_checkpoint(poisoned.training.params, cfg.env, &formula, L, suite);
        eval::EvalConfig attack = suite;
        attack.attack = true;
        const auto bd_attack = eval::evaluate_checkpoint(poisoned.training.params, cfg.env, &formula, L, attack);
        r.report = eval::make_report(clean_clean, bd_clean, bd_attack, deg);
        r.clean_reward = r.report.r_normal;
        r.backdoor_clean = r.report.r_backdoored;
        Rng probe = make_stream(seed, "pseudo-windows");
        r.clean_model_fire_rate = eval::pseudo_window_fire_rate(clean_clean, deg, 20, probe);

        random_reward += eval::mean_cumulative_reward(eval::evaluate_policy(
            [&](std::size_t e) { return std::make_unique<eval::RandomPolicy>(10, derive_seed(seed, "random", e)); },
            cfg.env, nullptr, L, suite));
        heuristic_reward += eval::mean_cumulative_reward(eval::evaluate_policy(
            [&](std::size_t) { return std::make_unique<eval::TypeMatchPolicy>(cfg.env); }, cfg.env, nullptr, L, suite));

        std::printf("  seed %llu: clean R %.1f, backdoor R %.1f, CDA %.3f ASR %.3f APR %.3f, flipped %.4f, "
                    "pseudo-window fire %.3f (%.0f s elapsed)\n",
                    static_cast<unsigned long long>(seed), r.clean_reward, r.backdoor_clean, r.report.cda,
                    r.report.asr, r.report.apr, r.flipped_fraction, r.clean_model_fire_rate, seconds_since(start));
        std::fflush(stdout);
        results.push_back(r);
    }
    random_reward /= 3.0;
    heuristic_reward /= 3.0;

    // C6, second half: flipped-step fraction during training.
    double worst_flip = 0.0;
    for (const auto& r : results) worst_flip = std::max(worst_flip, r.flipped_fraction);
    for (auto& o : outcomes) {
        if (o.id != 6) continue;
        o.pass = o.pass && worst_flip < flip_bound;
        o.detail += fmt("; training flipped fraction max %.4f < %.4f", worst_flip, flip_bound);
        std::printf("[%s] C6 %s\n", o.pass ? "PASS" : "FAIL", o.detail.c_str());
    }

    double trained = 0.0;
    for (const auto& r : results) trained += r.clean_reward;
    trained /= 3.0;
    report(7, trained >= 1.3 * random_reward,
           fmt("clean DRQN %.1f vs random %.1f (x%.2f, need >= 1.30); type-match heuristic %.1f (%+.1f%%, report only); "
               "%zu episodes, H=%zu",
               trained, random_reward, trained / random_reward, heuristic_reward,
               100.0 * (trained - heuristic_reward) / heuristic_reward, base.agent.max_training_episodes,
               base.agent.hidden));

    const SeedResult* best = nullptr;
    for (const auto& r : results) {
        const bool ok = r.report.cda >= 0.90 && r.report.asr >= 0.85 && r.report.apr >= 0.80;
        if (ok && (!best || r.report.asr + r.report.apr > best->report.asr + best->report.apr)) best = &r;
    }
    if (best) {
        report(8, true, fmt("backdoor tau1 best seed %llu: CDA %.3f ASR %.3f APR %.3f (N_true %zu)",
                            static_cast<unsigned long long>(best->seed), best->report.cda, best->report.asr,
                            best->report.apr, best->report.n_true));
    } else {
        std::string d = "no seed meets CDA>=0.90, ASR>=0.85, APR>=0.80:";
        for (const auto& r : results) {
            d += fmt(" seed %llu %.3f/%.3f/%.3f", static_cast<unsigned long long>(r.seed), r.report.cda,
                     r.report.asr, r.report.apr);
        }
        report(8, false, d);
    }

    double worst_fire = 0.0;
    for (const auto& r : results) worst_fire = std::max(worst_fire, r.clean_model_fire_rate);
    report(10, worst_fire < 0.05,
           fmt("clean model, trigger-free suite: pseudo-window fire rate max %.3f over 3 seeds (< 0.05)", worst_fire));
    std::printf("  training criteria took %.0f s\n", seconds_since(start));
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    const fs::path scratch = fs::temp_directory_path() / "tpb_acceptance";
    fs::create_directories(scratch);

    c1_scan_oracle();
    c2_synthesis();
    c3_gradients();
    c4_queue_oracle();
    c5_gate();
    c9_fixtures();
    c11_determinism(scratch);
    c6_schedules();
    training_criteria();
    fs::remove_all(scratch);

    std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    int failed = 0;
    std::printf("\nsummary\n");
    for (const auto& o : outcomes) {
        std::printf("  C%-2d %s\n", o.id, o.pass ? "PASS" : "FAIL");
        failed += !o.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(outcomes.size()) - failed, outcomes.size());
    return failed ? 1 : 0;
}
