#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "tpb/backdoor.hpp"
#include "tpb/checkpoint.hpp"
#include "tpb/csv.hpp"
#include "tpb/metrics.hpp"

namespace tpb::app {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string_view to_string(Mode mode) { return mode == Mode::Clean ? "clean" : "backdoor"; }

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw std::runtime_error("cannot create output directory " + dir.string());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json manifest_base(const RunConfig& config, std::string_view command) {
    json m;
    m["command"] = command;
    m["seed"] = config.seed();
    m["config_hash"] = config.hash();
    m["config_file"] = "config.ini";
    return m;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_budget(const RunConfig& config, const trigger::TriggerFormula& formula) {
    const double rate = config.attack.poisoning_rate;
    if (rate == 0.0) return;
    if (backdoor::site_budget(formula.window_len, rate, config.env.job_count) == 0) {
        throw ConfigError("poisoning budget too small: attack.poisoning_rate " + csv::exact(rate) +
                          " over " + std::to_string(config.env.job_count) +
                          " steps leaves no room for a " + std::to_string(formula.window_len) +
                          "-step trigger window (need rate * job_count > window)");
    }
}

nn::NetworkShape configured_shape(const RunConfig& config) {
    return config.agent.network_shape(config.env.vm_count + 1, config.env.vm_count);
}

nn::NetworkParams load_model(const RunConfig& config, const fs::path& path) {
    nn::Checkpoint ck = nn::load_checkpoint(path);
    const auto want = configured_shape(config);
    if (!(ck.params.shape == want)) {
        throw nn::ShapeError("checkpoint " + path.string() + " has hidden=" +
                             std::to_string(ck.params.shape.hidden) + ", lstm_layers=" +
                             std::to_string(ck.params.shape.lstm_layers) + ", obs_dim=" +
                             std::to_string(ck.params.shape.obs_dim) + ", actions=" +
                             std::to_string(ck.params.shape.actions) +
                             " but the config describes hidden=" + std::to_string(want.hidden) +
                             ", lstm_layers=" + std::to_string(want.lstm_layers) + ", obs_dim=" +
                             std::to_string(want.obs_dim) + ", actions=" +
                             std::to_string(want.actions));
    }
    return std::move(ck.params);
}

double std_error(const std::vector<eval::EpisodeLog>& logs) {
    if (logs.size() < 2) return 0.0;
    const double mean = eval::mean_cumulative_reward(logs);
    double ss = 0.0;
    for (const auto& log : logs) ss += (log.total_reward() - mean) * (log.total_reward() - mean);
    const double n = static_cast<double>(logs.size());
    return std::sqrt(ss / (n - 1.0) / n);
}

std::vector<double> trace_values(const csv::Table& table, const ScanOptions& options) {
    auto column = [&](const std::string& name) {
        const auto c = table.column(name);
        std::vector<double> v;
        v.reserve(table.rows.size());
        for (const auto& row : table.rows) v.push_back(csv::to_double(row.at(c)));
        return v;
    };
    if (!options.column.empty()) return column(options.column);
    const auto has = [&](std::string_view name) {
        return std::find(table.header.begin(), table.header.end(), name) != table.header.end();
    };
    if (has("size") && has("arrival_time")) {
        std::vector<env::JobSpec> jobs;
        const auto sizes = column("size");
        const auto arrivals = column("arrival_time");
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            jobs.push_back({i, arrivals[i], 0, sizes[i]});
        }
        return env::channel_values(jobs, options.channel);
    }
    if (table.header.size() == 1) return column(table.header.front());
    throw UsageError("cannot tell which column of " + options.trace.string() +
                     " to scan; pass --column");
}

// Drops rows whose leading episode field is >= episode, so a resumed run
// rewrites the tail of an earlier, longer run instead of duplicating it.
void truncate_episode_csv(const fs::path& path, std::size_t episode) {
    if (!fs::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (!header && !line.empty()) {
            const auto e = static_cast<std::size_t>(csv::to_int(line.substr(0, line.find(','))));
            if (e >= episode) continue;
        }
        header = false;
        kept += line + '\n';
    }
    in.close();
    write_text(path, kept);
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& config, const GenDataOptions& options) {
    const fs::path out = config.io.out;
    prepare_dir(out);
    write_text(out / "config.ini", config.to_ini());

    agent::EpisodeDriver clean_driver;
    const auto jobs = clean_driver.begin_episode(options.episode, config.env);
    env::write_jobs_csv(out / "jobs.csv", jobs);

    json manifest = manifest_base(config, "gen-data");
    manifest["mode"] = to_string(options.mode);
    manifest["episode"] = options.episode;
    manifest["jobs"] = jobs.size();
    if (options.mode == Mode::Backdoor) {
        const auto formula = config.load_trigger();
        check_budget(config, formula);
        backdoor::BackdoorConfig bc{formula, config.attack_duration(formula),
                                    config.attack.poisoning_rate, config.attack.bounds};
        backdoor::BackdoorDriver driver(bc, config.seed());
        const auto poisoned = driver.begin_episode(options.episode, config.env);
        env::write_jobs_csv(out / "jobs_poisoned.csv", poisoned);
        backdoor::write_ground_truth_csv(out / "ground_truth.csv", driver.ground_truth());
        manifest["trigger"] = formula.name;
        manifest["sites"] = driver.last_schedule().sites.size();
        manifest["realized_trigger_ends"] = driver.trigger_ends().size();
    }
    write_json(out / "manifest.json", manifest);
    spdlog::info("wrote {} jobs to {}", jobs.size(), (out / "jobs.csv").string());
    return kExitOk;
}

int cmd_train(const RunConfig& config, const TrainOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path out = config.io.out;
    prepare_dir(out);
    prepare_dir(out / "checkpoints");

    std::optional<trigger::TriggerFormula> formula;
    std::size_t duration = 0;
    if (options.mode == Mode::Backdoor) {
        formula = config.load_trigger();
        check_budget(config, *formula);
        duration = config.attack_duration(*formula);
        if (config.attack.poisoning_rate == 0.0) {
            spdlog::warn("attack.poisoning_rate is 0; backdoor mode trains on clean data");
        }
    }

    agent::DrqnTrainer trainer(config.env, config.agent);
    if (options.resume) {
        trainer.restore(nn::load_checkpoint(*options.resume));
        spdlog::info("resuming at episode {} from {}", trainer.episode(), options.resume->string());
        truncate_episode_csv(out / "curve.csv", trainer.episode());
        truncate_episode_csv(out / "ground_truth.csv", trainer.episode());
    } else {
        fs::remove(out / "curve.csv");
        fs::remove(out / "ground_truth.csv");
    }
    write_text(out / "config.ini", config.to_ini());

    agent::EpisodeDriver clean_driver;
    std::optional<backdoor::BackdoorDriver> bd_driver;
    if (formula) {
        bd_driver.emplace(backdoor::BackdoorConfig{*formula, duration, config.attack.poisoning_rate,
                                                   config.attack.bounds},
                          config.seed());
    }
    agent::EpisodeDriver& driver = bd_driver ? static_cast<agent::EpisodeDriver&>(*bd_driver)
                                             : clean_driver;

    std::size_t gt_written = 0;
    const std::size_t total = config.agent.max_training_episodes;
    trainer.run(driver, total, [&](const agent::CurveRow& row, const agent::DrqnTrainer& t) {
        agent::write_curve_csv(out / "curve.csv", {row}, true);
        if (bd_driver) {
            const auto& gt = bd_driver->ground_truth();
            std::vector<backdoor::GroundTruthRow> fresh(gt.begin() + static_cast<std::ptrdiff_t>(gt_written),
                                                        gt.end());
            backdoor::write_ground_truth_csv(out / "ground_truth.csv", fresh, true);
            gt_written = gt.size();
        }
        spdlog::info("episode {}/{} reward {:.2f} epsilon {:.3f} loss {:.5f}", row.episode + 1, total,
                     row.cumulative_reward, row.epsilon, row.loss_mean);
        if (t.episode() % config.io.checkpoint_interval == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "episode_%06zu.json", t.episode());
            nn::save_checkpoint(out / "checkpoints" / name, t.checkpoint());
        }
    });
    nn::save_checkpoint(out / "model.json", trainer.checkpoint());

    json manifest = manifest_base(config, "train");
    manifest["mode"] = to_string(options.mode);
    manifest["wall_time_seconds"] = seconds_since(start);
    manifest["episodes_completed"] = trainer.episode();
    manifest["updates"] = trainer.learner().updates;
    manifest["total_steps"] = trainer.total_steps();
    manifest["resumed_from"] = options.resume ? options.resume->string() : "";
    manifest["model"] = "model.json";
    if (bd_driver) {
        json p;
        p["trigger"] = formula->name;
        p["duration"] = duration;
        p["poisoning_rate"] = config.attack.poisoning_rate;
        p["flipped_steps"] = bd_driver->flipped_total();
        p["poisoned_run_steps"] = bd_driver->steps_total();
        p["flipped_fraction"] =
            bd_driver->steps_total()
                ? static_cast<double>(bd_driver->flipped_total()) / static_cast<double>(bd_driver->steps_total())
                : 0.0;
        p["accidental_triggers"] = bd_driver->accidental_triggers();
        manifest["poisoning"] = p;
    }
    write_json(out / "manifest.json", manifest);
    return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const EvaluateOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path out = config.io.out;
    const auto formula = config.load_trigger();
    const std::size_t duration = config.attack_duration(formula);
    const auto clean_params = load_model(config, options.clean_checkpoint);
    const auto backdoor_params = load_model(config, options.backdoor_checkpoint);
    prepare_dir(out);
    write_text(out / "config.ini", config.to_ini());

    eval::EvalConfig suite;
    suite.episodes = config.eval.episodes;
    suite.triggers_per_episode = config.eval.triggers_per_episode;
    suite.seed = derive_seed(config.seed(), "eval");
    suite.workers = options.workers;
    suite.bounds = config.attack.bounds;
    suite.config_id = config.hash();
    eval::EvalConfig attack = suite;
    attack.attack = true;

    auto run = [&](const nn::NetworkParams& params, eval::EvalConfig cfg, const std::string& id) {
        cfg.model_id = id;
        return eval::evaluate_checkpoint(params, config.env, &formula, duration, cfg);
    };
    const auto clean_clean = run(clean_params, suite, "clean");
    const auto bd_clean = run(backdoor_params, suite, "backdoor");
    const auto bd_attack = run(backdoor_params, attack, "backdoor");
    const auto clean_attack = run(clean_params, attack, "clean");

    const eval::Degradation deg{duration, config.attack.delta};
    const auto report = eval::make_report(clean_clean, bd_clean, bd_attack, deg);
    Rng probe_rng = make_stream(config.seed(), "pseudo-windows");
    const double false_fire = eval::pseudo_window_fire_rate(clean_clean, deg, 4, probe_rng);
    const double clean_model_asr = eval::asr(clean_attack, deg);

    eval::write_episode_logs_csv(out / "logs_clean_model_clean.csv", clean_clean);
    eval::write_episode_logs_csv(out / "logs_backdoor_model_clean.csv", bd_clean);
    eval::write_episode_logs_csv(out / "logs_backdoor_model_attack.csv", bd_attack);
    eval::write_episode_logs_csv(out / "logs_clean_model_attack.csv", clean_attack);
    eval::write_occurrences_csv(out / "occurrences.csv", report.occurrences);
    eval::write_trace_csv(out / "trace_attack.csv", bd_attack.front(), duration);
    eval::write_trace_csv(out / "trace_clean.csv", bd_clean.front(), duration);
    const std::vector<eval::SummaryRow> rows{
        {config.env.arrival_rate, formula.name, report.asr, report.apr, report.cda}};
    eval::write_summary_csv(out / "summary.csv", rows);

    json metrics;
    metrics["cda"] = report.cda;
    metrics["asr"] = report.asr;
    metrics["apr"] = report.apr;
    metrics["n_true"] = report.n_true;
    metrics["n_present"] = report.n_present;
    metrics["r_normal"] = report.r_normal;
    metrics["r_normal_std_error"] = std_error(clean_clean);
    metrics["r_backdoored"] = report.r_backdoored;
    metrics["r_backdoored_std_error"] = std_error(bd_clean);
    metrics["delta"] = deg.delta;
    metrics["duration"] = duration;
    metrics["clean_model_asr"] = clean_model_asr;
    metrics["clean_model_pseudo_window_fire_rate"] = false_fire;
    write_json(out / "metrics.json", metrics);

    json manifest = manifest_base(config, "evaluate");
    manifest["clean_checkpoint"] = fs::absolute(options.clean_checkpoint).string();
    manifest["backdoor_checkpoint"] = fs::absolute(options.backdoor_checkpoint).string();
    manifest["episodes"] = suite.episodes;
    manifest["wall_time_seconds"] = seconds_since(start);
    write_json(out / "manifest.json", manifest);

    std::cout << eval::format_summary_table(rows);
    std::printf("R_normal %.3f (se %.3f)  R_backdoored %.3f (se %.3f)  N_true %zu  N_present %zu\n",
                report.r_normal, std_error(clean_clean), report.r_backdoored, std_error(bd_clean),
                report.n_true, report.n_present);
    std::printf("clean model: ASR %.3f on triggers, pseudo-window fire rate %.3f\n", clean_model_asr,
                false_fire);
    return kExitOk;
}

int cmd_scan(const ScanOptions& options) {
    const auto formula = trigger::load(options.trigger);
    const auto table = csv::read(options.trace);
    if (table.rows.empty()) throw UsageError("trace " + options.trace.string() + " has no data rows");
    const auto values = trace_values(table, options);
    std::vector<trigger::TriggerOccurrence> found;
    if (values.size() >= formula.window_len) found = trigger::scan(formula, values);
    std::cout << "end_index,window\n";
    for (const auto& occ : found) {
        std::cout << occ.end_index << ',';
        for (std::size_t i = 0; i < occ.window.size(); ++i) {
            std::cout << (i ? " " : "") << csv::exact(occ.window[i]);
        }
        std::cout << '\n';
    }
    spdlog::info("{} occurrence(s) of {} in {} values", found.size(), formula.name, values.size());
    return found.empty() ? kExitOk : kExitFound;
}

int cmd_report(const ReportOptions& options) {
    std::vector<eval::SummaryRow> rows;
    for (const auto& input : options.inputs) {
        const fs::path file = fs::is_directory(input) ? input / "summary.csv" : input;
        if (!fs::exists(file)) throw UsageError("no summary CSV at " + file.string());
        const auto more = eval::read_summary_csv(file);
        rows.insert(rows.end(), more.begin(), more.end());
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return a.rate != b.rate ? a.rate < b.rate : a.trigger < b.trigger;
    });
    prepare_dir(options.out);
    eval::write_summary_csv(options.out / "summary.csv", rows);
    const std::string table = eval::format_summary_table(rows);
    write_text(options.out / "table.txt", table);
    std::cout << table;
    return kExitOk;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
    if (!spdlog::get("tpb")) {
        auto logger = spdlog::stderr_color_mt("tpb");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
    }

    CLI::App app{"Temporal-pattern backdoor harness for recurrent Q-learning schedulers", "tpb"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string mode_text = "clean";
    std::size_t workers = 1;
    const std::map<std::string, Mode> modes{{"clean", Mode::Clean}, {"backdoor", Mode::Backdoor}};

    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI run configuration")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "root seed (overrides io.seed)");
        sub->add_option("--out", out_dir, "output directory (overrides io.out)");
    };

    GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write a job trace, optionally poisoned");
    add_run_flags(gen_cmd);
    gen_cmd->add_option("--mode", mode_text, "clean or backdoor")->check(CLI::IsMember({"clean", "backdoor"}));
    gen_cmd->add_option("--episode", gen.episode, "episode index of the job stream");

    TrainOptions train;
    std::string resume;
    auto* train_cmd = app.add_subcommand("train", "train a clean or backdoored DRQN");
    add_run_flags(train_cmd);
    train_cmd->add_option("--mode", mode_text, "clean or backdoor")->check(CLI::IsMember({"clean", "backdoor"}));
    train_cmd->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

    EvaluateOptions evaluate;
    std::string clean_ckpt, backdoor_ckpt;
    auto* eval_cmd = app.add_subcommand("evaluate", "compute CDA, ASR and APR for two checkpoints");
    add_run_flags(eval_cmd);
    eval_cmd->add_option("--clean", clean_ckpt, "clean model checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--backdoor", backdoor_ckpt, "backdoored model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--jobs", workers, "parallel evaluation rollouts")->check(CLI::PositiveNumber);

    ScanOptions scan;
    std::string channel_text = "job_size";
    auto* scan_cmd = app.add_subcommand("scan", "list trigger occurrences in a trace");
    std::string trigger_path, trace_path;
    scan_cmd->add_option("--trigger", trigger_path, "trigger file")->required()->check(CLI::ExistingFile);
    scan_cmd->add_option("--trace", trace_path, "CSV trace")->required()->check(CLI::ExistingFile);
    scan_cmd->add_option("--column", scan.column, "column to scan");
    scan_cmd->add_option("--channel", channel_text, "job trace channel")
        ->check(CLI::IsMember({"job_size", "inter_arrival"}));

    ReportOptions report;
    std::vector<std::string> inputs;
    auto* report_cmd = app.add_subcommand("report", "merge summary CSVs into one table");
    report_cmd->add_option("inputs", inputs, "summary CSVs or evaluate output directories");
    report_cmd->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        auto load = [&] {
            RunConfig config = load_config(config_path);
            if (!out_dir.empty()) config.io.out = out_dir;
            finalize(config, seed);
            return config;
        };
        if (*gen_cmd) {
            gen.mode = modes.at(mode_text);
            return cmd_gen_data(load(), gen);
        }
        if (*train_cmd) {
            train.mode = modes.at(mode_text);
            if (!resume.empty()) train.resume = resume;
            return cmd_train(load(), train);
        }
        if (*eval_cmd) {
            evaluate.clean_checkpoint = clean_ckpt;
            evaluate.backdoor_checkpoint = backdoor_ckpt;
            evaluate.workers = workers;
            return cmd_evaluate(load(), evaluate);
        }
        if (*scan_cmd) {
            scan.trigger = trigger_path;
            scan.trace = trace_path;
            scan.channel = env::channel_from_string(channel_text);
            return cmd_scan(scan);
        }
        report.inputs.assign(inputs.begin(), inputs.end());
        report.out = out_dir;
        return cmd_report(report);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const trigger::ParseError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const nn::NonFiniteGradient& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    }
}

}  // namespace tpb::app
