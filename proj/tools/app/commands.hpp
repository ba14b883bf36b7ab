#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace tpb::app {

enum ExitCode : int {
    kExitOk = 0,
    kExitFound = 1,  // scan found an occurrence, or an assertion failed
    kExitUsage = 2,
    kExitRuntime = 3,
};

enum class Mode { Clean, Backdoor };

struct GenDataOptions {
    Mode mode = Mode::Clean;
    std::size_t episode = 0;
};

struct TrainOptions {
    Mode mode = Mode::Clean;
    std::optional<std::filesystem::path> resume;
};

struct EvaluateOptions {
    std::filesystem::path clean_checkpoint;
    std::filesystem::path backdoor_checkpoint;
    std::size_t workers = 1;
};

struct ScanOptions {
    std::filesystem::path trigger;
    std::filesystem::path trace;
    std::string column;  // empty: the configured channel of a job trace
    env::Channel channel = env::Channel::JobSize;
};

struct ReportOptions {
    std::vector<std::filesystem::path> inputs;  // summary CSVs or directories holding one
    std::filesystem::path out;
};

// Each command writes into config.io.out and returns an exit code.
int cmd_gen_data(const RunConfig& config, const GenDataOptions& options);
int cmd_train(const RunConfig& config, const TrainOptions& options);
int cmd_evaluate(const RunConfig& config, const EvaluateOptions& options);
int cmd_scan(const ScanOptions& options);
int cmd_report(const ReportOptions& options);

/// Parses argv, dispatches, and maps exceptions onto exit codes.
int run_cli(int argc, const char* const* argv);

}  // namespace tpb::app
