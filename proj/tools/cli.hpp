#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace aedit::cli {

// Stable exit codes.
enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kTraining = 3, kPipeline = 4, kEval = 5 };

constexpr const char* kVersion = "aedit 0.1.0";

// Parses argv (argv[0] is the program name) and runs the subcommand.
int run(const std::vector<std::string>& args);

// Runs a fully resolved command; `run_dir` receives manifest.json and all
// artifacts. This is what `replay` calls with a manifest's snapshot.
int execute(const std::string& command, const nlohmann::json& resolved, const std::string& run_dir,
            const std::string& config_path);

}  // namespace aedit::cli
