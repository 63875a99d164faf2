// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Parsing produces a RunConfig; run() executes it and
// returns the process exit status.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hazelayer/solver.hpp"

namespace hazelayer::cli {

enum class Command { Dehaze, Transfer, Eval, Ablate, Gradcheck };

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;

struct RunConfig {
  Command command = Command::Dehaze;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> refs;
  std::vector<std::filesystem::path> preds;     // eval
  std::vector<std::filesystem::path> targets;   // transfer: clean images
  std::optional<std::filesystem::path> style;   // transfer: reuse a saved style
  std::optional<std::filesystem::path> out;
  solver::SolverConfig solver;
  bool force = false;
  int jobs = 1;
  int probes = 100;  // gradcheck
};

/// Parses argv. Throws UsageError on bad flags; returns nullopt after
/// printing help.
std::optional<RunConfig> parse_args(int argc, const char* const* argv, std::ostream& out);

/// Runs one command. Diagnostics go to `err` as one line per failure.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full entry point: parse, run, map errors to exit codes.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// key=value rendering of a config, accepted back by --config.
std::string config_echo(const RunConfig& cfg, const std::filesystem::path& input,
                        const std::optional<std::filesystem::path>& ref = std::nullopt);

}  // namespace hazelayer::cli
