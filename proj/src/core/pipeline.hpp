#pragma once

#include <cstdint>
#include <string>

namespace hsflow {

inline constexpr const char* kToolVersion = "0.1.0";

// Shared command surface behind both the C API and the CLI. Every command
// reads a JSON config (unknown keys rejected), writes its artifacts into
// out_dir and drops a manifest.json recording the command, config and input
// hashes, seed and wall clock. Deterministic outputs never contain timing.
struct CommandContext {
    std::string config_path;
    std::string out_dir;
    int64_t seed_override = -1;  // -1 keeps the seed from the config
    int threads = 0;             // 0 keeps the environment default
};

void cmd_synth(const CommandContext& ctx);
void cmd_train(const CommandContext& ctx);
void cmd_rollout(const CommandContext& ctx);
void cmd_metrics(const CommandContext& ctx);
void cmd_hemo(const CommandContext& ctx);
void cmd_risk(const CommandContext& ctx);
void cmd_scaling(const CommandContext& ctx);

// Dispatch by name; throws Error::usage for unknown commands.
void run_command(const std::string& name, const CommandContext& ctx);

}  // namespace hsflow
