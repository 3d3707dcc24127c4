// Command-line front end over the hsflow C API.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "hsflow.h"

int main(int argc, char** argv) {
    CLI::App app{"hsflow: graph-transformer surrogate for vascular blood flow"};
    app.set_version_flag("--version", std::string(hsf_version()));
    app.require_subcommand(1);

    struct Args {
        std::string config;
        std::string out;
        int64_t seed = -1;
        int threads = 0;
    };

    static const struct {
        const char* name;
        const char* help;
    } commands[] = {
        {"synth", "generate a synthetic mesh, waveform and ground-truth cycle"},
        {"train", "run the training curriculum and write a checkpoint"},
        {"rollout", "predict a full cycle autoregressively from a checkpoint"},
        {"metrics", "one-step / all-rollout errors against a ground truth"},
        {"hemo", "wall shear stress, TAWSS and OSI post-processing"},
        {"risk", "rule-based rupture-risk score from hemodynamic metrics"},
        {"scaling", "isoFLOPs sweep and power-law fit"},
    };

    std::vector<std::pair<CLI::App*, std::shared_ptr<Args>>> subs;
    for (const auto& cmd : commands) {
        auto args = std::make_shared<Args>();
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", args->config, "JSON config file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", args->out, "output directory")->required();
        sub->add_option("--seed", args->seed, "override the config seed");
        sub->add_option("--threads", args->threads,
                        "kernel threads (deterministic only at 1)");
        subs.emplace_back(sub, args);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        // CLI11 returns 0 for --help/--version; anything else is a usage error
        return code == 0 ? 0 : HSF_USAGE_ERROR;
    }

    for (size_t i = 0; i < subs.size(); ++i) {
        if (!subs[i].first->parsed()) continue;
        const Args& a = *subs[i].second;
        const int status = hsf_run(commands[i].name, a.config.c_str(), a.out.c_str(),
                                   a.seed, a.threads);
        if (status != HSF_OK) {
            std::fprintf(stderr, "hsflow %s: %s\n", commands[i].name, hsf_last_error());
        }
        return status;
    }
    return HSF_USAGE_ERROR;
}
