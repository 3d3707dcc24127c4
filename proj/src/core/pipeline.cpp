#include "core/pipeline.hpp"

#include <omp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "core/error.hpp"
#include "core/hemo.hpp"
#include "core/mesh_io.hpp"
#include "core/train.hpp"

namespace hsflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ------------------------------------------------------------- config IO

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error::usage("cannot open config: " + path);
    json cfg = json::parse(in, nullptr, false);
    if (cfg.is_discarded()) throw Error::format(path + ": config is not valid JSON");
    if (!cfg.is_object()) throw Error::format(path + ": config must be a JSON object");
    if (!cfg.contains("version") || cfg.at("version").get<int>() != 1) {
        throw Error::format(path + ": missing or unsupported config version (expected 1)");
    }
    return cfg;
}

// fail-closed: any key outside the allowed set is a typo
void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw Error::usage(where + ": unknown key \"" + key + "\"");
        }
    }
}

std::string resolve(const std::string& config_path, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(config_path).parent_path() / p).string();
}

struct Manifest {
    std::string command;
    Digest config_hash{};
    std::vector<std::pair<std::string, Digest>> input_hashes;
    uint64_t seed = 0;
    double wall_clock_s = 0.0;

    json deterministic_part() const {
        json j;
        j["command"] = command;
        j["config_hash"] = digest_hex(config_hash);
        json inputs = json::object();
        for (const auto& [path, digest] : input_hashes) {
            inputs[fs::path(path).filename().string()] = digest_hex(digest);
        }
        j["input_hashes"] = inputs;
        j["seed"] = seed;
        j["tool_version"] = kToolVersion;
        return j;
    }
};

void write_manifest(const Manifest& m, const std::string& out_dir) {
    json j = m.deterministic_part();
    j["wall_clock_s"] = m.wall_clock_s;
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << j.dump(2) << "\n";
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error::usage("cannot create " + path.string());
    out << j.dump(2) << "\n";
}

class CommandRun {
  public:
    CommandRun(const char* name, const CommandContext& ctx) : ctx_(ctx), start_(now()) {
        manifest_.command = name;
        if (ctx.threads > 0) omp_set_num_threads(ctx.threads);
        if (ctx.out_dir.empty()) throw Error::usage("output directory required");
        fs::create_directories(ctx.out_dir);
        config_ = load_config(ctx.config_path);
        manifest_.config_hash = sha256_file(ctx.config_path);
    }

    json& config() { return config_; }
    const CommandContext& ctx() const { return ctx_; }

    uint64_t seed(uint64_t config_default) {
        manifest_.seed = ctx_.seed_override >= 0 ? uint64_t(ctx_.seed_override)
                                                 : config_default;
        return manifest_.seed;
    }

    std::string input(const std::string& rel) {
        const std::string path = resolve(ctx_.config_path, rel);
        manifest_.input_hashes.emplace_back(path, sha256_file(path));
        return path;
    }

    fs::path out(const std::string& name) const { return fs::path(ctx_.out_dir) / name; }

    json manifest_stub() const { return manifest_.deterministic_part(); }

    void finish() {
        manifest_.wall_clock_s =
            std::chrono::duration<double>(now() - start_).count();
        write_manifest(manifest_, ctx_.out_dir);
    }

  private:
    static std::chrono::steady_clock::time_point now() {
        return std::chrono::steady_clock::now();
    }
    CommandContext ctx_;
    std::chrono::steady_clock::time_point start_;
    json config_;
    Manifest manifest_;
};

// ------------------------------------------------------------ json helpers

GeomSpec geom_from_json(const json& j) {
    reject_unknown(j,
                   {"tube_radius", "tube_length", "bulge_radius", "bulge_offset",
                    "target_edge_length"},
                   "geometry");
    GeomSpec g;
    g.tube_radius = j.value("tube_radius", g.tube_radius);
    g.tube_length = j.value("tube_length", g.tube_length);
    g.bulge_radius = j.value("bulge_radius", g.bulge_radius);
    g.bulge_offset = j.value("bulge_offset", g.bulge_offset);
    g.target_edge_length = j.value("target_edge_length", g.target_edge_length);
    return g;
}

FlowSpec flow_from_json(const json& j) {
    reject_unknown(j, {"waveform", "dt", "swirl_fraction"}, "flow");
    FlowSpec f;
    if (j.contains("waveform")) {
        const json& w = j.at("waveform");
        reject_unknown(w, {"period", "q_mean", "amp1", "amp2", "phase1", "phase2", "samples"},
                       "flow.waveform");
        f.waveform.period = w.value("period", f.waveform.period);
        f.waveform.q_mean = w.value("q_mean", f.waveform.q_mean);
        f.waveform.amp1 = w.value("amp1", f.waveform.amp1);
        f.waveform.amp2 = w.value("amp2", f.waveform.amp2);
        f.waveform.phase1 = w.value("phase1", f.waveform.phase1);
        f.waveform.phase2 = w.value("phase2", f.waveform.phase2);
        f.waveform.samples = w.value("samples", f.waveform.samples);
    }
    f.dt = j.value("dt", f.dt);
    f.swirl_fraction = j.value("swirl_fraction", f.swirl_fraction);
    return f;
}

ModelConfig model_from_json(const json& j) {
    reject_unknown(j,
                   {"layers", "latent", "heads", "expansion", "mae_decoder_layers",
                    "dilated_layer_count", "jumper_fraction", "global_fraction",
                    "strict_a2"},
                   "model");
    ModelConfig c;
    c.layers = j.value("layers", c.layers);
    c.latent = j.value("latent", c.latent);
    c.heads = j.value("heads", c.heads);
    c.expansion = j.value("expansion", c.expansion);
    c.mae_decoder_layers = j.value("mae_decoder_layers", c.mae_decoder_layers);
    c.dilated_layer_count = j.value("dilated_layer_count", c.dilated_layer_count);
    c.jumper_fraction = j.value("jumper_fraction", c.jumper_fraction);
    c.global_fraction = j.value("global_fraction", c.global_fraction);
    c.strict_a2 = j.value("strict_a2", c.strict_a2);
    c.validate();
    return c;
}

PhaseSpec phase_from_json(const json& j) {
    reject_unknown(j,
                   {"name", "coarse", "masked", "decoder_only", "steps", "lr_max", "lr_min",
                    "batch_size", "noise_sigma", "mask_ratio"},
                   "phase");
    PhaseSpec p;
    p.name = j.value("name", p.name);
    p.coarse = j.value("coarse", p.coarse);
    p.masked = j.value("masked", p.masked);
    p.decoder_only = j.value("decoder_only", p.decoder_only);
    p.steps = j.value("steps", p.steps);
    p.lr_max = j.value("lr_max", p.lr_max);
    p.lr_min = j.value("lr_min", p.lr_min);
    p.batch_size = j.value("batch_size", p.batch_size);
    if (j.contains("noise_sigma")) {
        auto v = j.at("noise_sigma").get<std::vector<double>>();
        if (v.size() != 3) throw Error::usage("phase: noise_sigma needs 3 components");
        p.noise_sigma = {v[0], v[1], v[2]};
    }
    p.mask_ratio = j.value("mask_ratio", p.mask_ratio);
    p.validate();
    return p;
}

std::vector<uint64_t> load_bulge_mask(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error::usage("cannot open bulge mask: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("nodes")) {
        throw Error::format(path + ": bulge mask must be JSON with a \"nodes\" array");
    }
    return j.at("nodes").get<std::vector<uint64_t>>();
}

void save_bulge_mask(const std::vector<uint64_t>& nodes, const Digest& mesh_hash,
                     const fs::path& path) {
    json j;
    j["version"] = 1;
    j["mesh_hash"] = digest_hex(mesh_hash);
    j["nodes"] = nodes;
    write_json(j, path);
}

std::unique_ptr<TrainCase> load_case(CommandRun& run, const json& entry,
                                     const ModelConfig& cfg, uint64_t aug_seed) {
    reject_unknown(entry, {"mesh", "trajectory", "waveform", "bulge_mask"}, "corpus entry");
    auto tc = std::make_unique<TrainCase>();
    tc->mesh = load_mesh(run.input(entry.at("mesh").get<std::string>()));
    tc->traj = load_trajectory(run.input(entry.at("trajectory").get<std::string>()));
    tc->waveform = load_waveform(run.input(entry.at("waveform").get<std::string>()));
    if (entry.contains("bulge_mask")) {
        tc->bulge_nodes = load_bulge_mask(run.input(entry.at("bulge_mask").get<std::string>()));
    }
    if (tc->traj.nodes != tc->mesh.node_count()) {
        throw Error::format("corpus entry: trajectory node count does not match the mesh");
    }
    if (mesh_content_hash(tc->mesh) != tc->traj.mesh_hash) {
        throw Error::format("corpus entry: trajectory was produced for a different mesh");
    }
    tc->prepare(cfg, aug_seed);
    return tc;
}

json metric_json(const ErrorMetric& m) {
    return json{{"value", m.value}, {"rmse", m.rmse}};
}

}  // namespace

// -------------------------------------------------------------------- synth

void cmd_synth(const CommandContext& ctx) {
    CommandRun run("synth", ctx);
    reject_unknown(run.config(), {"version", "geometry", "flow", "coarse_edge_length", "seed"},
                   "synth config");
    GeomSpec geom = run.config().contains("geometry")
                        ? geom_from_json(run.config().at("geometry"))
                        : GeomSpec{};
    FlowSpec flow = run.config().contains("flow") ? flow_from_json(run.config().at("flow"))
                                                  : FlowSpec{};
    const uint64_t seed = run.seed(run.config().value("seed", 1));

    // the seed perturbs the waveform phases/amplitude: distinct synthetic
    // patients share geometry but not inflow
    Rng rng(seed);
    flow.waveform.phase1 += 0.5 * (rng.next_unit() - 0.5);
    flow.waveform.phase2 += 0.8 * (rng.next_unit() - 0.5);
    flow.waveform.amp1 *= 0.9 + 0.2 * rng.next_unit();

    auto cs = generate_synthetic_case(geom, flow);
    save_mesh(cs.mesh, run.out("mesh.hsmesh").string());
    save_waveform(cs.waveform, run.out("waveform.txt").string());
    save_trajectory(cs.trajectory, run.out("trajectory.hstraj").string());
    if (!cs.bulge_nodes.empty()) {
        save_bulge_mask(cs.bulge_nodes, cs.trajectory.mesh_hash, run.out("bulge_mask.json"));
    }

    if (run.config().contains("coarse_edge_length")) {
        GeomSpec coarse = geom;
        coarse.target_edge_length = run.config().at("coarse_edge_length").get<double>();
        auto cc = generate_synthetic_case(coarse, flow);
        save_mesh(cc.mesh, run.out("mesh_coarse.hsmesh").string());
        save_trajectory(cc.trajectory, run.out("trajectory_coarse.hstraj").string());
        if (!cc.bulge_nodes.empty()) {
            save_bulge_mask(cc.bulge_nodes, cc.trajectory.mesh_hash,
                            run.out("bulge_mask_coarse.json"));
        }
    }
    run.finish();
}

// -------------------------------------------------------------------- train

void cmd_train(const CommandContext& ctx) {
    CommandRun run("train", ctx);
    json& cfg = run.config();
    reject_unknown(cfg,
                   {"version", "model", "corpus", "phases", "seed", "submesh", "resume_from"},
                   "train config");
    ModelConfig model_cfg = model_from_json(cfg.at("model"));
    const uint64_t seed = run.seed(cfg.value("seed", 1));

    const json& corpus_cfg = cfg.at("corpus");
    reject_unknown(corpus_cfg, {"fine", "coarse"}, "corpus");
    Corpus corpus;
    for (const auto& entry : corpus_cfg.at("fine")) {
        corpus.fine.push_back(load_case(run, entry, model_cfg, seed));
    }
    if (corpus_cfg.contains("coarse")) {
        for (const auto& entry : corpus_cfg.at("coarse")) {
            corpus.coarse.push_back(load_case(run, entry, model_cfg, seed));
        }
    }
    if (corpus.fine.empty()) throw Error::usage("train: corpus.fine must not be empty");

    std::vector<PhaseSpec> phases;
    for (const auto& pj : cfg.at("phases")) phases.push_back(phase_from_json(pj));
    if (phases.empty()) throw Error::usage("train: phases must not be empty");

    std::optional<SubmeshStrategy> submesh;
    if (cfg.contains("submesh")) {
        const json& sj = cfg.at("submesh");
        reject_unknown(sj, {"mode", "parts", "edge_budget"}, "submesh");
        SubmeshStrategy st;
        const std::string mode = sj.at("mode").get<std::string>();
        if (mode == "partition") {
            st.kind = SubmeshStrategy::Kind::partition;
            st.parts = sj.value("parts", 4);
        } else if (mode == "neighbor") {
            st.kind = SubmeshStrategy::Kind::neighbor;
            st.edge_budget = sj.at("edge_budget").get<uint64_t>();
        } else {
            throw Error::usage("train: submesh.mode must be partition or neighbor");
        }
        submesh = st;
    }

    // fresh model or resume
    ModelParams<float> params;
    AdamW<float> opt;
    opt.init(model_cfg);
    NormStats norm;
    CheckpointMeta meta;
    meta.init_seed = seed;
    if (cfg.contains("resume_from")) {
        auto ck = load_checkpoint<float>(run.input(cfg.at("resume_from").get<std::string>()));
        params = std::move(ck.params);
        norm = ck.norm;
        meta = ck.meta;
        opt.step = ck.meta.trained_steps;
        for (auto& [name, data] : ck.extras) {
            for (auto& view : name.rfind("opt_m.", 0) == 0 ? opt.m.views() : opt.v.views()) {
                if ("opt_m." + view.name == name || "opt_v." + view.name == name) {
                    std::copy(data.begin(), data.end(), view.data);
                }
            }
        }
    } else {
        params.init(model_cfg, seed);
        std::vector<const TrainCase*> all;
        for (const auto& c : corpus.fine) all.push_back(c.get());
        for (const auto& c : corpus.coarse) all.push_back(c.get());
        norm = fit_norm_stats(all);
    }

    std::ofstream log(run.out("loss_log.csv"));
    log << "step,phase,lr,loss\n";
    log.precision(10);

    Rng rng(seed ^ 0x5eedu);
    const std::string snapshot = run.out("nan_snapshot.json").string();
    for (const auto& phase : phases) {
        auto selection = corpus.select(phase.coarse);
        if (submesh && !phase.masked) {
            // one macro-step per scheduled step: an optimizer step per sub-mesh
            for (uint64_t s = 0; s < phase.steps; ++s) {
                PhaseSpec sub = phase;
                sub.lr_max = sub.lr_min = cosine_lr(s, phase.steps, phase.lr_max, phase.lr_min);
                TrainCase& cs = *selection[rng.next_below(selection.size())];
                const size_t t = rng.next_below(cs.transitions());
                const double loss =
                    submesh_gradient_step(params, opt, cs, t, norm, *submesh, sub, rng);
                log << opt.step << "," << phase.name << "," << sub.lr_max << "," << loss
                    << "\n";
            }
        } else {
            auto result = run_phase(params, opt, phase, selection, norm, rng, snapshot);
            for (const auto& entry : result.log) {
                log << entry.step << "," << entry.phase << "," << entry.lr << ","
                    << entry.loss << "\n";
            }
        }
        meta.phase = phase.name;
    }
    meta.trained_steps = opt.step;

    // persist optimizer moments for clean resumes
    std::vector<ParamView<float>> extras;
    for (auto& view : opt.m.views()) {
        extras.push_back({"opt_m." + view.name, view.data, view.size, view.dims});
    }
    for (auto& view : opt.v.views()) {
        extras.push_back({"opt_v." + view.name, view.data, view.size, view.dims});
    }
    save_checkpoint(run.out("checkpoint.hsckpt").string(), params, norm, meta, extras);
    run.finish();
}

// ------------------------------------------------------------------ rollout

void cmd_rollout(const CommandContext& ctx) {
    CommandRun run("rollout", ctx);
    json& cfg = run.config();
    reject_unknown(cfg,
                   {"version", "checkpoint", "mesh", "waveform", "steps", "seed",
                    "initial_trajectory", "ground_truth", "bulge_mask", "timings"},
                   "rollout config");
    auto ck = load_checkpoint<float>(run.input(cfg.at("checkpoint").get<std::string>()));
    Mesh mesh = load_mesh(run.input(cfg.at("mesh").get<std::string>()));
    Waveform waveform = load_waveform(run.input(cfg.at("waveform").get<std::string>()));
    const uint64_t seed = run.seed(cfg.value("seed", ck.meta.init_seed));

    Adjacency adj = build_adjacency(mesh);
    auto aug = assemble(adj, mesh, ck.params.config.augment_config(seed));
    MaskSet masks(aug);

    const size_t n = mesh.node_count();
    std::vector<double> u0(3 * n, 0.0);
    std::optional<Trajectory> truth;
    if (cfg.contains("ground_truth")) {
        truth = load_trajectory(run.input(cfg.at("ground_truth").get<std::string>()));
        if (truth->nodes != n) throw Error::format("rollout: ground truth node count");
    }
    if (cfg.contains("initial_trajectory")) {
        Trajectory init =
            load_trajectory(run.input(cfg.at("initial_trajectory").get<std::string>()));
        if (init.nodes != n || init.steps == 0) {
            throw Error::format("rollout: initial trajectory does not match the mesh");
        }
        const float* f0 = init.frame(0);
        for (size_t i = 0; i < 3 * n; ++i) u0[i] = double(f0[i]);
    } else {
        // cold start: interior at rest, inlet at the prescribed profile
        auto prof = inlet_profile(mesh, waveform, 0.0);
        for (size_t k = 0; k < prof.nodes.size(); ++k) {
            for (int c = 0; c < 3; ++c) u0[3 * prof.nodes[k] + c] = prof.velocity[3 * k + c];
        }
    }

    const double dt = truth ? truth->dt : 0.01;
    const size_t steps = cfg.contains("steps")
                             ? cfg.at("steps").get<uint64_t>()
                             : size_t(std::ceil(waveform.period / dt));

    auto stepper = model_stepper(ck.params, ck.norm, mesh, masks);
    auto res = rollout(stepper, mesh, waveform, u0, steps, dt,
                       truth ? &*truth : nullptr);
    save_trajectory(res.predicted, run.out("predicted.hstraj").string());

    json report;
    report["manifest"] = run.manifest_stub();
    report["steps"] = steps;
    report["dt"] = dt;
    if (!res.step_mse.empty()) report["step_mse"] = res.step_mse;
    if (truth && cfg.contains("bulge_mask")) {
        auto bulge = load_bulge_mask(run.input(cfg.at("bulge_mask").get<std::string>()));
        report["bulge_l2_mm_per_s"] = bulge_l2_error(res.predicted, *truth, bulge);
        report["mean_bulge_speed_mm_per_s"] = mean_region_speed(*truth, bulge);
    }
    if (cfg.value("timings", false)) {
        report["step_wall_ms"] = res.step_wall_ms;
    }
    write_json(report, run.out("report.json"));
    run.finish();
}

// ------------------------------------------------------------------ metrics

void cmd_metrics(const CommandContext& ctx) {
    CommandRun run("metrics", ctx);
    json& cfg = run.config();
    reject_unknown(cfg,
                   {"version", "mesh", "waveform", "ground_truth", "checkpoint", "predicted",
                    "bulge_mask", "seed"},
                   "metrics config");
    Mesh mesh = load_mesh(run.input(cfg.at("mesh").get<std::string>()));
    Waveform waveform = load_waveform(run.input(cfg.at("waveform").get<std::string>()));
    Trajectory truth = load_trajectory(run.input(cfg.at("ground_truth").get<std::string>()));
    if (truth.nodes != mesh.node_count()) {
        throw Error::format("metrics: ground truth does not match the mesh");
    }

    json report;
    report["manifest"] = run.manifest_stub();

    std::vector<uint64_t> bulge;
    if (cfg.contains("bulge_mask")) {
        bulge = load_bulge_mask(run.input(cfg.at("bulge_mask").get<std::string>()));
    }

    if (cfg.contains("checkpoint")) {
        auto ck = load_checkpoint<float>(run.input(cfg.at("checkpoint").get<std::string>()));
        const uint64_t seed = run.seed(cfg.value("seed", ck.meta.init_seed));
        Adjacency adj = build_adjacency(mesh);
        auto aug = assemble(adj, mesh, ck.params.config.augment_config(seed));
        MaskSet masks(aug);
        auto stepper = model_stepper(ck.params, ck.norm, mesh, masks);
        report["one_step"] = metric_json(one_step_error(stepper, mesh, waveform, truth));
        report["all_rollout"] =
            metric_json(all_rollout_error(stepper, mesh, waveform, truth));
        if (!bulge.empty()) {
            std::vector<double> u0(3 * truth.nodes);
            for (size_t i = 0; i < u0.size(); ++i) u0[i] = double(truth.frame(0)[i]);
            auto res = rollout(stepper, mesh, waveform, u0, truth.steps - 1, truth.dt);
            report["bulge_l2_mm_per_s"] = bulge_l2_error(res.predicted, truth, bulge);
            report["mean_bulge_speed_mm_per_s"] = mean_region_speed(truth, bulge);
        }
    }

    if (cfg.contains("predicted")) {
        Trajectory pred = load_trajectory(run.input(cfg.at("predicted").get<std::string>()));
        if (pred.nodes != truth.nodes) {
            throw Error::format("metrics: predicted trajectory does not match");
        }
        const size_t steps = std::min(pred.steps, truth.steps);
        double acc = 0.0;
        for (size_t t = 1; t < steps; ++t) {
            const float* p = pred.frame(t);
            const float* g = truth.frame(t);
            for (size_t i = 0; i < truth.nodes * 3; ++i) {
                const double d = double(p[i]) - double(g[i]);
                acc += d * d;
            }
        }
        ErrorMetric m;
        m.value = steps > 1 ? acc / (double(steps - 1) * double(truth.nodes)) : 0.0;
        m.rmse = std::sqrt(m.value);
        report["predicted_vs_truth"] = metric_json(m);
        if (!bulge.empty()) {
            report["bulge_l2_mm_per_s"] = bulge_l2_error(pred, truth, bulge);
        }
    }
    write_json(report, run.out("report.json"));
    run.finish();
}

// --------------------------------------------------------------------- hemo

void cmd_hemo(const CommandContext& ctx) {
    CommandRun run("hemo", ctx);
    json& cfg = run.config();
    reject_unknown(cfg,
                   {"version", "mesh", "trajectory", "bulge_mask", "casson", "raw_peaks",
                    "normalize_velocity", "waveform", "reference_metrics", "seed",
                    "tawss_main_text_rule"},
                   "hemo config");
    Mesh mesh = load_mesh(run.input(cfg.at("mesh").get<std::string>()));
    Trajectory traj = load_trajectory(run.input(cfg.at("trajectory").get<std::string>()));
    if (traj.nodes != mesh.node_count()) {
        throw Error::format("hemo: trajectory does not match the mesh");
    }
    CassonParams casson;
    if (cfg.contains("casson")) {
        reject_unknown(cfg.at("casson"), {"hematocrit", "m"}, "casson");
        casson.hematocrit = cfg.at("casson").value("hematocrit", casson.hematocrit);
        casson.m = cfg.at("casson").value("m", casson.m);
    }
    casson.validate();

    std::vector<uint64_t> bulge;
    if (cfg.contains("bulge_mask")) {
        bulge = load_bulge_mask(run.input(cfg.at("bulge_mask").get<std::string>()));
    }

    auto field = compute_wall_field(mesh, traj, casson);

    HemoMetricsOptions opts;
    opts.raw_peaks = cfg.value("raw_peaks", false);
    RiskInputs inputs = hemo_metrics(mesh, traj, field, bulge, opts);
    if (cfg.value("normalize_velocity", false)) {
        if (!cfg.contains("waveform")) {
            throw Error::usage("hemo: normalize_velocity needs a waveform");
        }
        Waveform wf = load_waveform(run.input(cfg.at("waveform").get<std::string>()));
        // systolic step = peak flow over the cycle
        double q_peak = 0.0, t_peak = 0.0;
        for (size_t s = 0; s < traj.steps; ++s) {
            const double q = wf.flow_at(double(s) * traj.dt);
            if (q > q_peak) {
                q_peak = q;
                t_peak = double(s) * traj.dt;
            }
        }
        auto prof = inlet_profile(mesh, wf, t_peak);
        const double mean_inlet = inflow_stats(prof).mean;
        if (mean_inlet > 0.0) inputs.systolic_velocity /= mean_inlet;
    }

    // wall WSS time series in the trajectory container, restricted to wall
    // nodes in ascending id order
    Trajectory wall_out;
    wall_out.mesh_hash = mesh_content_hash(mesh);
    wall_out.dt = traj.dt;
    wall_out.steps = field.steps;
    wall_out.nodes = field.wall_nodes.size();
    wall_out.velocity.resize(field.traction.size());
    for (size_t i = 0; i < field.traction.size(); ++i) {
        wall_out.velocity[i] = float(field.traction[i]);
    }
    save_trajectory(wall_out, run.out("wall_field.hstraj").string());

    json report;
    report["manifest"] = run.manifest_stub();
    report["wall_nodes"] = field.wall_nodes;
    report["metrics"] = {{"tawss_mean_pa", inputs.tawss_mean},
                         {"peak_wss_pa", inputs.peak_wss},
                         {"osi_max", inputs.osi_max},
                         {"systolic_velocity", inputs.systolic_velocity}};
    report["flags"] = {{"raw_peaks", opts.raw_peaks},
                       {"normalize_velocity", cfg.value("normalize_velocity", false)}};
    report["casson"] = {{"hematocrit", casson.hematocrit},
                        {"m", casson.m},
                        {"tau0_pa", casson.tau0()},
                        {"mu0_pa_s", casson.mu0()}};
    if (cfg.contains("reference_metrics")) {
        std::ifstream in(run.input(cfg.at("reference_metrics").get<std::string>()));
        json ref = json::parse(in);
        const json& rm = ref.contains("metrics") ? ref.at("metrics") : ref;
        json deltas;
        auto emit = [&](const char* key, double mine) {
            if (!rm.contains(key)) return;
            auto d = delta_metric(mine, rm.at(key).get<double>());
            deltas[key] = d ? json(*d) : json(nullptr);
        };
        emit("tawss_mean_pa", inputs.tawss_mean);
        emit("peak_wss_pa", inputs.peak_wss);
        emit("osi_max", inputs.osi_max);
        emit("systolic_velocity", inputs.systolic_velocity);
        report["delta_percent"] = deltas;
    }
    write_json(report, run.out("hemo_report.json"));
    run.finish();
}

// --------------------------------------------------------------------- risk

void cmd_risk(const CommandContext& ctx) {
    CommandRun run("risk", ctx);
    json& cfg = run.config();
    reject_unknown(cfg, {"version", "metrics", "metrics_file", "tawss_main_text_rule", "seed"},
                   "risk config");
    RiskInputs inputs;
    json source;
    if (cfg.contains("metrics_file")) {
        std::ifstream in(run.input(cfg.at("metrics_file").get<std::string>()));
        json parsed = json::parse(in, nullptr, false);
        if (parsed.is_discarded()) throw Error::format("risk: metrics file is not JSON");
        source = parsed.contains("metrics") ? parsed.at("metrics") : parsed;
    } else if (cfg.contains("metrics")) {
        source = cfg.at("metrics");
    } else {
        throw Error::usage("risk: provide metrics or metrics_file");
    }
    reject_unknown(source,
                   {"tawss_mean_pa", "peak_wss_pa", "osi_max", "systolic_velocity"},
                   "risk metrics");
    inputs.tawss_mean = source.at("tawss_mean_pa").get<double>();
    inputs.peak_wss = source.at("peak_wss_pa").get<double>();
    inputs.osi_max = source.at("osi_max").get<double>();
    inputs.systolic_velocity = source.at("systolic_velocity").get<double>();

    RiskOptions opts;
    opts.tawss_main_text_rule = cfg.value("tawss_main_text_rule", false);
    auto report = aggregate_risk(risk_subscores(inputs, opts));
    report.inputs = inputs;

    json out;
    out["manifest"] = run.manifest_stub();
    out["inputs"] = {{"tawss_mean_pa", inputs.tawss_mean},
                     {"peak_wss_pa", inputs.peak_wss},
                     {"osi_max", inputs.osi_max},
                     {"systolic_velocity", inputs.systolic_velocity}};
    out["subscores"] = {{"tawss", report.subscores[0]},
                        {"peak_wss", report.subscores[1]},
                        {"osi", report.subscores[2]},
                        {"velocity", report.subscores[3]}};
    out["average"] = report.average;
    out["band"] = risk_band_name(report.band);
    out["thresholds"] = {{"tawss_low_pa", 1.5},
                         {"tawss_high_pa", 6.7},
                         {"peak_wss_pa", {4.0, 6.0}},
                         {"osi", {0.15, 0.3}},
                         {"velocity", {20.0, 50.0, 80.0}}};
    out["flags"] = {{"tawss_main_text_rule", opts.tawss_main_text_rule}};
    write_json(out, run.out("risk_report.json"));
    run.finish();
}

// ------------------------------------------------------------------ scaling

void cmd_scaling(const CommandContext& ctx) {
    CommandRun run("scaling", ctx);
    json& cfg = run.config();
    reject_unknown(cfg,
                   {"version", "mode", "points", "budgets", "grid", "corpus", "batch_size",
                    "lr_max", "lr_min", "noise_sigma", "seed"},
                   "scaling config");
    const std::string mode = cfg.value("mode", "fit");
    json report;
    report["manifest"] = run.manifest_stub();

    if (mode == "fit") {
        std::vector<std::pair<double, double>> points;
        for (const auto& p : cfg.at("points")) {
            points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        }
        auto fit = fit_scaling_law(points);
        report["fit"] = {{"exponent", fit.exponent},
                         {"coefficient", fit.coefficient},
                         {"r_squared", fit.r_squared}};
    } else if (mode == "sweep") {
        const uint64_t seed = run.seed(cfg.value("seed", 7));
        const json& corpus = cfg.at("corpus");
        reject_unknown(corpus, {"mesh", "trajectory", "waveform", "bulge_mask"},
                       "scaling corpus");

        std::vector<ModelConfig> grid;
        for (const auto& gj : cfg.at("grid")) grid.push_back(model_from_json(gj));
        if (grid.empty()) throw Error::usage("scaling: empty model grid");
        auto tc = load_case(run, corpus, grid[0], seed);

        PhaseSpec base;
        base.steps = 1;
        base.lr_max = cfg.value("lr_max", 1e-3);
        base.lr_min = cfg.value("lr_min", 1e-5);
        base.batch_size = cfg.value("batch_size", 2);
        if (cfg.contains("noise_sigma")) {
            auto v = cfg.at("noise_sigma").get<std::vector<double>>();
            if (v.size() != 3) throw Error::usage("scaling: noise_sigma needs 3 components");
            base.noise_sigma = {v[0], v[1], v[2]};
        }
        auto budgets = cfg.at("budgets").get<std::vector<double>>();
        auto sweep = isoflops_sweep(budgets, grid, *tc, base, seed);

        json records = json::array();
        for (const auto& r : sweep.records) {
            records.push_back({{"budget_flops", r.budget},
                               {"param_count", r.param_count},
                               {"steps", r.steps},
                               {"all_rollout", r.all_rollout},
                               {"skipped", r.skipped}});
        }
        report["records"] = records;
        report["argmin_per_budget"] = sweep.argmin_per_budget;

        // power-law fit over the per-budget winners when enough survive
        std::vector<std::pair<double, double>> winners;
        for (int idx : sweep.argmin_per_budget) {
            if (idx >= 0) {
                winners.emplace_back(sweep.records[idx].budget,
                                     double(sweep.records[idx].param_count));
            }
        }
        if (winners.size() >= 2) {
            auto fit = fit_scaling_law(winners);
            report["fit"] = {{"exponent", fit.exponent},
                             {"coefficient", fit.coefficient},
                             {"r_squared", fit.r_squared}};
        }
    } else {
        throw Error::usage("scaling: mode must be fit or sweep");
    }
    write_json(report, run.out("scaling_report.json"));
    run.finish();
}

void run_command(const std::string& name, const CommandContext& ctx) {
    if (name == "synth") return cmd_synth(ctx);
    if (name == "train") return cmd_train(ctx);
    if (name == "rollout") return cmd_rollout(ctx);
    if (name == "metrics") return cmd_metrics(ctx);
    if (name == "hemo") return cmd_hemo(ctx);
    if (name == "risk") return cmd_risk(ctx);
    if (name == "scaling") return cmd_scaling(ctx);
    throw Error::usage("unknown command: " + name);
}

}  // namespace hsflow
