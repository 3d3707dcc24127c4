#include "hsflow.h"

#include <omp.h>

#include <exception>
#include <string>

#include "core/error.hpp"
#include "core/mesh_io.hpp"
#include "core/pipeline.hpp"

using namespace hsflow;

namespace {

thread_local std::string g_last_error;

int capture(const std::exception& e, int fallback) {
    g_last_error = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) return err->exit_code();
    return fallback;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return HSF_OK;
    } catch (const std::exception& e) {
        return capture(e, HSF_INTERNAL_ERROR);
    } catch (...) {
        g_last_error = "unknown error";
        return HSF_INTERNAL_ERROR;
    }
}

template <typename T, typename Fn>
T* guarded_new(Fn&& fn) {
    try {
        T* out = fn();
        g_last_error.clear();
        return out;
    } catch (const std::exception& e) {
        capture(e, HSF_INTERNAL_ERROR);
        return nullptr;
    } catch (...) {
        g_last_error = "unknown error";
        return nullptr;
    }
}

int run_named(const char* command, const char* config_path, const char* out_dir,
              int64_t seed, int threads) {
    return guarded([&] {
        if (!command || !config_path || !out_dir) {
            throw Error::usage("command, config path and output directory are required");
        }
        CommandContext ctx;
        ctx.config_path = config_path;
        ctx.out_dir = out_dir;
        ctx.seed_override = seed;
        ctx.threads = threads;
        run_command(command, ctx);
    });
}

}  // namespace

struct hsf_mesh {
    Mesh mesh;
};

struct hsf_trajectory {
    Trajectory traj;
};

struct hsf_waveform {
    Waveform wf;
};

extern "C" {

const char* hsf_version(void) { return kToolVersion; }

const char* hsf_last_error(void) { return g_last_error.c_str(); }

void hsf_set_threads(int threads) {
    if (threads > 0) omp_set_num_threads(threads);
}

/* ---------------------------------------------------------------- meshes */

hsf_mesh* hsf_mesh_load(const char* path) {
    return guarded_new<hsf_mesh>([&] {
        if (!path) throw Error::usage("mesh path is required");
        return new hsf_mesh{load_mesh(path)};
    });
}

int hsf_mesh_save(const hsf_mesh* mesh, const char* path) {
    return guarded([&] {
        if (!mesh || !path) throw Error::usage("mesh handle and path are required");
        save_mesh(mesh->mesh, path);
    });
}

void hsf_mesh_free(hsf_mesh* mesh) { delete mesh; }

uint64_t hsf_mesh_node_count(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.node_count() : 0;
}

uint64_t hsf_mesh_tet_count(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.tet_count() : 0;
}

const double* hsf_mesh_positions(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.positions.data() : nullptr;
}

const uint64_t* hsf_mesh_tets(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.tets.data() : nullptr;
}

const uint8_t* hsf_mesh_node_types(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.node_type.data() : nullptr;
}

const double* hsf_mesh_inlet_distance(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.inlet_distance.data() : nullptr;
}

const double* hsf_mesh_wall_normals(const hsf_mesh* mesh) {
    return mesh ? mesh->mesh.wall_normals.data() : nullptr;
}

/* ----------------------------------------------------------- trajectories */

hsf_trajectory* hsf_trajectory_load(const char* path) {
    return guarded_new<hsf_trajectory>([&] {
        if (!path) throw Error::usage("trajectory path is required");
        return new hsf_trajectory{load_trajectory(path)};
    });
}

int hsf_trajectory_save(const hsf_trajectory* traj, const char* path) {
    return guarded([&] {
        if (!traj || !path) throw Error::usage("trajectory handle and path are required");
        save_trajectory(traj->traj, path);
    });
}

void hsf_trajectory_free(hsf_trajectory* traj) { delete traj; }

uint64_t hsf_trajectory_steps(const hsf_trajectory* traj) {
    return traj ? traj->traj.steps : 0;
}

uint64_t hsf_trajectory_nodes(const hsf_trajectory* traj) {
    return traj ? traj->traj.nodes : 0;
}

double hsf_trajectory_dt(const hsf_trajectory* traj) { return traj ? traj->traj.dt : 0.0; }

const float* hsf_trajectory_frame(const hsf_trajectory* traj, uint64_t step) {
    if (!traj || step >= traj->traj.steps) return nullptr;
    return traj->traj.frame(step);
}

const uint8_t* hsf_trajectory_mesh_hash(const hsf_trajectory* traj) {
    return traj ? traj->traj.mesh_hash.data() : nullptr;
}

/* -------------------------------------------------------------- waveforms */

hsf_waveform* hsf_waveform_load(const char* path) {
    return guarded_new<hsf_waveform>([&] {
        if (!path) throw Error::usage("waveform path is required");
        return new hsf_waveform{load_waveform(path)};
    });
}

void hsf_waveform_free(hsf_waveform* wf) { delete wf; }

double hsf_waveform_period(const hsf_waveform* wf) { return wf ? wf->wf.period : 0.0; }

double hsf_waveform_flow_at(const hsf_waveform* wf, double t) {
    return wf ? wf->wf.flow_at(t) : 0.0;
}

/* ----------------------------------------------------------------- runs */

int hsf_synth(const char* c, const char* o, int64_t s, int t) {
    return run_named("synth", c, o, s, t);
}
int hsf_train(const char* c, const char* o, int64_t s, int t) {
    return run_named("train", c, o, s, t);
}
int hsf_rollout(const char* c, const char* o, int64_t s, int t) {
    return run_named("rollout", c, o, s, t);
}
int hsf_metrics(const char* c, const char* o, int64_t s, int t) {
    return run_named("metrics", c, o, s, t);
}
int hsf_hemo(const char* c, const char* o, int64_t s, int t) {
    return run_named("hemo", c, o, s, t);
}
int hsf_risk(const char* c, const char* o, int64_t s, int t) {
    return run_named("risk", c, o, s, t);
}
int hsf_scaling(const char* c, const char* o, int64_t s, int t) {
    return run_named("scaling", c, o, s, t);
}

int hsf_run(const char* command, const char* config_path, const char* out_dir, int64_t seed,
            int threads) {
    return run_named(command, config_path, out_dir, seed, threads);
}

}  // extern "C"
