/* hsflow: vascular flow surrogate engine, C interface.
 *
 * All functions returning int use the status codes below; on any failure the
 * thread-local message from hsf_last_error() describes what went wrong.
 * Handle-returning functions yield NULL on failure. Pointers returned by
 * accessor functions borrow from the handle and stay valid until it is freed.
 */
#ifndef HSFLOW_H
#define HSFLOW_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Mirrors the CLI exit codes. */
typedef enum hsf_status {
    HSF_OK = 0,
    HSF_USAGE_ERROR = 2,   /* bad arguments or configuration */
    HSF_FORMAT_ERROR = 3,  /* on-disk data rejected */
    HSF_NUMERIC_ERROR = 4, /* NaN or divergence during computation */
    HSF_INTERNAL_ERROR = 5
} hsf_status;

const char* hsf_version(void);

/* Message for the most recent failure on this thread; empty on success. */
const char* hsf_last_error(void);

/* Kernel parallelism. Values <= 0 keep the environment default. Results are
 * reproducible for any fixed thread count. */
void hsf_set_threads(int threads);

/* ---------------------------------------------------------------- meshes */

typedef struct hsf_mesh hsf_mesh;

hsf_mesh* hsf_mesh_load(const char* path);
int hsf_mesh_save(const hsf_mesh* mesh, const char* path);
void hsf_mesh_free(hsf_mesh* mesh);

uint64_t hsf_mesh_node_count(const hsf_mesh* mesh);
uint64_t hsf_mesh_tet_count(const hsf_mesh* mesh);
const double* hsf_mesh_positions(const hsf_mesh* mesh);      /* N x 3, mm */
const uint64_t* hsf_mesh_tets(const hsf_mesh* mesh);         /* M x 4 */
const uint8_t* hsf_mesh_node_types(const hsf_mesh* mesh);    /* N; 0 interior,
                                                                1 wall, 2 inlet,
                                                                3 outlet */
const double* hsf_mesh_inlet_distance(const hsf_mesh* mesh); /* N, mm */
const double* hsf_mesh_wall_normals(const hsf_mesh* mesh);   /* N x 3 */

/* ----------------------------------------------------------- trajectories */

typedef struct hsf_trajectory hsf_trajectory;

hsf_trajectory* hsf_trajectory_load(const char* path);
int hsf_trajectory_save(const hsf_trajectory* traj, const char* path);
void hsf_trajectory_free(hsf_trajectory* traj);

uint64_t hsf_trajectory_steps(const hsf_trajectory* traj);
uint64_t hsf_trajectory_nodes(const hsf_trajectory* traj);
double hsf_trajectory_dt(const hsf_trajectory* traj);
/* One stored step: nodes x 3 binary32 velocities in mm/s. */
const float* hsf_trajectory_frame(const hsf_trajectory* traj, uint64_t step);
/* 32-byte content hash of the mesh the trajectory belongs to. */
const uint8_t* hsf_trajectory_mesh_hash(const hsf_trajectory* traj);

/* -------------------------------------------------------------- waveforms */

typedef struct hsf_waveform hsf_waveform;

hsf_waveform* hsf_waveform_load(const char* path);
void hsf_waveform_free(hsf_waveform* wf);
double hsf_waveform_period(const hsf_waveform* wf);
/* Periodic piecewise-linear flow rate, mm^3/s. */
double hsf_waveform_flow_at(const hsf_waveform* wf, double t);

/* ----------------------------------------------------------------- runs */

/* Each command reads a JSON config and writes its artifacts plus a
 * manifest.json into out_dir. seed < 0 keeps the seed from the config;
 * threads <= 0 keeps the current setting. */
int hsf_synth(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_train(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_rollout(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_metrics(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_hemo(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_risk(const char* config_path, const char* out_dir, int64_t seed, int threads);
int hsf_scaling(const char* config_path, const char* out_dir, int64_t seed, int threads);

/* Dispatch by command name ("synth", "train", ...). */
int hsf_run(const char* command, const char* config_path, const char* out_dir, int64_t seed,
            int threads);

#ifdef __cplusplus
}
#endif

#endif /* HSFLOW_H */
