#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "core/model.hpp"
#include "core/synth.hpp"

namespace hsflow {

// Feature layout of the 15 per-node inputs.
namespace feat {
inline constexpr int vel = 0;      // 3: current velocity, mm/s
inline constexpr int acc = 3;      // 3: velocity delta over the last step
inline constexpr int pos = 6;      // 3: node position, mm
inline constexpr int dist = 9;     // 1: distance to the inflow plane
inline constexpr int speed = 10;   // 1: |velocity|
inline constexpr int inflow = 11;  // 3: mean/min/max inlet speed at t + dt
inline constexpr int type = 14;    // 1: node type code
inline constexpr int count = 15;
}  // namespace feat

struct FeatureFrame {
    Mat<double> features;  // N x 15, physical units
    double t = 0.0;        // time of the carried state
    double dt = 0.01;
    std::vector<uint64_t> inlet_nodes;
    std::vector<double> inlet_velocity_next;  // 3 per inlet node, at t + dt
};

// Assembles the 15 features from the current state. Acceleration is the
// velocity delta to the previous step (zero when no previous step exists) and
// the inflow statistics describe the prescribed profile at t + dt.
FeatureFrame build_frame(const Mesh& mesh, const Waveform& waveform,
                         const std::vector<double>& u_curr, const std::vector<double>* u_prev,
                         double t, double dt);

FeatureFrame frame_from_trajectory(const Mesh& mesh, const Waveform& waveform,
                                   const Trajectory& traj, size_t step);

// -------------------------------------------------------- normalization

template <typename T>
Mat<T> apply_input_norm(const NormStats& norm, const Mat<double>& features);

// normalized model output -> physical acceleration
template <typename T>
void denormalize_outputs(const NormStats& norm, const Mat<T>& out, Mat<double>& accel);

// ---------------------------------------------------------- forward step

// One autoregressive step: normalize, run the model, add the predicted
// acceleration to the carried velocity, then pin walls to zero and inlets to
// the prescribed profile (bitwise).
template <typename T>
std::vector<double> forward_step(const ModelParams<T>& params, const NormStats& norm,
                                 const Mesh& mesh, const FeatureFrame& frame,
                                 const MaskSet& masks);

// Any next-velocity predictor: ground-truth oracles and the persistence
// baseline plug in next to the model.
using Stepper = std::function<std::vector<double>(const FeatureFrame&, size_t step_index)>;

template <typename T>
Stepper model_stepper(const ModelParams<T>& params, const NormStats& norm, const Mesh& mesh,
                      const MaskSet& masks);

Stepper persistence_stepper();

// ------------------------------------------------------------- rollout

struct RolloutResult {
    Trajectory predicted;                // initial state plus one row per step
    std::vector<double> step_mse;        // vs ground truth when provided
    std::vector<double> step_wall_ms;
};

// Autoregressive composition from the initial state. Wall velocities are
// asserted to be exactly zero after every step; NaNs abort with the step
// index.
RolloutResult rollout(const Stepper& stepper, const Mesh& mesh, const Waveform& waveform,
                      const std::vector<double>& initial_velocity, size_t steps, double dt,
                      const Trajectory* ground_truth = nullptr);

// --------------------------------------------------------------- metrics

struct ErrorMetric {
    double value = 0.0;  // mean over steps of node-summed squared error / N
    double rmse = 0.0;   // sqrt(value)
};

// (1/(T N)) sum_t sum_i |G_t,i - f(G_{t-1})_i|^2 with frames rebuilt from the
// ground truth at each step.
ErrorMetric one_step_error(const Stepper& stepper, const Mesh& mesh,
                           const Waveform& waveform, const Trajectory& truth);

// Same accumulation with predictions composed from G_0.
ErrorMetric all_rollout_error(const Stepper& stepper, const Mesh& mesh,
                              const Waveform& waveform, const Trajectory& truth);

// 100 * (gnn - cfd) / cfd; absent when the reference is zero.
std::optional<double> delta_metric(double gnn_value, double cfd_value);

// Mean Euclidean velocity error over the predicted steps and the given nodes.
double bulge_l2_error(const Trajectory& predicted, const Trajectory& truth,
                      const std::vector<uint64_t>& bulge_nodes);

// Mean speed over the same steps and nodes of a single trajectory.
double mean_region_speed(const Trajectory& traj, const std::vector<uint64_t>& nodes);

}  // namespace hsflow
