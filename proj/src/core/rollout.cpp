#include "core/rollout.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "core/error.hpp"

namespace hsflow {

FeatureFrame build_frame(const Mesh& mesh, const Waveform& waveform,
                         const std::vector<double>& u_curr, const std::vector<double>* u_prev,
                         double t, double dt) {
    const size_t n = mesh.node_count();
    if (u_curr.size() != 3 * n) throw Error::usage("build_frame: velocity size mismatch");

    FeatureFrame frame;
    frame.t = t;
    frame.dt = dt;
    frame.features = Mat<double>(n, feat::count);

    InflowStats stats;
    if (!mesh.nodes_of_type(NodeType::inlet).empty()) {
        auto profile = inlet_profile(mesh, waveform, t + dt);
        stats = inflow_stats(profile);
        frame.inlet_nodes = profile.nodes;
        frame.inlet_velocity_next = profile.velocity;
    }

    for (size_t i = 0; i < n; ++i) {
        double* f = frame.features.row_ptr(i);
        const double* u = &u_curr[3 * i];
        for (int c = 0; c < 3; ++c) {
            f[feat::vel + c] = u[c];
            f[feat::acc + c] = u_prev ? u[c] - (*u_prev)[3 * i + c] : 0.0;
            f[feat::pos + c] = mesh.pos(i)[c];
        }
        f[feat::dist] = mesh.inlet_distance[i];
        f[feat::speed] = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        f[feat::inflow + 0] = stats.mean;
        f[feat::inflow + 1] = stats.min;
        f[feat::inflow + 2] = stats.max;
        f[feat::type] = double(mesh.node_type[i]);
    }
    return frame;
}

FeatureFrame frame_from_trajectory(const Mesh& mesh, const Waveform& waveform,
                                   const Trajectory& traj, size_t step) {
    const size_t n = mesh.node_count();
    std::vector<double> u(3 * n), u_prev(3 * n);
    const float* cur = traj.frame(step);
    for (size_t i = 0; i < 3 * n; ++i) u[i] = double(cur[i]);
    if (step > 0) {
        const float* prev = traj.frame(step - 1);
        for (size_t i = 0; i < 3 * n; ++i) u_prev[i] = double(prev[i]);
        return build_frame(mesh, waveform, u, &u_prev, double(step) * traj.dt, traj.dt);
    }
    return build_frame(mesh, waveform, u, nullptr, 0.0, traj.dt);
}

template <typename T>
Mat<T> apply_input_norm(const NormStats& norm, const Mat<double>& features) {
    Mat<T> x(features.rows, features.cols);
    for (size_t i = 0; i < features.rows; ++i) {
        const double* src = features.row_ptr(i);
        T* dst = x.row_ptr(i);
        for (size_t j = 0; j < features.cols; ++j) {
            dst[j] = T((src[j] - norm.in_mean[j]) / norm.in_std[j]);
        }
    }
    return x;
}

template <typename T>
void denormalize_outputs(const NormStats& norm, const Mat<T>& out, Mat<double>& accel) {
    if (accel.rows != out.rows || accel.cols != out.cols) {
        accel = Mat<double>(out.rows, out.cols);
    }
    for (size_t i = 0; i < out.rows; ++i) {
        const T* src = out.row_ptr(i);
        double* dst = accel.row_ptr(i);
        for (size_t j = 0; j < out.cols; ++j) {
            dst[j] = double(src[j]) * norm.out_std[j] + norm.out_mean[j];
        }
    }
}

template <typename T>
std::vector<double> forward_step(const ModelParams<T>& params, const NormStats& norm,
                                 const Mesh& mesh, const FeatureFrame& frame,
                                 const MaskSet& masks) {
    Mat<T> x = apply_input_norm<T>(norm, frame.features);
    ForwardContext<T> ctx;
    model_forward(params, x, masks, ctx);
    Mat<double> accel;
    denormalize_outputs(norm, ctx.output(), accel);

    const size_t n = mesh.node_count();
    std::vector<double> u_next(3 * n);
    for (size_t i = 0; i < n; ++i) {
        const double* f = frame.features.row_ptr(i);
        for (int c = 0; c < 3; ++c) {
            u_next[3 * i + c] = f[feat::vel + c] + accel.at(i, c);
        }
    }
    // boundary enforcement: exact zeros on walls, prescribed inflow on inlets
    for (size_t i = 0; i < n; ++i) {
        if (mesh.type(i) == NodeType::wall) {
            u_next[3 * i + 0] = 0.0;
            u_next[3 * i + 1] = 0.0;
            u_next[3 * i + 2] = 0.0;
        }
    }
    for (size_t k = 0; k < frame.inlet_nodes.size(); ++k) {
        const uint64_t id = frame.inlet_nodes[k];
        for (int c = 0; c < 3; ++c) u_next[3 * id + c] = frame.inlet_velocity_next[3 * k + c];
    }
    return u_next;
}

template <typename T>
Stepper model_stepper(const ModelParams<T>& params, const NormStats& norm, const Mesh& mesh,
                      const MaskSet& masks) {
    return [&params, &norm, &mesh, &masks](const FeatureFrame& frame, size_t) {
        return forward_step(params, norm, mesh, frame, masks);
    };
}

Stepper persistence_stepper() {
    return [](const FeatureFrame& frame, size_t) {
        const size_t n = frame.features.rows;
        std::vector<double> u(3 * n);
        for (size_t i = 0; i < n; ++i) {
            const double* f = frame.features.row_ptr(i);
            for (int c = 0; c < 3; ++c) u[3 * i + c] = f[feat::vel + c];
        }
        return u;
    };
}

RolloutResult rollout(const Stepper& stepper, const Mesh& mesh, const Waveform& waveform,
                      const std::vector<double>& initial_velocity, size_t steps, double dt,
                      const Trajectory* ground_truth) {
    const size_t n = mesh.node_count();
    if (initial_velocity.size() != 3 * n) {
        throw Error::usage("rollout: initial velocity size mismatch");
    }
    RolloutResult res;
    res.predicted.mesh_hash = mesh_content_hash(mesh);
    res.predicted.dt = dt;
    res.predicted.steps = steps + 1;
    res.predicted.nodes = n;
    res.predicted.velocity.assign((steps + 1) * n * 3, 0.0f);
    for (size_t i = 0; i < 3 * n; ++i) {
        res.predicted.velocity[i] = float(initial_velocity[i]);
    }

    std::vector<double> u_prev;
    std::vector<double> u_curr = initial_velocity;
    for (size_t s = 0; s < steps; ++s) {
        const double t = double(s) * dt;
        FeatureFrame frame =
            build_frame(mesh, waveform, u_curr, s > 0 ? &u_prev : nullptr, t, dt);
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<double> u_next = stepper(frame, s);
        const auto t1 = std::chrono::steady_clock::now();
        res.step_wall_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (u_next.size() != 3 * n) throw Error::usage("rollout: stepper output size");

        for (double v : u_next) {
            if (std::isnan(v) || std::isinf(v)) {
                throw Error::numeric("rollout: NaN/Inf at step " + std::to_string(s + 1));
            }
        }
        for (size_t i = 0; i < n; ++i) {
            if (mesh.type(i) != NodeType::wall) continue;
            if (u_next[3 * i] != 0.0 || u_next[3 * i + 1] != 0.0 || u_next[3 * i + 2] != 0.0) {
                throw Error::numeric("rollout: wall velocity violated at step " +
                                     std::to_string(s + 1));
            }
        }

        float* row = res.predicted.frame(s + 1);
        for (size_t i = 0; i < 3 * n; ++i) row[i] = float(u_next[i]);

        if (ground_truth) {
            if (s + 1 < ground_truth->steps) {
                const float* g = ground_truth->frame(s + 1);
                double acc = 0.0;
                for (size_t i = 0; i < 3 * n; ++i) {
                    const double d = double(g[i]) - u_next[i];
                    acc += d * d;
                }
                res.step_mse.push_back(acc / double(n));
            }
        }

        u_prev = std::move(u_curr);
        u_curr = std::move(u_next);
    }
    return res;
}

ErrorMetric one_step_error(const Stepper& stepper, const Mesh& mesh,
                           const Waveform& waveform, const Trajectory& truth) {
    const size_t n = truth.nodes;
    const size_t transitions = truth.steps - 1;
    double acc = 0.0;
    for (size_t t = 1; t <= transitions; ++t) {
        FeatureFrame frame = frame_from_trajectory(mesh, waveform, truth, t - 1);
        std::vector<double> pred = stepper(frame, t - 1);
        const float* g = truth.frame(t);
        for (size_t i = 0; i < 3 * n; ++i) {
            const double d = double(g[i]) - pred[i];
            acc += d * d;
        }
    }
    ErrorMetric m;
    m.value = acc / (double(transitions) * double(n));
    m.rmse = std::sqrt(m.value);
    return m;
}

ErrorMetric all_rollout_error(const Stepper& stepper, const Mesh& mesh,
                              const Waveform& waveform, const Trajectory& truth) {
    const size_t n = truth.nodes;
    const size_t transitions = truth.steps - 1;
    std::vector<double> u0(3 * n);
    const float* g0 = truth.frame(0);
    for (size_t i = 0; i < 3 * n; ++i) u0[i] = double(g0[i]);
    RolloutResult res = rollout(stepper, mesh, waveform, u0, transitions, truth.dt, &truth);

    double acc = 0.0;
    for (double step_mse : res.step_mse) acc += step_mse;
    ErrorMetric m;
    m.value = acc / double(transitions);
    m.rmse = std::sqrt(m.value);
    return m;
}

std::optional<double> delta_metric(double gnn_value, double cfd_value) {
    if (cfd_value == 0.0) return std::nullopt;
    return 100.0 * (gnn_value - cfd_value) / cfd_value;
}

double bulge_l2_error(const Trajectory& predicted, const Trajectory& truth,
                      const std::vector<uint64_t>& bulge_nodes) {
    if (predicted.nodes != truth.nodes) {
        throw Error::usage("bulge_l2_error: node counts differ");
    }
    const size_t steps = std::min(predicted.steps, truth.steps);
    if (steps < 2 || bulge_nodes.empty()) return 0.0;
    double acc = 0.0;
    for (size_t t = 1; t < steps; ++t) {
        const float* p = predicted.frame(t);
        const float* g = truth.frame(t);
        for (uint64_t id : bulge_nodes) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = double(p[3 * id + c]) - double(g[3 * id + c]);
                d2 += d * d;
            }
            acc += std::sqrt(d2);
        }
    }
    return acc / (double(steps - 1) * double(bulge_nodes.size()));
}

double mean_region_speed(const Trajectory& traj, const std::vector<uint64_t>& nodes) {
    if (traj.steps < 2 || nodes.empty()) return 0.0;
    double acc = 0.0;
    for (size_t t = 1; t < traj.steps; ++t) {
        const float* f = traj.frame(t);
        for (uint64_t id : nodes) {
            double s2 = 0.0;
            for (int c = 0; c < 3; ++c) s2 += double(f[3 * id + c]) * double(f[3 * id + c]);
            acc += std::sqrt(s2);
        }
    }
    return acc / (double(traj.steps - 1) * double(nodes.size()));
}

// ------------------------------------------------- explicit instantiation

template Mat<float> apply_input_norm<float>(const NormStats&, const Mat<double>&);
template Mat<double> apply_input_norm<double>(const NormStats&, const Mat<double>&);
template void denormalize_outputs<float>(const NormStats&, const Mat<float>&, Mat<double>&);
template void denormalize_outputs<double>(const NormStats&, const Mat<double>&, Mat<double>&);
template std::vector<double> forward_step<float>(const ModelParams<float>&, const NormStats&,
                                                 const Mesh&, const FeatureFrame&,
                                                 const MaskSet&);
template std::vector<double> forward_step<double>(const ModelParams<double>&,
                                                  const NormStats&, const Mesh&,
                                                  const FeatureFrame&, const MaskSet&);
template Stepper model_stepper<float>(const ModelParams<float>&, const NormStats&,
                                      const Mesh&, const MaskSet&);
template Stepper model_stepper<double>(const ModelParams<double>&, const NormStats&,
                                       const Mesh&, const MaskSet&);

}  // namespace hsflow
