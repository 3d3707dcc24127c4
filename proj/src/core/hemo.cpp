#include "core/hemo.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace hsflow {

void CassonParams::validate() const {
    if (!(tau0() > 0.0)) {
        throw Error::usage("casson: hematocrit " + std::to_string(hematocrit) +
                           " gives non-positive yield stress (need Hct > 26.75)");
    }
    if (!(mu0() > 0.0) || !(m > 0.0)) throw Error::usage("casson: invalid parameters");
}

double casson_viscosity(double gamma_dot, const CassonParams& params) {
    params.validate();
    if (gamma_dot < 0.0) throw Error::usage("casson: negative shear rate");
    double yield_term;
    if (gamma_dot == 0.0) {
        // first-order limit of (1 - exp(-m g))/g
        yield_term = params.tau0() * params.m;
    } else {
        yield_term = params.tau0() / gamma_dot * (1.0 - std::exp(-params.m * gamma_dot));
    }
    const double root = std::sqrt(yield_term) + std::sqrt(params.mu0());
    return root * root;
}

std::vector<double> velocity_gradient(const Mesh& mesh, const std::vector<double>& velocity) {
    const size_t m = mesh.tet_count();
    if (velocity.size() != 3 * mesh.node_count()) {
        throw Error::usage("velocity_gradient: velocity size mismatch");
    }
    std::vector<double> grad(9 * m, 0.0);
#pragma omp parallel for schedule(static)
    for (size_t e = 0; e < m; ++e) {
        const uint64_t* t = &mesh.tets[4 * e];
        const double* p0 = mesh.pos(t[0]);
        double edges[3][3];
        for (int v = 0; v < 3; ++v) {
            const double* pv = mesh.pos(t[v + 1]);
            for (int k = 0; k < 3; ++k) edges[v][k] = pv[k] - p0[k];
        }
        const double det =
            edges[0][0] * (edges[1][1] * edges[2][2] - edges[1][2] * edges[2][1]) -
            edges[0][1] * (edges[1][0] * edges[2][2] - edges[1][2] * edges[2][0]) +
            edges[0][2] * (edges[1][0] * edges[2][1] - edges[1][1] * edges[2][0]);
        double inv[3][3];
        inv[0][0] = (edges[1][1] * edges[2][2] - edges[1][2] * edges[2][1]) / det;
        inv[0][1] = (edges[0][2] * edges[2][1] - edges[0][1] * edges[2][2]) / det;
        inv[0][2] = (edges[0][1] * edges[1][2] - edges[0][2] * edges[1][1]) / det;
        inv[1][0] = (edges[1][2] * edges[2][0] - edges[1][0] * edges[2][2]) / det;
        inv[1][1] = (edges[0][0] * edges[2][2] - edges[0][2] * edges[2][0]) / det;
        inv[1][2] = (edges[0][2] * edges[1][0] - edges[0][0] * edges[1][2]) / det;
        inv[2][0] = (edges[1][0] * edges[2][1] - edges[1][1] * edges[2][0]) / det;
        inv[2][1] = (edges[0][1] * edges[2][0] - edges[0][0] * edges[2][1]) / det;
        inv[2][2] = (edges[0][0] * edges[1][1] - edges[0][1] * edges[1][0]) / det;
        // du_c/dx_k = sum_v inv[k][v] (u_c(v+1) - u_c(0))
        for (int c = 0; c < 3; ++c) {
            double dv[3];
            for (int v = 0; v < 3; ++v) {
                dv[v] = velocity[3 * t[v + 1] + c] - velocity[3 * t[0] + c];
            }
            for (int k = 0; k < 3; ++k) {
                grad[9 * e + 3 * c + k] =
                    inv[k][0] * dv[0] + inv[k][1] * dv[1] + inv[k][2] * dv[2];
            }
        }
    }
    return grad;
}

WallSample wss_vector(const Mesh& mesh, const std::vector<double>& velocity,
                      const CassonParams& params) {
    params.validate();
    const size_t n = mesh.node_count();
    const std::vector<double> grad = velocity_gradient(mesh, velocity);

    // volume-weighted strain-rate average over tets incident to each node
    std::vector<double> strain(6 * n, 0.0);  // symmetric: xx yy zz xy xz yz
    std::vector<double> weight(n, 0.0);
    for (size_t e = 0; e < mesh.tet_count(); ++e) {
        const uint64_t* t = &mesh.tets[4 * e];
        const double vol = tet_signed_volume(mesh.pos(t[0]), mesh.pos(t[1]), mesh.pos(t[2]),
                                             mesh.pos(t[3]));
        const double* g = &grad[9 * e];
        const double exx = g[0], eyy = g[4], ezz = g[8];
        const double exy = 0.5 * (g[1] + g[3]);
        const double exz = 0.5 * (g[2] + g[6]);
        const double eyz = 0.5 * (g[5] + g[7]);
        for (int v = 0; v < 4; ++v) {
            const uint64_t id = t[v];
            strain[6 * id + 0] += vol * exx;
            strain[6 * id + 1] += vol * eyy;
            strain[6 * id + 2] += vol * ezz;
            strain[6 * id + 3] += vol * exy;
            strain[6 * id + 4] += vol * exz;
            strain[6 * id + 5] += vol * eyz;
            weight[id] += vol;
        }
    }

    WallSample out;
    out.wall_nodes = mesh.nodes_of_type(NodeType::wall);
    out.traction.assign(3 * out.wall_nodes.size(), 0.0);
    for (size_t w = 0; w < out.wall_nodes.size(); ++w) {
        const uint64_t id = out.wall_nodes[w];
        if (weight[id] == 0.0) {
            throw Error::usage("wss: wall node " + std::to_string(id) +
                               " has no adjacent tets");
        }
        double eps[3][3];
        eps[0][0] = strain[6 * id + 0] / weight[id];
        eps[1][1] = strain[6 * id + 1] / weight[id];
        eps[2][2] = strain[6 * id + 2] / weight[id];
        eps[0][1] = eps[1][0] = strain[6 * id + 3] / weight[id];
        eps[0][2] = eps[2][0] = strain[6 * id + 4] / weight[id];
        eps[1][2] = eps[2][1] = strain[6 * id + 5] / weight[id];

        double frob = 0.0;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) frob += eps[a][b] * eps[a][b];
        }
        const double gamma_dot = std::sqrt(2.0 * frob);
        const double mu = casson_viscosity(gamma_dot, params);

        const double* nrm = &mesh.wall_normals[3 * id];
        double traction[3];
        for (int a = 0; a < 3; ++a) {
            traction[a] = 2.0 * mu *
                          (eps[a][0] * nrm[0] + eps[a][1] * nrm[1] + eps[a][2] * nrm[2]);
        }
        const double normal_part =
            traction[0] * nrm[0] + traction[1] * nrm[1] + traction[2] * nrm[2];
        for (int a = 0; a < 3; ++a) {
            out.traction[3 * w + a] = traction[a] - normal_part * nrm[a];
        }
    }
    return out;
}

double tawss(const std::vector<std::array<double, 3>>& series, double dt) {
    if (series.empty()) return 0.0;
    auto norm = [](const std::array<double, 3>& v) {
        return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    };
    if (series.size() == 1) return norm(series[0]);
    double integral = 0.0;
    for (size_t i = 0; i + 1 < series.size(); ++i) {
        integral += 0.5 * (norm(series[i]) + norm(series[i + 1])) * dt;
    }
    const double period = dt * double(series.size() - 1);
    return integral / period;
}

double osi(const std::vector<std::array<double, 3>>& series, double dt) {
    if (series.size() < 2) return 0.0;
    auto norm = [](const std::array<double, 3>& v) {
        return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    };
    double vx = 0.0, vy = 0.0, vz = 0.0, mag = 0.0;
    for (size_t i = 0; i + 1 < series.size(); ++i) {
        vx += 0.5 * (series[i][0] + series[i + 1][0]) * dt;
        vy += 0.5 * (series[i][1] + series[i + 1][1]) * dt;
        vz += 0.5 * (series[i][2] + series[i + 1][2]) * dt;
        mag += 0.5 * (norm(series[i]) + norm(series[i + 1])) * dt;
    }
    if (mag == 0.0) return 0.0;  // zero shear over the whole cycle
    const double resultant = std::sqrt(vx * vx + vy * vy + vz * vz);
    // Cauchy-Schwarz bounds resultant <= mag; clamp rounding residue
    return std::clamp(0.5 * (1.0 - resultant / mag), 0.0, 0.5);
}

WallField compute_wall_field(const Mesh& mesh, const Trajectory& traj,
                             const CassonParams& params) {
    if (traj.nodes != mesh.node_count()) {
        throw Error::usage("wall field: trajectory does not match the mesh");
    }
    WallField field;
    field.wall_nodes = mesh.nodes_of_type(NodeType::wall);
    field.steps = traj.steps;
    field.dt = traj.dt;
    field.traction.assign(traj.steps * field.wall_nodes.size() * 3, 0.0);

    std::vector<double> velocity(3 * mesh.node_count());
    for (size_t s = 0; s < traj.steps; ++s) {
        const float* frame = traj.frame(s);
        for (size_t i = 0; i < velocity.size(); ++i) velocity[i] = double(frame[i]);
        WallSample sample = wss_vector(mesh, velocity, params);
        std::copy(sample.traction.begin(), sample.traction.end(),
                  field.traction.begin() + s * field.wall_nodes.size() * 3);
    }

    const size_t w = field.wall_nodes.size();
    field.tawss.resize(w);
    field.osi.resize(w);
#pragma omp parallel for schedule(static)
    for (size_t k = 0; k < w; ++k) {
        std::vector<std::array<double, 3>> series(field.steps);
        for (size_t s = 0; s < field.steps; ++s) {
            const double* t = field.sample(s, k);
            series[s] = {t[0], t[1], t[2]};
        }
        field.tawss[k] = tawss(series, field.dt);
        field.osi[k] = osi(series, field.dt);
    }
    return field;
}

std::array<int, 4> risk_subscores(const RiskInputs& in, const RiskOptions& opts) {
    if (in.tawss_mean < 0.0 || in.peak_wss < 0.0 || in.osi_max < 0.0 ||
        in.systolic_velocity < 0.0) {
        throw Error::usage("risk: negative metric value rejected");
    }
    std::array<int, 4> s{};
    // TAWSS: both tails are risk markers; the main-text variant doubles the
    // high tail
    if (in.tawss_mean <= 1.5) {
        s[0] = 1;
    } else if (in.tawss_mean >= 6.7) {
        s[0] = opts.tawss_main_text_rule ? 2 : 1;
    } else {
        s[0] = 0;
    }
    if (in.peak_wss >= 6.0) {
        s[1] = 2;
    } else if (in.peak_wss >= 4.0) {
        s[1] = 1;
    } else {
        s[1] = 0;
    }
    if (in.osi_max >= 0.3) {
        s[2] = 2;
    } else if (in.osi_max >= 0.15) {
        s[2] = 1;
    } else {
        s[2] = 0;
    }
    if (in.systolic_velocity >= 80.0) {
        s[3] = 2;
    } else if (in.systolic_velocity >= 50.0) {
        s[3] = 1;
    } else if (in.systolic_velocity <= 20.0) {
        s[3] = 1;
    } else {
        s[3] = 0;
    }
    return s;
}

RiskReport aggregate_risk(const std::array<int, 4>& subscores) {
    RiskReport report;
    report.subscores = subscores;
    report.average = (subscores[0] + subscores[1] + subscores[2] + subscores[3]) / 4.0;
    if (report.average < 1.0) {
        report.band = RiskBand::low;
    } else if (report.average < 2.0) {
        report.band = RiskBand::moderate;
    } else {
        report.band = RiskBand::high;
    }
    return report;
}

const char* risk_band_name(RiskBand band) {
    switch (band) {
        case RiskBand::low: return "Low";
        case RiskBand::moderate: return "Moderate";
        default: return "High";
    }
}

namespace {

double percentile99(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const size_t rank = size_t(std::ceil(0.99 * double(values.size())));
    return values[std::min(rank == 0 ? 0 : rank - 1, values.size() - 1)];
}

}  // namespace

RiskInputs hemo_metrics(const Mesh& mesh, const Trajectory& traj, const WallField& field,
                        const std::vector<uint64_t>& bulge_nodes,
                        const HemoMetricsOptions& opts) {
    RiskInputs out;
    const size_t w = field.wall_nodes.size();

    // scored wall nodes: the requested region, defaulting to the sac wall
    // (wall nodes inside the bulge set) and falling back to the whole wall
    std::vector<size_t> scored;
    std::vector<uint8_t> in_region(mesh.node_count(), 0);
    const auto& region = opts.region.empty() ? bulge_nodes : opts.region;
    for (uint64_t id : region) in_region[id] = 1;
    for (size_t k = 0; k < w; ++k) {
        if (in_region[field.wall_nodes[k]]) scored.push_back(k);
    }
    if (scored.empty()) {
        scored.resize(w);
        for (size_t k = 0; k < w; ++k) scored[k] = k;
    }

    // TAWSS mean and peaks over the scored wall region
    double tawss_acc = 0.0;
    std::vector<double> peak_per_node(scored.size(), 0.0), osi_per_node(scored.size());
    for (size_t si = 0; si < scored.size(); ++si) {
        const size_t k = scored[si];
        tawss_acc += field.tawss[k];
        osi_per_node[si] = field.osi[k];
        for (size_t s = 0; s < field.steps; ++s) {
            const double* t = field.sample(s, k);
            const double mag = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
            peak_per_node[si] = std::max(peak_per_node[si], mag);
        }
    }
    out.tawss_mean = tawss_acc / double(scored.size());
    if (opts.raw_peaks) {
        out.peak_wss = *std::max_element(peak_per_node.begin(), peak_per_node.end());
        out.osi_max = *std::max_element(osi_per_node.begin(), osi_per_node.end());
    } else {
        out.peak_wss = percentile99(peak_per_node);
        out.osi_max = percentile99(osi_per_node);
    }

    // systolic velocity: mean bulge speed at the peak-flow step
    if (!bulge_nodes.empty() && traj.steps > 0) {
        double best_speed = -1.0;
        for (size_t s = 0; s < traj.steps; ++s) {
            const float* f = traj.frame(s);
            double acc = 0.0;
            for (uint64_t id : bulge_nodes) {
                const double x = double(f[3 * id]), y = double(f[3 * id + 1]),
                             z = double(f[3 * id + 2]);
                acc += std::sqrt(x * x + y * y + z * z);
            }
            best_speed = std::max(best_speed, acc);
        }
        out.systolic_velocity = best_speed / double(bulge_nodes.size());
    }
    return out;
}

}  // namespace hsflow
