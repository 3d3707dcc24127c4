#pragma once

#include <cstdint>
#include <vector>

#include "core/mesh.hpp"
#include "core/waveform.hpp"

namespace hsflow {

// Straight tube along +x with an optional spherical side bulge. All lengths mm.
struct GeomSpec {
    double tube_radius = 2.0;
    double tube_length = 12.0;
    double bulge_radius = 2.5;   // 0 disables the bulge
    double bulge_offset = 3.0;   // distance of the bulge center from the axis, +y
    double target_edge_length = 0.6;
};

struct FlowSpec {
    WaveformParams waveform;
    double dt = 0.01;          // seconds between stored steps
    double swirl_fraction = 0.8;  // peak bulge speed relative to mean axial speed
};

struct SyntheticCase {
    Mesh mesh;
    Waveform waveform;
    Trajectory trajectory;
    std::vector<uint64_t> bulge_nodes;  // sac region: inside the sphere, outside the tube
};

// Structured tube mesh (layered disk triangulation, prisms split into tets)
// mapped onto the union of the cylinder and the bulge sphere, plus an analytic
// ground-truth cycle: clamped Poiseuille flow scaled by the waveform and a
// divergence-free swirl confined to the sphere, both linear in Q(t).
SyntheticCase generate_synthetic_case(const GeomSpec& geom, const FlowSpec& flow);

struct InletProfile {
    std::vector<uint64_t> nodes;    // inlet node ids
    std::vector<double> velocity;   // |nodes| x 3, mm/s
    double center[3];
    double radius = 0.0;
    double normal[3];               // inward flow direction
};

// Parabolic profile v(r) = v_max (1 - r^2/R^2) along the inward inlet normal
// with v_max = 2 Q(t) / (pi R^2). Requires an inlet that is planar within
// `planar_tol` (relative to R).
InletProfile inlet_profile(const Mesh& mesh, const Waveform& waveform, double t,
                           double planar_tol = 1e-6);

// Quadrature weights for surface integrals over the inlet disk: one third of
// the area of each incident inlet boundary face.
std::vector<double> inlet_node_areas(const Mesh& mesh);

// Per-node speeds of the prescribed profile at time t, for inflow statistics.
struct InflowStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};
InflowStats inflow_stats(const InletProfile& profile);

}  // namespace hsflow
