#pragma once

#include <string>

#include "core/mesh.hpp"
#include "core/waveform.hpp"

namespace hsflow {

// HSMESH binary, magic "HSM1", little-endian:
//   N u64, M u64, positions N*3 f64, tets M*4 u64, node_type N u8,
//   inlet_distance N f64, wall_normals N*3 f64.
void save_mesh(const Mesh& mesh, const std::string& path);
Mesh load_mesh(const std::string& path);

// HSTRAJ binary, magic "HST1":
//   mesh content hash (32 bytes), dt f64, T_steps u64, velocities T*N*3 f32.
// N is implied by the payload length; a T of zero round-trips with no payload.
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

// Plain text: header line "period <seconds>", then one "t q" pair per line.
void save_waveform(const Waveform& wf, const std::string& path);
Waveform load_waveform(const std::string& path);

}  // namespace hsflow
