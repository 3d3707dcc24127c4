#include "core/mesh_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "core/binio.hpp"

namespace hsflow {

void save_mesh(const Mesh& mesh, const std::string& path) {
    auto out = open_output(path);
    BinWriter w(out, path);
    w.write_raw("HSM1", 4);
    w.write_pod<uint64_t>(mesh.node_count());
    w.write_pod<uint64_t>(mesh.tet_count());
    w.write_vec(mesh.positions);
    w.write_vec(mesh.tets);
    w.write_vec(mesh.node_type);
    w.write_vec(mesh.inlet_distance);
    w.write_vec(mesh.wall_normals);
}

Mesh load_mesh(const std::string& path) {
    auto in = open_input(path);
    BinReader r(in, path);
    r.expect_magic("HSM1");
    const uint64_t n = r.read_u64("node count");
    const uint64_t m = r.read_u64("tet count");
    Mesh mesh;
    r.read_vec(mesh.positions, 3 * n, "positions");
    r.read_vec(mesh.tets, 4 * m, "tets");
    r.read_vec(mesh.node_type, n, "node types");
    r.read_vec(mesh.inlet_distance, n, "inlet distances");
    r.read_vec(mesh.wall_normals, 3 * n, "wall normals");
    validate_mesh(mesh);
    return mesh;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
    auto out = open_output(path);
    BinWriter w(out, path);
    w.write_raw("HST1", 4);
    w.write_raw(traj.mesh_hash.data(), traj.mesh_hash.size());
    w.write_pod(traj.dt);
    w.write_pod<uint64_t>(traj.steps);
    w.write_vec(traj.velocity);
}

Trajectory load_trajectory(const std::string& path) {
    auto in = open_input(path);
    BinReader r(in, path);
    r.expect_magic("HST1");
    Trajectory traj;
    r.read_raw(traj.mesh_hash.data(), traj.mesh_hash.size(), "mesh hash");
    traj.dt = r.read_f64("dt");
    traj.steps = r.read_u64("step count");
    if (traj.steps == 0) {
        traj.nodes = 0;
        return traj;
    }
    // N is implied: the rest of the file must be steps * N * 3 f32 values
    const uint64_t header_end = r.offset();
    in.seekg(0, std::ios::end);
    const uint64_t total = static_cast<uint64_t>(in.tellg());
    in.seekg(static_cast<std::streamoff>(header_end), std::ios::beg);
    const uint64_t payload = total - header_end;
    const uint64_t frame_bytes = traj.steps * 3 * sizeof(float);
    if (payload % frame_bytes != 0) {
        throw Error::format(path + ": payload of " + std::to_string(payload) +
                            " bytes at offset " + std::to_string(header_end) +
                            " is not a whole number of " + std::to_string(traj.steps) +
                            "-step velocity frames");
    }
    traj.nodes = payload / frame_bytes;
    r.read_vec(traj.velocity, traj.steps * traj.nodes * 3, "velocities");
    return traj;
}

void save_waveform(const Waveform& wf, const std::string& path) {
    wf.validate();
    auto out = open_output(path);
    out.precision(17);
    out << "period " << wf.period << "\n";
    for (size_t i = 0; i < wf.t.size(); ++i) {
        out << wf.t[i] << " " << wf.q[i] << "\n";
    }
    if (!out) throw Error::usage(path + ": write failed");
}

Waveform load_waveform(const std::string& path) {
    auto in = open_input(path);
    std::string word;
    Waveform wf;
    if (!(in >> word) || word != "period" || !(in >> wf.period)) {
        throw Error::format(path + ": expected header line \"period <seconds>\"");
    }
    double t, q;
    while (in >> t >> q) {
        wf.t.push_back(t);
        wf.q.push_back(q);
    }
    if (!in.eof()) throw Error::format(path + ": malformed sample line");
    wf.validate();
    return wf;
}

}  // namespace hsflow
