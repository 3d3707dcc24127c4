#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/error.hpp"

namespace hsflow {

namespace {

// Polar disk triangulation: ring k of K carries 6k nodes at radius R k/K,
// plus the center node. Returns node positions (y,z) and triangles.
struct DiskMesh {
    std::vector<double> yz;                       // n x 2
    std::vector<std::array<uint32_t, 3>> tris;
    std::vector<uint32_t> rim;                    // nodes on the outer ring
};

DiskMesh make_disk(double radius, int rings) {
    DiskMesh d;
    std::vector<std::vector<uint32_t>> ring_nodes(rings + 1);
    d.yz.push_back(0.0);
    d.yz.push_back(0.0);
    ring_nodes[0] = {0};
    for (int k = 1; k <= rings; ++k) {
        const int cnt = 6 * k;
        const double r = radius * double(k) / double(rings);
        for (int j = 0; j < cnt; ++j) {
            const double th = 2.0 * M_PI * double(j) / double(cnt);
            ring_nodes[k].push_back(static_cast<uint32_t>(d.yz.size() / 2));
            d.yz.push_back(r * std::cos(th));
            d.yz.push_back(r * std::sin(th));
        }
    }
    d.rim = ring_nodes[rings];

    // stitch annuli with a two-pointer walk over node angles
    for (int k = 1; k <= rings; ++k) {
        const auto& inner = ring_nodes[k - 1];
        const auto& outer = ring_nodes[k];
        const size_t ni = inner.size(), no = outer.size();
        if (ni == 1) {
            // fan around the center node
            for (size_t j = 0; j < no; ++j) {
                d.tris.push_back({outer[j], outer[(j + 1) % no], inner[0]});
            }
            continue;
        }
        auto angle = [](size_t j, size_t n) { return 2.0 * M_PI * double(j) / double(n); };
        size_t i = 0, o = 0;
        while (i < ni || o < no) {
            const double next_i = (i < ni) ? angle(i + 1, ni) : 1e30;
            const double next_o = (o < no) ? angle(o + 1, no) : 1e30;
            if (next_o <= next_i) {
                // triangle (outer[o], outer[o+1], inner[i])
                d.tris.push_back({outer[o % no], outer[(o + 1) % no], inner[i % ni]});
                ++o;
            } else {
                d.tris.push_back({inner[i % ni], outer[o % no], inner[(i + 1) % ni]});
                ++i;
            }
        }
    }
    return d;
}

// Split the prism (v0,v1,v2 bottom / +off top) into 3 tets with quad diagonals
// anchored at the lower global id, which keeps neighbouring prisms conforming.
void split_prism(uint64_t a, uint64_t b, uint64_t c, uint64_t off,
                 std::vector<uint64_t>& tets) {
    // rotate so the smallest id leads
    uint64_t v[3] = {a, b, c};
    int s = 0;
    if (v[1] < v[s]) s = 1;
    if (v[2] < v[s]) s = 2;
    const uint64_t v0 = v[s], v1 = v[(s + 1) % 3], v2 = v[(s + 2) % 3];
    const uint64_t v0t = v0 + off, v1t = v1 + off, v2t = v2 + off;
    auto emit = [&](uint64_t p, uint64_t q, uint64_t r, uint64_t s_) {
        tets.insert(tets.end(), {p, q, r, s_});
    };
    if (v1 < v2) {
        emit(v0, v1, v2, v2t);
        emit(v0, v1, v2t, v1t);
        emit(v0, v1t, v2t, v0t);
    } else {
        emit(v0, v1, v2, v1t);
        emit(v0, v1t, v2, v2t);
        emit(v0, v1t, v2t, v0t);
    }
}

// Radial inflation factor of the tube at axial position x and angular
// direction u = cos(angle from +y). A C1 bump in both coordinates, peaking at
// the sphere's outer extent offset + radius; smoothness keeps the mapped
// elements well-shaped at any resolution.
double bulge_scale(double x, double u, const GeomSpec& g) {
    if (g.bulge_radius <= 0.0) return 1.0;
    const double half_width = std::min(1.4 * g.bulge_radius, 0.45 * g.tube_length);
    const double xi = (x - g.tube_length / 2.0) / half_width;
    if (std::abs(xi) >= 1.0) return 1.0;
    const double bx = (1.0 - xi * xi) * (1.0 - xi * xi);
    const double bc = 0.25 * (1.0 + u) * (1.0 + u);
    const double amp = g.bulge_offset + g.bulge_radius - g.tube_radius;
    return 1.0 + (amp / g.tube_radius) * bx * bc;
}

struct Field {
    const GeomSpec* geom;
    double axial_peak;    // 2 Q_ref / (pi r^2), mm/s
    double swirl_scale;   // multiplies the raw swirl ansatz
    double swirl_radius;  // support ball radius, kept clear of every wall node

    // spatial shape S(p); the stored field is Q(t)/Q_ref * S(p)
    void eval(const double* p, double* u) const {
        const double rt = geom->tube_radius;
        const double rho2 = (p[1] * p[1] + p[2] * p[2]) / (rt * rt);
        u[0] = axial_peak * std::max(0.0, 1.0 - rho2);
        u[1] = 0.0;
        u[2] = 0.0;
        if (swirl_radius > 0.0 && swirl_scale != 0.0) {
            const double rs = swirl_radius;
            const double dx = p[0] - geom->tube_length / 2.0;
            const double dy = p[1] - geom->bulge_offset;
            const double dz = p[2];
            const double s2 = (dx * dx + dy * dy + dz * dz) / (rs * rs);
            if (s2 < 1.0) {
                // curl of (1-s^2)^2 e_z: solenoidal swirl vanishing at the ball
                const double f = -4.0 * (1.0 - s2) / (rs * rs);
                u[0] += swirl_scale * f * dy;
                u[1] += swirl_scale * -f * dx;
            }
        }
    }
};

}  // namespace

SyntheticCase generate_synthetic_case(const GeomSpec& geom, const FlowSpec& flow) {
    if (!(geom.target_edge_length > 0.0)) {
        throw Error::usage("synth: target_edge_length must be positive");
    }
    if (!(geom.tube_radius > 0.0) || !(geom.tube_length > 0.0)) {
        throw Error::usage("synth: tube dimensions must be positive");
    }
    if (geom.bulge_radius > 0.0) {
        if (!(geom.bulge_radius < geom.tube_length / 2.0)) {
            throw Error::usage("synth: bulge_radius must be below tube_length/2");
        }
        if (geom.bulge_offset + geom.bulge_radius <= geom.tube_radius) {
            throw Error::usage("synth: degenerate geometry, bulge swallowed by the tube "
                               "(offset + radius <= tube radius)");
        }
        if (geom.bulge_offset < 0.0) throw Error::usage("synth: bulge_offset must be >= 0");
    }

    const double h = geom.target_edge_length;
    // Nodal quadrature of the parabolic inflow converges as ~0.67/rings^2, so
    // disks dense enough to matter (>= 50 inlet nodes, i.e. >= 4 rings) get at
    // least 8 rings to keep the discrete flux within 2% of Q. Coarser requests
    // stay at 3 rings and trade quadrature accuracy for cheap training steps.
    const int raw_rings = int(std::lround(geom.tube_radius / (0.75 * h)));
    const int rings = raw_rings <= 3 ? 3 : std::max(raw_rings, 8);
    const int layers = std::max(2, int(std::lround(geom.tube_length / h)));

    DiskMesh disk = make_disk(geom.tube_radius, rings);
    const size_t dn = disk.yz.size() / 2;
    std::vector<bool> on_rim(dn, false);
    for (uint32_t r : disk.rim) on_rim[r] = true;

    SyntheticCase out;
    Mesh& mesh = out.mesh;
    const size_t n = dn * size_t(layers + 1);
    mesh.positions.resize(3 * n);
    mesh.node_type.assign(n, uint8_t(NodeType::interior));
    mesh.inlet_distance.resize(n);

    for (int j = 0; j <= layers; ++j) {
        const double x = geom.tube_length * double(j) / double(layers);
        for (size_t i = 0; i < dn; ++i) {
            const size_t id = size_t(j) * dn + i;
            const double y = disk.yz[2 * i], z = disk.yz[2 * i + 1];
            double px = x, py = y, pz = z;
            const double r = std::sqrt(y * y + z * z);
            if (r > 0.0 && geom.bulge_radius > 0.0) {
                const double scale = bulge_scale(x, y / r, geom);
                py *= scale;
                pz *= scale;
            }
            mesh.positions[3 * id + 0] = px;
            mesh.positions[3 * id + 1] = py;
            mesh.positions[3 * id + 2] = pz;
            mesh.inlet_distance[id] = px;
            if (j == 0) {
                mesh.node_type[id] = uint8_t(NodeType::inlet);
            } else if (j == layers) {
                mesh.node_type[id] = uint8_t(NodeType::outlet);
            } else if (on_rim[i]) {
                mesh.node_type[id] = uint8_t(NodeType::wall);
            }
        }
    }

    mesh.tets.reserve(disk.tris.size() * size_t(layers) * 12);
    for (int j = 0; j < layers; ++j) {
        const uint64_t base = uint64_t(j) * dn;
        for (const auto& tri : disk.tris) {
            split_prism(base + tri[0], base + tri[1], base + tri[2], dn, mesh.tets);
        }
    }
    fix_tet_orientation(mesh);
    compute_boundary_normals(mesh);
    validate_mesh(mesh);

    // ---- analytic ground truth ------------------------------------------
    out.waveform = make_waveform(flow.waveform);
    const double q_ref = out.waveform.mean_flow();
    Field field;
    field.geom = &geom;
    field.axial_peak = 2.0 * q_ref / (M_PI * geom.tube_radius * geom.tube_radius);
    field.swirl_scale = 0.0;
    field.swirl_radius = 0.0;
    if (geom.bulge_radius > 0.0 && flow.swirl_fraction > 0.0) {
        // shrink the swirl support until it clears every wall node, so wall
        // velocities are zero analytically rather than by clipping
        double rs = geom.bulge_radius;
        const double cx = geom.tube_length / 2.0;
        for (size_t i = 0; i < n; ++i) {
            if (mesh.type(i) != NodeType::wall) continue;
            const double* p = mesh.pos(i);
            const double dx = p[0] - cx, dy = p[1] - geom.bulge_offset, dz = p[2];
            rs = std::min(rs, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
        field.swirl_radius = rs;
        // normalize the raw swirl so its peak speed over mesh nodes matches
        // swirl_fraction * mean axial speed
        field.swirl_scale = 1.0;
        double raw_peak = 0.0;
        double u[3];
        Field probe = field;
        probe.axial_peak = 0.0;
        for (size_t i = 0; i < n; ++i) {
            probe.eval(mesh.pos(i), u);
            raw_peak = std::max(raw_peak, std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]));
        }
        const double mean_axial = q_ref / (M_PI * geom.tube_radius * geom.tube_radius);
        field.swirl_scale = raw_peak > 0.0
                                ? flow.swirl_fraction * mean_axial / raw_peak
                                : 0.0;
    }

    Trajectory& traj = out.trajectory;
    traj.mesh_hash = mesh_content_hash(mesh);
    traj.dt = flow.dt;
    traj.steps = uint64_t(std::lround(out.waveform.period / flow.dt)) + 1;
    traj.nodes = n;
    traj.velocity.assign(traj.steps * n * 3, 0.0f);
    for (uint64_t s = 0; s < traj.steps; ++s) {
        const double t = double(s) * flow.dt;
        const double w = out.waveform.flow_at(t) / q_ref;
        float* frame = traj.frame(s);
        for (size_t i = 0; i < n; ++i) {
            if (mesh.type(i) == NodeType::wall) continue;  // walls stay exactly zero
            double u[3];
            field.eval(mesh.pos(i), u);
            frame[3 * i + 0] = float(w * u[0]);
            frame[3 * i + 1] = float(w * u[1]);
            frame[3 * i + 2] = float(w * u[2]);
        }
    }

    // sac nodes: inside the swirl ball and outside the parent lumen
    if (geom.bulge_radius > 0.0) {
        const double rs = field.swirl_radius > 0.0 ? field.swirl_radius : geom.bulge_radius;
        for (size_t i = 0; i < n; ++i) {
            const double* p = mesh.pos(i);
            const double dx = p[0] - geom.tube_length / 2.0;
            const double dy = p[1] - geom.bulge_offset;
            const double dz = p[2];
            const double rr = p[1] * p[1] + p[2] * p[2];
            if (dx * dx + dy * dy + dz * dz < rs * rs * 0.998 &&
                rr > geom.tube_radius * geom.tube_radius) {
                out.bulge_nodes.push_back(i);
            }
        }
    }
    return out;
}

InletProfile inlet_profile(const Mesh& mesh, const Waveform& waveform, double t,
                           double planar_tol) {
    InletProfile prof;
    prof.nodes = mesh.nodes_of_type(NodeType::inlet);
    if (prof.nodes.empty()) throw Error::usage("inlet_profile: mesh has no inlet nodes");
    const size_t k = prof.nodes.size();

    double centroid[3] = {0, 0, 0};
    for (uint64_t id : prof.nodes) {
        for (int c = 0; c < 3; ++c) centroid[c] += mesh.pos(id)[c];
    }
    for (int c = 0; c < 3; ++c) centroid[c] /= double(k);

    // plane normal from area-weighted boundary faces lying entirely on the
    // inlet; node normals are polluted by wall faces at the rim
    double nrm[3] = {0, 0, 0};
    for (const auto& tri : boundary_faces(mesh)) {
        if (mesh.type(tri[0]) != NodeType::inlet || mesh.type(tri[1]) != NodeType::inlet ||
            mesh.type(tri[2]) != NodeType::inlet) {
            continue;
        }
        const double* a = mesh.pos(tri[0]);
        const double* b = mesh.pos(tri[1]);
        const double* c = mesh.pos(tri[2]);
        double u[3], v[3];
        for (int k = 0; k < 3; ++k) {
            u[k] = b[k] - a[k];
            v[k] = c[k] - a[k];
        }
        nrm[0] += u[1] * v[2] - u[2] * v[1];
        nrm[1] += u[2] * v[0] - u[0] * v[2];
        nrm[2] += u[0] * v[1] - u[1] * v[0];
    }
    double len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
    if (len == 0.0) {
        // tiny inlet without interior faces: fall back to node normals
        for (uint64_t id : prof.nodes) {
            for (int c = 0; c < 3; ++c) nrm[c] += mesh.wall_normals[3 * id + c];
        }
        len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
        if (len == 0.0) throw Error::usage("inlet_profile: inlet nodes carry no normals");
    }
    for (int c = 0; c < 3; ++c) nrm[c] /= len;

    double radius = 0.0;
    double max_off = 0.0;
    for (uint64_t id : prof.nodes) {
        double d[3];
        for (int c = 0; c < 3; ++c) d[c] = mesh.pos(id)[c] - centroid[c];
        const double off = d[0] * nrm[0] + d[1] * nrm[1] + d[2] * nrm[2];
        max_off = std::max(max_off, std::abs(off));
        double r2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double tang = d[c] - off * nrm[c];
            r2 += tang * tang;
        }
        radius = std::max(radius, std::sqrt(r2));
    }
    if (radius <= 0.0) throw Error::usage("inlet_profile: inlet has zero radius");
    if (max_off > planar_tol * radius) {
        throw Error::usage("inlet_profile: inlet is not planar (offset " +
                           std::to_string(max_off) + " mm exceeds tolerance)");
    }

    const double q = waveform.flow_at(t);
    const double vmax = 2.0 * q / (M_PI * radius * radius);
    // flow enters the domain: opposite of the outward normal
    double inward[3] = {-nrm[0], -nrm[1], -nrm[2]};

    prof.velocity.resize(3 * k);
    for (size_t i = 0; i < k; ++i) {
        const uint64_t id = prof.nodes[i];
        double d[3];
        for (int c = 0; c < 3; ++c) d[c] = mesh.pos(id)[c] - centroid[c];
        const double off = d[0] * nrm[0] + d[1] * nrm[1] + d[2] * nrm[2];
        double r2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double tang = d[c] - off * nrm[c];
            r2 += tang * tang;
        }
        const double speed = std::max(0.0, vmax * (1.0 - r2 / (radius * radius)));
        for (int c = 0; c < 3; ++c) prof.velocity[3 * i + c] = speed * inward[c];
    }
    for (int c = 0; c < 3; ++c) {
        prof.center[c] = centroid[c];
        prof.normal[c] = inward[c];
    }
    prof.radius = radius;
    return prof;
}

std::vector<double> inlet_node_areas(const Mesh& mesh) {
    std::vector<double> areas(mesh.node_count(), 0.0);
    for (const auto& tri : boundary_faces(mesh)) {
        if (mesh.type(tri[0]) != NodeType::inlet || mesh.type(tri[1]) != NodeType::inlet ||
            mesh.type(tri[2]) != NodeType::inlet) {
            continue;
        }
        const double* a = mesh.pos(tri[0]);
        const double* b = mesh.pos(tri[1]);
        const double* c = mesh.pos(tri[2]);
        double u[3], v[3];
        for (int k = 0; k < 3; ++k) {
            u[k] = b[k] - a[k];
            v[k] = c[k] - a[k];
        }
        const double nx = u[1] * v[2] - u[2] * v[1];
        const double ny = u[2] * v[0] - u[0] * v[2];
        const double nz = u[0] * v[1] - u[1] * v[0];
        const double area = 0.5 * std::sqrt(nx * nx + ny * ny + nz * nz);
        for (int k = 0; k < 3; ++k) areas[tri[k]] += area / 3.0;
    }
    return areas;
}

InflowStats inflow_stats(const InletProfile& profile) {
    InflowStats st;
    st.min = 1e300;
    st.max = -1e300;
    const size_t k = profile.nodes.size();
    for (size_t i = 0; i < k; ++i) {
        const double* v = &profile.velocity[3 * i];
        const double speed = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        st.mean += speed;
        st.min = std::min(st.min, speed);
        st.max = std::max(st.max, speed);
    }
    st.mean /= double(k);
    return st;
}

}  // namespace hsflow
