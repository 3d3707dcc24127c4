#include "core/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "core/error.hpp"

namespace hsflow {

std::vector<uint64_t> Mesh::nodes_of_type(NodeType t) const {
    std::vector<uint64_t> out;
    for (size_t i = 0; i < node_type.size(); ++i) {
        if (node_type[i] == static_cast<uint8_t>(t)) out.push_back(i);
    }
    return out;
}

double tet_signed_volume(const double* a, const double* b, const double* c, const double* d) {
    double u[3], v[3], w[3];
    for (int k = 0; k < 3; ++k) {
        u[k] = b[k] - a[k];
        v[k] = c[k] - a[k];
        w[k] = d[k] - a[k];
    }
    const double det = u[0] * (v[1] * w[2] - v[2] * w[1]) -
                       u[1] * (v[0] * w[2] - v[2] * w[0]) +
                       u[2] * (v[0] * w[1] - v[1] * w[0]);
    return det / 6.0;
}

void fix_tet_orientation(Mesh& mesh) {
    const size_t m = mesh.tet_count();
    for (size_t e = 0; e < m; ++e) {
        uint64_t* t = &mesh.tets[4 * e];
        const double vol = tet_signed_volume(mesh.pos(t[0]), mesh.pos(t[1]),
                                             mesh.pos(t[2]), mesh.pos(t[3]));
        if (vol < 0.0) {
            std::swap(t[1], t[2]);
        } else if (vol == 0.0) {
            throw Error::format("degenerate tet " + std::to_string(e) + " (zero volume)");
        }
    }
}

void validate_mesh(const Mesh& mesh) {
    const size_t n = mesh.node_count();
    if (mesh.positions.size() != 3 * n || mesh.inlet_distance.size() != n ||
        mesh.wall_normals.size() != 3 * n) {
        throw Error::format("mesh: per-node array sizes disagree");
    }
    if (mesh.tets.size() % 4 != 0) throw Error::format("mesh: tets array not a multiple of 4");

    for (size_t e = 0; e < mesh.tet_count(); ++e) {
        const uint64_t* t = &mesh.tets[4 * e];
        for (int k = 0; k < 4; ++k) {
            if (t[k] >= n) {
                throw Error::format("mesh: tet " + std::to_string(e) +
                                    " references node " + std::to_string(t[k]) +
                                    " out of range [0," + std::to_string(n) + ")");
            }
            for (int j = k + 1; j < 4; ++j) {
                if (t[k] == t[j]) {
                    throw Error::format("mesh: tet " + std::to_string(e) +
                                        " has repeated vertex " + std::to_string(t[k]));
                }
            }
        }
        const double vol = tet_signed_volume(mesh.pos(t[0]), mesh.pos(t[1]),
                                             mesh.pos(t[2]), mesh.pos(t[3]));
        if (!(vol > 0.0)) {
            throw Error::format("mesh: tet " + std::to_string(e) +
                                " has non-positive volume " + std::to_string(vol));
        }
    }

    for (size_t i = 0; i < n; ++i) {
        if (mesh.node_type[i] > 3) {
            throw Error::format("mesh: node " + std::to_string(i) + " has unknown type code " +
                                std::to_string(int(mesh.node_type[i])));
        }
        if (!(mesh.inlet_distance[i] >= 0.0)) {
            throw Error::format("mesh: node " + std::to_string(i) + " has negative inlet distance");
        }
        if (mesh.type(i) == NodeType::inlet && mesh.inlet_distance[i] != 0.0) {
            throw Error::format("mesh: inlet node " + std::to_string(i) +
                                " has nonzero inlet distance");
        }
        const double* nrm = &mesh.wall_normals[3 * i];
        const double len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
        if (mesh.is_boundary(i)) {
            if (std::abs(len - 1.0) > 1e-6) {
                throw Error::format("mesh: boundary node " + std::to_string(i) +
                                    " has non-unit normal (|n| = " + std::to_string(len) + ")");
            }
        } else if (len != 0.0) {
            throw Error::format("mesh: interior node " + std::to_string(i) +
                                " has nonzero normal");
        }
    }
}

std::vector<std::array<uint64_t, 3>> boundary_faces(const Mesh& mesh) {
    // Face key: sorted vertex triple. Keep the oriented triple of the first
    // (only) incident tet, ordered to point away from the opposite vertex.
    std::map<std::array<uint64_t, 3>, std::pair<std::array<uint64_t, 3>, int>> faces;
    static const int local[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    for (size_t e = 0; e < mesh.tet_count(); ++e) {
        const uint64_t* t = &mesh.tets[4 * e];
        for (const auto& f : local) {
            std::array<uint64_t, 3> tri = {t[f[0]], t[f[1]], t[f[2]]};
            std::array<uint64_t, 3> key = tri;
            std::sort(key.begin(), key.end());
            auto it = faces.find(key);
            if (it == faces.end()) {
                faces.emplace(key, std::make_pair(tri, 1));
            } else {
                it->second.second += 1;
            }
        }
    }
    std::vector<std::array<uint64_t, 3>> out;
    for (const auto& [key, v] : faces) {
        if (v.second == 1) out.push_back(v.first);
    }
    return out;
}

void compute_boundary_normals(Mesh& mesh) {
    const size_t n = mesh.node_count();
    mesh.wall_normals.assign(3 * n, 0.0);
    for (const auto& tri : boundary_faces(mesh)) {
        const double* a = mesh.pos(tri[0]);
        const double* b = mesh.pos(tri[1]);
        const double* c = mesh.pos(tri[2]);
        double u[3], v[3];
        for (int k = 0; k < 3; ++k) {
            u[k] = b[k] - a[k];
            v[k] = c[k] - a[k];
        }
        // cross product length = 2x area, so this accumulates area-weighted normals
        const double nx = u[1] * v[2] - u[2] * v[1];
        const double ny = u[2] * v[0] - u[0] * v[2];
        const double nz = u[0] * v[1] - u[1] * v[0];
        for (int k = 0; k < 3; ++k) {
            mesh.wall_normals[3 * tri[k] + 0] += nx;
            mesh.wall_normals[3 * tri[k] + 1] += ny;
            mesh.wall_normals[3 * tri[k] + 2] += nz;
        }
    }
    for (size_t i = 0; i < n; ++i) {
        double* nrm = &mesh.wall_normals[3 * i];
        const double len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
        if (mesh.is_boundary(i) && len > 0.0) {
            nrm[0] /= len;
            nrm[1] /= len;
            nrm[2] /= len;
        } else {
            nrm[0] = nrm[1] = nrm[2] = 0.0;
        }
    }
}

Digest mesh_content_hash(const Mesh& mesh) {
    DigestBuilder b;
    const uint64_t n = mesh.node_count(), m = mesh.tet_count();
    b.update_pod(n);
    b.update_pod(m);
    b.update_vec(mesh.positions);
    b.update_vec(mesh.tets);
    b.update_vec(mesh.node_type);
    b.update_vec(mesh.inlet_distance);
    b.update_vec(mesh.wall_normals);
    return b.finish();
}

}  // namespace hsflow
