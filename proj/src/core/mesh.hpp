#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/digest.hpp"

namespace hsflow {

enum class NodeType : uint8_t {
    interior = 0,
    wall = 1,
    inlet = 2,
    outlet = 3,
};

// Tetrahedral volume mesh. Units: positions in millimeters.
// wall_normals holds outward unit normals for boundary nodes and zeros for
// interior ones.
struct Mesh {
    std::vector<double> positions;       // N x 3, row-major
    std::vector<uint64_t> tets;          // M x 4
    std::vector<uint8_t> node_type;      // N
    std::vector<double> inlet_distance;  // N, mm, 0 on inlet nodes
    std::vector<double> wall_normals;    // N x 3

    size_t node_count() const { return node_type.size(); }
    size_t tet_count() const { return tets.size() / 4; }

    const double* pos(size_t i) const { return &positions[3 * i]; }
    NodeType type(size_t i) const { return static_cast<NodeType>(node_type[i]); }
    bool is_boundary(size_t i) const { return node_type[i] != 0; }

    std::vector<uint64_t> nodes_of_type(NodeType t) const;
};

double tet_signed_volume(const double* a, const double* b, const double* c, const double* d);

// Swaps two vertices of any negatively oriented tet so all signed volumes are
// positive. Throws if a tet is degenerate (repeated vertex or zero volume).
void fix_tet_orientation(Mesh& mesh);

// Structural invariants: index ranges, distinct vertices, positive volumes,
// inlet distances, boundary normals. Throws Error::format on violation.
void validate_mesh(const Mesh& mesh);

// Boundary faces are faces incident to exactly one tet. Returns triples of
// node indices oriented so the right-hand normal points out of the domain.
std::vector<std::array<uint64_t, 3>> boundary_faces(const Mesh& mesh);

// Area-weighted average of incident boundary-face normals, normalized.
// Fills wall_normals for every boundary node; interior rows are zeroed.
void compute_boundary_normals(Mesh& mesh);

Digest mesh_content_hash(const Mesh& mesh);

// Velocity snapshots of one cardiac cycle on a fixed mesh. Values are stored
// in binary32 exactly as they live on disk.
struct Trajectory {
    Digest mesh_hash{};
    double dt = 0.01;  // seconds
    uint64_t steps = 0;
    uint64_t nodes = 0;
    std::vector<float> velocity;  // steps x nodes x 3, mm/s

    const float* frame(size_t t) const { return &velocity[t * nodes * 3]; }
    float* frame(size_t t) { return &velocity[t * nodes * 3]; }
};

}  // namespace hsflow
