#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "core/digest.hpp"
#include "core/mesh.hpp"

namespace hsflow {

// Symmetric boolean CSR pattern. No self loops, columns sorted and unique
// within each row; edge (i,j) always implies (j,i).
struct Adjacency {
    std::vector<uint64_t> row_offsets;  // N + 1
    std::vector<uint64_t> cols;         // nnz

    size_t num_nodes() const { return row_offsets.empty() ? 0 : row_offsets.size() - 1; }
    size_t nnz() const { return cols.size(); }
    size_t degree(size_t i) const { return row_offsets[i + 1] - row_offsets[i]; }
    std::span<const uint64_t> row(size_t i) const {
        return {cols.data() + row_offsets[i], degree(i)};
    }
    bool has_edge(uint64_t i, uint64_t j) const;
};

// Build a CSR pattern from undirected pairs; symmetrizes and deduplicates.
// Self loops are rejected.
Adjacency adjacency_from_pairs(size_t n, const std::vector<std::pair<uint64_t, uint64_t>>& pairs);

// Asserts the structural invariants (symmetry, zero diagonal, sorted unique
// columns). Throws Error::usage on violation.
void validate_adjacency(const Adjacency& adj);

Digest adjacency_hash(const Adjacency& adj);

// For each stored entry (i,j), the index of the mirrored entry (j,i).
// Requires a symmetric pattern.
std::vector<uint64_t> transpose_permutation(const Adjacency& adj);

// Edge (i,j) iff i != j and both appear in at least one common tet.
Adjacency build_adjacency(const Mesh& mesh);

// Adds round(fraction * nnz/2) random symmetric pairs between previously
// non-adjacent distinct nodes. Deterministic given the seed. Throws if more
// pairs are requested than exist.
Adjacency add_random_jumpers(const Adjacency& adj, double fraction, uint64_t seed,
                             std::vector<std::pair<uint64_t, uint64_t>>* added = nullptr);

// Connects ceil(fraction * |inlet|) lowest-index inlet nodes to every other
// node. Returns the selected global nodes.
Adjacency add_global_attention(const Adjacency& adj, const Mesh& mesh, double fraction,
                               std::vector<uint64_t>* global_nodes = nullptr);

// Support of A + A^2 with the diagonal removed. With strict_a2, the support
// of A^2 alone (an edge iff a common neighbour exists), diagonal removed.
Adjacency dilate(const Adjacency& adj, bool strict_a2 = false);

struct AugmentConfig {
    double jumper_fraction = 0.20;
    double global_fraction = 0.05;
    int layers = 15;
    int heads = 8;
    int dilated_layer_count = 5;  // trailing layers with dilated masks on half the heads
    bool strict_a2 = false;
    uint64_t seed = 0;
};

struct AugmentedAdjacency {
    Adjacency base;     // (A U jumpers) U global edges
    Adjacency dilated;  // dilation of base
    std::vector<uint8_t> head_uses_dilated;  // layers x heads
    std::vector<std::pair<uint64_t, uint64_t>> jumper_edges;
    std::vector<uint64_t> global_nodes;
    int layers = 0;
    int heads = 0;

    bool dilated_on(int layer, int head) const {
        return head_uses_dilated[size_t(layer) * heads + head] != 0;
    }
    const Adjacency& mask_for(int layer, int head) const {
        return dilated_on(layer, head) ? dilated : base;
    }
};

// Composition order: jumpers, then global attention, then dilation of the
// fully augmented base. The trailing dilated_layer_count layers put the
// dilated mask on the upper half of the heads.
AugmentedAdjacency assemble(const Adjacency& adj, const Mesh& mesh, const AugmentConfig& cfg);

// Restriction of both masks to a node subset (local ids follow `nodes` order).
AugmentedAdjacency restrict_augmented(const AugmentedAdjacency& aug,
                                      const std::vector<uint64_t>& nodes);

struct MaskResult {
    Adjacency visible;                  // induced subgraph on the visible nodes
    std::vector<uint64_t> visible_nodes;  // local -> global
    std::vector<uint64_t> hidden_nodes;   // global, sorted
};

// Hides round(ratio * N) nodes and removes every edge touching them. Visible
// nodes that end up isolated force a resample (bounded retries); stragglers
// are moved into the hidden set so no attention row goes empty.
MaskResult mask_nodes(const Adjacency& adj, double ratio, uint64_t seed);

// Greedy multi-source BFS partition with boundary rebalancing. Parts are
// disjoint, cover all nodes, and stay connected for connected inputs.
std::vector<std::vector<uint64_t>> partition(const Adjacency& adj, size_t k);

struct Subgraph {
    Adjacency adj;
    std::vector<uint64_t> nodes;  // local -> global
};

// Exactly edge_budget undirected edges drawn without replacement, plus their
// incident nodes. The subgraph keeps only the sampled edges.
Subgraph sample_neighbor_subgraph(const Adjacency& adj, size_t edge_budget, uint64_t seed);

// Induced subgraph on a sorted node subset.
Adjacency induce(const Adjacency& adj, const std::vector<uint64_t>& nodes);

}  // namespace hsflow
