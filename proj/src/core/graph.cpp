#include "core/graph.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>
#include <unordered_map>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace hsflow {

bool Adjacency::has_edge(uint64_t i, uint64_t j) const {
    auto r = row(i);
    return std::binary_search(r.begin(), r.end(), j);
}

Adjacency adjacency_from_pairs(size_t n,
                               const std::vector<std::pair<uint64_t, uint64_t>>& pairs) {
    std::vector<std::vector<uint64_t>> rows(n);
    for (const auto& [a, b] : pairs) {
        if (a == b) throw Error::usage("adjacency: self loop rejected");
        if (a >= n || b >= n) throw Error::usage("adjacency: node index out of range");
        rows[a].push_back(b);
        rows[b].push_back(a);
    }
    Adjacency adj;
    adj.row_offsets.resize(n + 1, 0);
    for (size_t i = 0; i < n; ++i) {
        auto& r = rows[i];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        adj.row_offsets[i + 1] = adj.row_offsets[i] + r.size();
    }
    adj.cols.reserve(adj.row_offsets[n]);
    for (auto& r : rows) adj.cols.insert(adj.cols.end(), r.begin(), r.end());
    return adj;
}

void validate_adjacency(const Adjacency& adj) {
    const size_t n = adj.num_nodes();
    if (adj.row_offsets.empty() || adj.row_offsets[0] != 0 ||
        adj.row_offsets[n] != adj.cols.size()) {
        throw Error::usage("adjacency: malformed row offsets");
    }
    for (size_t i = 0; i < n; ++i) {
        auto r = adj.row(i);
        for (size_t k = 0; k < r.size(); ++k) {
            if (r[k] >= n) throw Error::usage("adjacency: column out of range");
            if (r[k] == i) throw Error::usage("adjacency: self loop present");
            if (k > 0 && r[k] <= r[k - 1]) {
                throw Error::usage("adjacency: columns not sorted unique");
            }
            if (!adj.has_edge(r[k], i)) throw Error::usage("adjacency: not symmetric");
        }
    }
}

Digest adjacency_hash(const Adjacency& adj) {
    DigestBuilder b;
    b.update_vec(adj.row_offsets);
    b.update_vec(adj.cols);
    return b.finish();
}

std::vector<uint64_t> transpose_permutation(const Adjacency& adj) {
    const size_t n = adj.num_nodes();
    std::vector<uint64_t> perm(adj.nnz());
    for (size_t i = 0; i < n; ++i) {
        for (uint64_t e = adj.row_offsets[i]; e < adj.row_offsets[i + 1]; ++e) {
            const uint64_t j = adj.cols[e];
            if (j < i) continue;  // handled when row j was walked
            // find entry (j, i): columns of row j are sorted, i appears once
            auto r = adj.row(j);
            auto it = std::lower_bound(r.begin(), r.end(), i);
            if (it == r.end() || *it != i) {
                throw Error::usage("adjacency: transpose of an asymmetric pattern");
            }
            const uint64_t mirror = adj.row_offsets[j] + uint64_t(it - r.begin());
            perm[e] = mirror;
            perm[mirror] = e;
        }
    }
    return perm;
}

Adjacency build_adjacency(const Mesh& mesh) {
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    pairs.reserve(mesh.tet_count() * 6);
    for (size_t e = 0; e < mesh.tet_count(); ++e) {
        const uint64_t* t = &mesh.tets[4 * e];
        for (int a = 0; a < 4; ++a) {
            for (int b = a + 1; b < 4; ++b) pairs.emplace_back(t[a], t[b]);
        }
    }
    return adjacency_from_pairs(mesh.node_count(), pairs);
}

Adjacency add_random_jumpers(const Adjacency& adj, double fraction, uint64_t seed,
                             std::vector<std::pair<uint64_t, uint64_t>>* added) {
    if (fraction < 0.0 || fraction >= 1.0) {
        throw Error::usage("jumpers: fraction must be in [0,1)");
    }
    const size_t n = adj.num_nodes();
    if (n < 2) throw Error::usage("jumpers: need at least 2 nodes");
    const uint64_t want = uint64_t(std::llround(fraction * double(adj.nnz() / 2)));
    if (added) added->clear();
    if (want == 0) return adj;

    const uint64_t total_pairs = uint64_t(n) * (n - 1) / 2;
    const uint64_t available = total_pairs - adj.nnz() / 2;
    if (want > available) {
        throw Error::usage("jumpers: requested " + std::to_string(want) +
                           " pairs but only " + std::to_string(available) +
                           " non-adjacent pairs exist");
    }

    Rng rng(seed);
    std::vector<std::pair<uint64_t, uint64_t>> picked;
    auto already = [&](uint64_t a, uint64_t b) {
        for (const auto& p : picked) {
            if (p.first == a && p.second == b) return true;
        }
        return false;
    };
    uint64_t attempts = 0;
    const uint64_t attempt_cap = 200 * want + 1000;
    while (picked.size() < want && attempts < attempt_cap) {
        ++attempts;
        uint64_t a = rng.next_below(n);
        uint64_t b = rng.next_below(n);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (adj.has_edge(a, b) || already(a, b)) continue;
        picked.emplace_back(a, b);
    }
    if (picked.size() < want) {
        // dense graph: enumerate the complement and draw without replacement
        std::vector<std::pair<uint64_t, uint64_t>> candidates;
        for (uint64_t a = 0; a < n; ++a) {
            for (uint64_t b = a + 1; b < n; ++b) {
                if (!adj.has_edge(a, b) && !already(a, b)) candidates.emplace_back(a, b);
            }
        }
        while (picked.size() < want) {
            const uint64_t k = rng.next_below(candidates.size());
            picked.push_back(candidates[k]);
            candidates.erase(candidates.begin() + k);
        }
    }

    std::vector<std::pair<uint64_t, uint64_t>> pairs = picked;
    for (size_t i = 0; i < n; ++i) {
        for (uint64_t j : adj.row(i)) {
            if (j > i) pairs.emplace_back(i, j);
        }
    }
    if (added) *added = picked;
    return adjacency_from_pairs(n, pairs);
}

Adjacency add_global_attention(const Adjacency& adj, const Mesh& mesh, double fraction,
                               std::vector<uint64_t>* global_nodes) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw Error::usage("global attention: fraction must be in [0,1]");
    }
    auto inlets = mesh.nodes_of_type(NodeType::inlet);
    const size_t count = size_t(std::ceil(fraction * double(inlets.size())));
    std::vector<uint64_t> chosen(inlets.begin(), inlets.begin() + std::min(count, inlets.size()));
    if (global_nodes) *global_nodes = chosen;
    if (chosen.empty()) return adj;

    const size_t n = adj.num_nodes();
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    for (size_t i = 0; i < n; ++i) {
        for (uint64_t j : adj.row(i)) {
            if (j > i) pairs.emplace_back(i, j);
        }
    }
    for (uint64_t g : chosen) {
        for (uint64_t v = 0; v < n; ++v) {
            if (v != g) pairs.emplace_back(std::min(g, v), std::max(g, v));
        }
    }
    return adjacency_from_pairs(n, pairs);
}

Adjacency dilate(const Adjacency& adj, bool strict_a2) {
    const size_t n = adj.num_nodes();
    Adjacency out;
    out.row_offsets.resize(n + 1, 0);
    std::vector<std::vector<uint64_t>> rows(n);
    std::vector<uint64_t> scratch;
    for (size_t i = 0; i < n; ++i) {
        scratch.clear();
        for (uint64_t j : adj.row(i)) {
            if (!strict_a2) scratch.push_back(j);
            for (uint64_t l : adj.row(j)) {
                if (l != i) scratch.push_back(l);
            }
        }
        std::sort(scratch.begin(), scratch.end());
        scratch.erase(std::unique(scratch.begin(), scratch.end()), scratch.end());
        rows[i] = scratch;
        out.row_offsets[i + 1] = out.row_offsets[i] + scratch.size();
    }
    out.cols.reserve(out.row_offsets[n]);
    for (auto& r : rows) out.cols.insert(out.cols.end(), r.begin(), r.end());
    return out;
}

AugmentedAdjacency assemble(const Adjacency& adj, const Mesh& mesh, const AugmentConfig& cfg) {
    if (cfg.heads % 2 != 0) throw Error::usage("assemble: head count must be even");
    AugmentedAdjacency aug;
    aug.layers = cfg.layers;
    aug.heads = cfg.heads;
    Adjacency a = add_random_jumpers(adj, cfg.jumper_fraction, cfg.seed, &aug.jumper_edges);
    a = add_global_attention(a, mesh, cfg.global_fraction, &aug.global_nodes);
    aug.dilated = dilate(a, cfg.strict_a2);
    aug.base = std::move(a);

    aug.head_uses_dilated.assign(size_t(cfg.layers) * cfg.heads, 0);
    const int first_dilated = std::max(0, cfg.layers - cfg.dilated_layer_count);
    for (int l = first_dilated; l < cfg.layers; ++l) {
        for (int h = cfg.heads / 2; h < cfg.heads; ++h) {
            aug.head_uses_dilated[size_t(l) * cfg.heads + h] = 1;
        }
    }
    return aug;
}

Adjacency induce(const Adjacency& adj, const std::vector<uint64_t>& nodes) {
    std::unordered_map<uint64_t, uint64_t> local;
    local.reserve(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    for (size_t i = 0; i < nodes.size(); ++i) {
        for (uint64_t j : adj.row(nodes[i])) {
            auto it = local.find(j);
            if (it != local.end() && it->second > i) pairs.emplace_back(i, it->second);
        }
    }
    return adjacency_from_pairs(nodes.size(), pairs);
}

AugmentedAdjacency restrict_augmented(const AugmentedAdjacency& aug,
                                      const std::vector<uint64_t>& nodes) {
    AugmentedAdjacency out;
    out.base = induce(aug.base, nodes);
    out.dilated = induce(aug.dilated, nodes);
    out.head_uses_dilated = aug.head_uses_dilated;
    out.layers = aug.layers;
    out.heads = aug.heads;
    return out;
}

MaskResult mask_nodes(const Adjacency& adj, double ratio, uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) throw Error::usage("mask_nodes: ratio must be in [0,1)");
    const size_t n = adj.num_nodes();
    const size_t hide = size_t(std::llround(ratio * double(n)));

    Rng rng(seed);
    std::vector<uint64_t> order(n);
    std::vector<uint8_t> hidden(n);
    MaskResult res;
    const int max_retries = 20;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = 0; i < hide; ++i) {
            const uint64_t j = i + rng.next_below(n - i);
            std::swap(order[i], order[j]);
        }
        std::fill(hidden.begin(), hidden.end(), 0);
        for (size_t i = 0; i < hide; ++i) hidden[order[i]] = 1;

        // visible nodes must keep at least one visible neighbour
        bool ok = true;
        for (size_t v = 0; v < n && ok; ++v) {
            if (hidden[v]) continue;
            bool has = false;
            for (uint64_t j : adj.row(v)) {
                if (!hidden[j]) {
                    has = true;
                    break;
                }
            }
            if (!has) ok = false;
        }
        if (ok || attempt == max_retries) {
            if (!ok) {
                // drop isolated visible nodes into the hidden set
                for (size_t v = 0; v < n; ++v) {
                    if (hidden[v]) continue;
                    bool has = false;
                    for (uint64_t j : adj.row(v)) {
                        if (!hidden[j]) {
                            has = true;
                            break;
                        }
                    }
                    if (!has) hidden[v] = 1;
                }
            }
            break;
        }
    }

    for (uint64_t v = 0; v < n; ++v) {
        (hidden[v] ? res.hidden_nodes : res.visible_nodes).push_back(v);
    }
    res.visible = induce(adj, res.visible_nodes);
    return res;
}

namespace {

std::vector<int64_t> bfs_distances(const Adjacency& adj, const std::vector<uint64_t>& sources) {
    std::vector<int64_t> dist(adj.num_nodes(), -1);
    std::deque<uint64_t> q;
    for (uint64_t s : sources) {
        dist[s] = 0;
        q.push_back(s);
    }
    while (!q.empty()) {
        const uint64_t v = q.front();
        q.pop_front();
        for (uint64_t j : adj.row(v)) {
            if (dist[j] < 0) {
                dist[j] = dist[v] + 1;
                q.push_back(j);
            }
        }
    }
    return dist;
}

bool connected_without(const Adjacency& adj, const std::vector<uint64_t>& members,
                       const std::vector<int>& part, int p, uint64_t removed) {
    // BFS inside part p skipping `removed`
    if (members.size() <= 2) return true;
    uint64_t start = members[0] == removed ? members[1] : members[0];
    std::vector<uint8_t> seen(adj.num_nodes(), 0);
    std::deque<uint64_t> q{start};
    seen[start] = 1;
    size_t count = 1;
    while (!q.empty()) {
        const uint64_t v = q.front();
        q.pop_front();
        for (uint64_t j : adj.row(v)) {
            if (!seen[j] && j != removed && part[j] == p) {
                seen[j] = 1;
                ++count;
                q.push_back(j);
            }
        }
    }
    return count == members.size() - 1;
}

}  // namespace

std::vector<std::vector<uint64_t>> partition(const Adjacency& adj, size_t k) {
    const size_t n = adj.num_nodes();
    if (k < 1 || k > n) throw Error::usage("partition: need 1 <= k <= N");

    // farthest-point seeding; unreachable nodes rank first so every component
    // receives a seed while seeds last
    std::vector<uint64_t> seeds = {0};
    while (seeds.size() < k) {
        auto dist = bfs_distances(adj, seeds);
        uint64_t best = 0;
        int64_t best_d = -2;
        for (uint64_t v = 0; v < n; ++v) {
            const int64_t d = dist[v] < 0 ? INT64_MAX : dist[v];
            if (d > best_d && std::find(seeds.begin(), seeds.end(), v) == seeds.end()) {
                best = v;
                best_d = d;
            }
        }
        seeds.push_back(best);
    }

    std::vector<int> part(n, -1);
    std::vector<std::deque<uint64_t>> frontier(k);
    std::vector<size_t> size(k, 0);
    size_t claimed = 0;
    for (size_t p = 0; p < k; ++p) {
        part[seeds[p]] = int(p);
        frontier[p].push_back(seeds[p]);
        ++size[p];
        ++claimed;
    }
    // round-robin BFS growth, one claim per part per turn
    while (claimed < n) {
        bool progress = false;
        for (size_t p = 0; p < k; ++p) {
            while (!frontier[p].empty()) {
                const uint64_t v = frontier[p].front();
                uint64_t next = n;
                for (uint64_t j : adj.row(v)) {
                    if (part[j] < 0) {
                        next = j;
                        break;
                    }
                }
                if (next == n) {
                    frontier[p].pop_front();
                    continue;
                }
                part[next] = int(p);
                frontier[p].push_back(next);
                ++size[p];
                ++claimed;
                progress = true;
                break;
            }
        }
        if (!progress) break;
    }

    // leftover components (disconnected input): hand each to the smallest part
    for (uint64_t v = 0; v < n; ++v) {
        if (part[v] >= 0) continue;
        std::vector<uint64_t> comp{v};
        std::deque<uint64_t> q{v};
        const int target =
            int(std::min_element(size.begin(), size.end()) - size.begin());
        part[v] = target;
        while (!q.empty()) {
            const uint64_t u = q.front();
            q.pop_front();
            for (uint64_t j : adj.row(u)) {
                if (part[j] < 0) {
                    part[j] = target;
                    comp.push_back(j);
                    q.push_back(j);
                }
            }
        }
        size[target] += comp.size();
    }

    // boundary rebalancing: move nodes from larger to adjacent smaller parts
    // while the donor stays connected
    auto members_of = [&](int p) {
        std::vector<uint64_t> m;
        for (uint64_t v = 0; v < n; ++v) {
            if (part[v] == p) m.push_back(v);
        }
        return m;
    };
    const size_t move_cap = 4 * n;
    for (size_t iter = 0; iter < move_cap; ++iter) {
        const auto [mn_it, mx_it] = std::minmax_element(size.begin(), size.end());
        if (double(*mx_it) <= 1.45 * double(*mn_it)) break;
        const int donor = int(mx_it - size.begin());
        const auto members = members_of(donor);
        bool moved = false;
        for (uint64_t v : members) {
            int best_p = -1;
            for (uint64_t j : adj.row(v)) {
                const int q = part[j];
                if (q != donor && size[q] + 1 < size[donor] &&
                    (best_p < 0 || size[q] < size[best_p])) {
                    best_p = q;
                }
            }
            if (best_p < 0) continue;
            if (!connected_without(adj, members, part, donor, v)) continue;
            part[v] = best_p;
            --size[donor];
            ++size[best_p];
            moved = true;
            break;
        }
        if (!moved) break;
    }

    std::vector<std::vector<uint64_t>> parts(k);
    for (uint64_t v = 0; v < n; ++v) parts[part[v]].push_back(v);
    return parts;
}

Subgraph sample_neighbor_subgraph(const Adjacency& adj, size_t edge_budget, uint64_t seed) {
    std::vector<std::pair<uint64_t, uint64_t>> edges;
    for (size_t i = 0; i < adj.num_nodes(); ++i) {
        for (uint64_t j : adj.row(i)) {
            if (j > i) edges.emplace_back(i, j);
        }
    }
    if (edge_budget > edges.size()) {
        throw Error::usage("neighbor sampling: budget " + std::to_string(edge_budget) +
                           " exceeds " + std::to_string(edges.size()) + " edges");
    }
    Rng rng(seed);
    for (size_t i = 0; i < edge_budget; ++i) {
        const uint64_t j = i + rng.next_below(edges.size() - i);
        std::swap(edges[i], edges[j]);
    }
    edges.resize(edge_budget);

    Subgraph sg;
    for (const auto& [a, b] : edges) {
        sg.nodes.push_back(a);
        sg.nodes.push_back(b);
    }
    std::sort(sg.nodes.begin(), sg.nodes.end());
    sg.nodes.erase(std::unique(sg.nodes.begin(), sg.nodes.end()), sg.nodes.end());
    std::unordered_map<uint64_t, uint64_t> local;
    for (size_t i = 0; i < sg.nodes.size(); ++i) local[sg.nodes[i]] = i;
    std::vector<std::pair<uint64_t, uint64_t>> local_edges;
    local_edges.reserve(edges.size());
    for (const auto& [a, b] : edges) local_edges.emplace_back(local[a], local[b]);
    sg.adj = adjacency_from_pairs(sg.nodes.size(), local_edges);
    return sg;
}

}  // namespace hsflow
