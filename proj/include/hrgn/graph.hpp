#pragma once

// Heterogeneous stream-reservoir graph: segment and reservoir node sets,
// three typed edge sets, and logistic distance-based adjacency weights.

#include <hrgn/autodiff.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hrgn {

enum class EdgeType { SegSeg, SegRes, ResSeg };

inline const char* edge_type_name(EdgeType t) {
    switch (t) {
        case EdgeType::SegSeg: return "ss";
        case EdgeType::SegRes: return "sr";
        case EdgeType::ResSeg: return "rs";
    }
    return "?";
}

inline EdgeType edge_type_from(const std::string& s) {
    if (s == "ss") return EdgeType::SegSeg;
    if (s == "sr") return EdgeType::SegRes;
    if (s == "rs") return EdgeType::ResSeg;
    throw std::invalid_argument("unknown edge type '" + s + "' (expected ss|sr|rs)");
}

struct Edge {
    std::string from;
    std::string to;
    EdgeType type;
    double distance_m = 0.0;  // raw stream distance
    double weight = 0.0;      // adjacency level, filled by build_adjacency
};

struct HeteroGraph {
    std::vector<std::string> segment_ids;
    std::vector<std::string> reservoir_ids;
    std::vector<Edge> edges;

    std::unordered_map<std::string, int> segment_index;
    std::unordered_map<std::string, int> reservoir_index;

    int n_segments() const { return static_cast<int>(segment_ids.size()); }
    int n_reservoirs() const { return static_cast<int>(reservoir_ids.size()); }

    void index_nodes() {
        segment_index.clear();
        reservoir_index.clear();
        for (int i = 0; i < n_segments(); ++i) segment_index[segment_ids[i]] = i;
        for (int k = 0; k < n_reservoirs(); ++k) reservoir_index[reservoir_ids[k]] = k;
    }
};

// Per-segment upstream segments N(i) and reservoirs M(i); per-reservoir
// upstream segments S(k). Entries carry the adjacency weight of the edge.
struct NeighborIndex {
    struct In {
        int node;       // index of the upstream node in its own node set
        double weight;  // A for the edge
    };
    std::vector<std::vector<In>> upstream_segments;    // N(i), per segment
    std::vector<std::vector<In>> upstream_reservoirs;  // M(i), per segment
    std::vector<std::vector<In>> reservoir_inflows;    // S(k), per reservoir
};

// Standardizes all raw distances (pooled over the three edge types) and
// sets A = 1/(1+exp(d_std)) per edge. Single-edge inputs get d_std = 0.
inline void build_adjacency(HeteroGraph& g) {
    if (g.edges.empty()) throw std::invalid_argument("build_adjacency: no edges");
    double mean = 0.0;
    for (const Edge& e : g.edges) {
        if (!(e.distance_m >= 0.0) || !std::isfinite(e.distance_m))
            throw std::invalid_argument("build_adjacency: negative or non-finite distance on edge " +
                                        e.from + "->" + e.to);
        mean += e.distance_m;
    }
    mean /= static_cast<double>(g.edges.size());
    double var = 0.0;
    for (const Edge& e : g.edges) var += (e.distance_m - mean) * (e.distance_m - mean);
    var /= static_cast<double>(g.edges.size());
    // Rounding in the mean can leave a spread of a few ulps when all
    // distances are equal; that must standardize to 0, not +/-1.
    double sd = std::sqrt(var);
    if (sd <= 1e-9 * std::max(1.0, mean)) sd = 0.0;
    if (sd == 0.0)
        std::fprintf(stderr,
                     "warning: zero distance spread across edges; using d_std = 0\n");
    for (Edge& e : g.edges) {
        const double d = sd > 0.0 ? (e.distance_m - mean) / sd : 0.0;
        e.weight = 1.0 / (1.0 + std::exp(d));
    }
}

inline NeighborIndex neighbor_index(const HeteroGraph& g) {
    NeighborIndex idx;
    idx.upstream_segments.resize(g.n_segments());
    idx.upstream_reservoirs.resize(g.n_segments());
    idx.reservoir_inflows.resize(g.n_reservoirs());
    for (const Edge& e : g.edges) {
        switch (e.type) {
            case EdgeType::SegSeg: {
                const int j = g.segment_index.at(e.from);
                const int i = g.segment_index.at(e.to);
                if (j == i) throw std::invalid_argument("self-edge on segment " + e.from);
                idx.upstream_segments[i].push_back({j, e.weight});
                break;
            }
            case EdgeType::ResSeg: {
                const int k = g.reservoir_index.at(e.from);
                const int i = g.segment_index.at(e.to);
                idx.upstream_reservoirs[i].push_back({k, e.weight});
                break;
            }
            case EdgeType::SegRes: {
                const int i = g.segment_index.at(e.from);
                const int k = g.reservoir_index.at(e.to);
                idx.reservoir_inflows[k].push_back({i, e.weight});
                break;
            }
        }
    }
    return idx;
}

}  // namespace hrgn
