#include <catch2/catch_amalgamated.hpp>

#include <hrgn/graph.hpp>
#include <hrgn/synth.hpp>

#include "test_util.hpp"

#include <random>

using namespace hrgn;

namespace {
HeteroGraph two_edge_graph(double d0, double d1) {
    HeteroGraph g;
    g.segment_ids = {"s1", "s2", "s3"};
    g.index_nodes();
    g.edges.push_back({"s1", "s2", EdgeType::SegSeg, d0, 0.0});
    g.edges.push_back({"s2", "s3", EdgeType::SegSeg, d1, 0.0});
    return g;
}
}  // namespace

TEST_CASE("adjacency of the standardized midpoint is 0.5") {
    // Two equal distances standardize to d=0 on both edges.
    HeteroGraph g = two_edge_graph(500.0, 500.0);
    build_adjacency(g);
    CHECK(g.edges[0].weight == Catch::Approx(0.5));
    CHECK(g.edges[1].weight == Catch::Approx(0.5));
}

TEST_CASE("adjacency for distances {100, 300}") {
    HeteroGraph g = two_edge_graph(100.0, 300.0);
    build_adjacency(g);
    // standardized to {-1, +1}
    CHECK(g.edges[0].weight == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(g.edges[1].weight == Catch::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
}

TEST_CASE("adjacency decreases with distance and rejects bad input") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 50000.0);
    HeteroGraph g;
    g.segment_ids = {"a", "b"};
    g.index_nodes();
    for (int i = 0; i < 40; ++i)
        g.edges.push_back({"a", "b", EdgeType::SegSeg, dist(rng), 0.0});
    build_adjacency(g);
    for (std::size_t i = 0; i < g.edges.size(); ++i)
        for (std::size_t j = 0; j < g.edges.size(); ++j)
            if (g.edges[i].distance_m < g.edges[j].distance_m)
                CHECK(g.edges[i].weight > g.edges[j].weight);

    HeteroGraph bad = two_edge_graph(-1.0, 3.0);
    CHECK_THROWS_AS(build_adjacency(bad), std::invalid_argument);
    HeteroGraph empty;
    CHECK_THROWS_AS(build_adjacency(empty), std::invalid_argument);
}

TEST_CASE("standardization has zero mean and unit std over edges") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(10.0, 90000.0);
    HeteroGraph g;
    g.segment_ids = {"a", "b"};
    g.index_nodes();
    for (int i = 0; i < 100; ++i)
        g.edges.push_back({"a", "b", EdgeType::SegSeg, dist(rng), 0.0});
    build_adjacency(g);
    // Recover d_std from the logistic weight and check the pooled stats.
    double mean = 0.0, var = 0.0;
    std::vector<double> ds;
    for (const Edge& e : g.edges) {
        const double d = std::log(1.0 / e.weight - 1.0);
        ds.push_back(d);
        mean += d;
    }
    mean /= ds.size();
    for (double d : ds) var += (d - mean) * (d - mean);
    var /= ds.size();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
}

TEST_CASE("rebuild from identical input is bit-identical") {
    HeteroGraph a = two_edge_graph(120.0, 480.0);
    HeteroGraph b = two_edge_graph(120.0, 480.0);
    build_adjacency(a);
    build_adjacency(b);
    for (std::size_t i = 0; i < a.edges.size(); ++i)
        CHECK(a.edges[i].weight == b.edges[i].weight);
}

TEST_CASE("neighbor index mirrors the edge sets") {
    HeteroGraph g;
    g.segment_ids = {"s1", "s2"};
    g.reservoir_ids = {"r1"};
    g.index_nodes();
    g.edges.push_back({"s1", "s2", EdgeType::SegSeg, 100.0, 0.0});
    g.edges.push_back({"r1", "s2", EdgeType::ResSeg, 200.0, 0.0});
    build_adjacency(g);
    NeighborIndex idx = neighbor_index(g);
    REQUIRE(idx.upstream_segments[1].size() == 1);
    CHECK(idx.upstream_segments[1][0].node == 0);
    REQUIRE(idx.upstream_reservoirs[1].size() == 1);
    CHECK(idx.upstream_reservoirs[1][0].node == 0);
    CHECK(idx.upstream_segments[0].empty());
    CHECK(idx.upstream_reservoirs[0].empty());
}

TEST_CASE("empty reservoir edge set gives empty M(i) for all segments") {
    HeteroGraph g = two_edge_graph(1.0, 2.0);
    build_adjacency(g);
    NeighborIndex idx = neighbor_index(g);
    for (const auto& v : idx.upstream_reservoirs) CHECK(v.empty());
}

TEST_CASE("fixture neighbor index matches a brute-force edge scan") {
    SynthDataset d = generate(testutil::fixture_config(1));
    const HeteroGraph& g = d.graph;
    NeighborIndex idx = neighbor_index(g);
    for (int i = 0; i < g.n_segments(); ++i) {
        std::size_t n_up = 0, n_res = 0;
        for (const Edge& e : g.edges) {
            if (e.type == EdgeType::SegSeg && e.to == g.segment_ids[i]) ++n_up;
            if (e.type == EdgeType::ResSeg && e.to == g.segment_ids[i]) ++n_res;
        }
        CHECK(idx.upstream_segments[i].size() == n_up);
        CHECK(idx.upstream_reservoirs[i].size() == n_res);
    }
    for (int k = 0; k < g.n_reservoirs(); ++k) {
        std::size_t n_in = 0;
        for (const Edge& e : g.edges)
            if (e.type == EdgeType::SegRes && e.to == g.reservoir_ids[k]) ++n_in;
        CHECK(idx.reservoir_inflows[k].size() == n_in);
    }
    // No self-edges; A strictly inside (0,1).
    for (const Edge& e : g.edges) {
        CHECK(e.from != e.to);
        CHECK(e.weight > 0.0);
        CHECK(e.weight < 1.0);
    }
}
