#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "diffusesg/scene_graph.hpp"

using namespace dsg;

namespace {

DatasetSpec small_spec() {
    DatasetSpec spec;
    spec.object_class_count = 3;
    spec.object_class_names = {"a", "b", "c"};
    spec.relation_class_count = 6;
    spec.relation_class_names = kSpatialRelationNames;
    spec.max_nodes = 4;
    return spec;
}

SceneGraph tiny_graph() {
    SceneGraph g;
    g.nodes = {{0, {0.2, 0.2, 0.1, 0.1}}, {1, {0.7, 0.2, 0.1, 0.1}}, {2, {0.5, 0.8, 0.2, 0.1}}};
    g.init_relations();
    g.set_relation(0, 1, 1);
    g.set_relation(1, 0, 2);
    return g;
}

}  // namespace

TEST_CASE("validate_graph reports each violation") {
    const DatasetSpec spec = small_spec();
    CHECK(validate_graph(tiny_graph(), spec).empty());

    SceneGraph bad = tiny_graph();
    bad.set_relation(0, 0, 5);
    auto v = validate_graph(bad, spec);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("self-loop") != std::string::npos);

    bad = tiny_graph();
    bad.nodes[1].box.w = -0.1;
    v = validate_graph(bad, spec);
    CHECK(!v.empty());
    bool found = false;
    for (const auto& s : v) found = found || s.find("nonpositive extent") != std::string::npos;
    CHECK(found);

    bad = tiny_graph();
    bad.nodes[0].label = 3;
    CHECK(!validate_graph(bad, spec).empty());
}

TEST_CASE("pad/unpad round trip") {
    const DatasetSpec spec = small_spec();
    const SceneGraph g = tiny_graph();
    const PaddedGraph p = pad_graph(g, spec);
    CHECK(p.side == 4);
    CHECK(p.real_size == 3);
    CHECK(p.labels[3] == PaddedGraph::kFillLabel);
    for (int j = 0; j < 4; ++j) CHECK(p.relation(3, j) == 0);
    CHECK(unpad_graph(p, 3) == g);

    SUBCASE("n == max_nodes leaves no fill") {
        DatasetSpec tight = spec;
        tight.max_nodes = 3;
        const PaddedGraph q = pad_graph(g, tight);
        CHECK(q.side == 3);
        CHECK(unpad_graph(q, 3) == g);
    }

    SUBCASE("oversized graph rejected") {
        DatasetSpec tiny = spec;
        tiny.max_nodes = 2;
        CHECK_THROWS_AS(pad_graph(g, tiny), DataError);
        CHECK_THROWS_AS(unpad_graph(pad_graph(g, spec), 5), DataError);
    }

    SUBCASE("random toy graphs round trip exactly") {
        Rng rng(17);
        ToyRuleConfig cfg;
        const Dataset ds = generate_toy_dataset(500, cfg, rng);
        for (const auto& toy : ds.graphs)
            CHECK(unpad_graph(pad_graph(toy, ds.spec), toy.size()) == toy);
    }
}

TEST_CASE("spatial relation rule") {
    SUBCASE("containment pair") {
        std::vector<ObjectNode> nodes = {{0, {0.5, 0.5, 0.9, 0.9}}, {1, {0.5, 0.5, 0.2, 0.2}}};
        const auto rel = derive_spatial_relations(nodes);
        CHECK(rel[0 * 2 + 1] == kSpatialSurrounding);  // A contains B
        CHECK(rel[1 * 2 + 0] == kSpatialInside);
    }

    SUBCASE("horizontal pair") {
        std::vector<ObjectNode> nodes = {{0, {0.2, 0.5, 0.1, 0.1}}, {1, {0.8, 0.5, 0.1, 0.1}}};
        const auto rel = derive_spatial_relations(nodes);
        CHECK(rel[0 * 2 + 1] == kSpatialLeftOf);
        CHECK(rel[1 * 2 + 0] == kSpatialRightOf);
    }

    SUBCASE("vertical pair, image y grows downward") {
        std::vector<ObjectNode> nodes = {{0, {0.5, 0.2, 0.1, 0.1}}, {1, {0.5, 0.8, 0.1, 0.1}}};
        const auto rel = derive_spatial_relations(nodes);
        CHECK(rel[0 * 2 + 1] == kSpatialAbove);
        CHECK(rel[1 * 2 + 0] == kSpatialBelow);
    }

    SUBCASE("single node has no pairs") {
        std::vector<ObjectNode> nodes = {{0, {0.5, 0.5, 0.2, 0.2}}};
        const auto rel = derive_spatial_relations(nodes);
        REQUIRE(rel.size() == 1);
        CHECK(rel[0] == 0);
    }

    SUBCASE("total and antisymmetric on random boxes") {
        Rng rng(23);
        const auto opposite = [](int r) {
            switch (r) {
                case kSpatialLeftOf: return static_cast<int>(kSpatialRightOf);
                case kSpatialRightOf: return static_cast<int>(kSpatialLeftOf);
                case kSpatialAbove: return static_cast<int>(kSpatialBelow);
                case kSpatialBelow: return static_cast<int>(kSpatialAbove);
                case kSpatialInside: return static_cast<int>(kSpatialSurrounding);
                case kSpatialSurrounding: return static_cast<int>(kSpatialInside);
            }
            return 0;
        };
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<ObjectNode> nodes;
            const int n = 2 + static_cast<int>(rng.uniform_int(0, 4));
            for (int i = 0; i < n; ++i)
                nodes.push_back({0,
                                 {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                                  rng.uniform(0.05, 0.6), rng.uniform(0.05, 0.6)}});
            const auto rel = derive_spatial_relations(nodes);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (i == j) {
                        CHECK(rel[static_cast<size_t>(i) * n + j] == 0);
                        continue;
                    }
                    CHECK(rel[static_cast<size_t>(i) * n + j] >= 1);
                    CHECK(rel[static_cast<size_t>(i) * n + j] ==
                          opposite(rel[static_cast<size_t>(j) * n + i]));
                }
        }
    }
}

TEST_CASE("node count distribution") {
    SUBCASE("point mass") {
        NodeCountDistribution d;
        d.probs = {{3, 1.0}};
        Rng rng(1);
        for (int i = 0; i < 50; ++i) CHECK(sample_node_count(d, rng) == 3);
    }

    SUBCASE("two-point frequencies converge") {
        NodeCountDistribution d;
        d.probs = {{2, 0.5}, {4, 0.5}};
        Rng rng(2);
        int twos = 0;
        const int draws = 100000;
        for (int i = 0; i < draws; ++i)
            if (sample_node_count(d, rng) == 2) ++twos;
        CHECK(std::abs(static_cast<double>(twos) / draws - 0.5) < 0.01);
    }

    SUBCASE("built from sizes") {
        const auto d = NodeCountDistribution::from_counts({2, 2, 3});
        CHECK(d.probs.at(2) == doctest::Approx(2.0 / 3.0));
        CHECK(d.probs.at(3) == doctest::Approx(1.0 / 3.0));
    }

    SUBCASE("empty distribution rejected") {
        NodeCountDistribution d;
        Rng rng(3);
        CHECK_THROWS_AS(sample_node_count(d, rng), ConfigError);
    }

    SUBCASE("support only") {
        NodeCountDistribution d;
        d.probs = {{2, 0.25}, {5, 0.75}};
        Rng rng(4);
        for (int i = 0; i < 1000; ++i) {
            const int n = sample_node_count(d, rng);
            CHECK((n == 2 || n == 5));
        }
    }
}

TEST_CASE("dataset manifest io") {
    const std::string path = "test_manifest.jsonl";
    Dataset ds;
    ds.spec = small_spec();
    ds.graphs = {tiny_graph()};
    save_dataset(ds, path);

    SUBCASE("round trip") {
        const Dataset loaded = load_dataset(path);
        CHECK(loaded.spec.object_class_count == 3);
        CHECK(loaded.spec.max_nodes == 4);
        REQUIRE(loaded.graphs.size() == 1);
        CHECK(loaded.graphs[0] == ds.graphs[0]);
        int nonzero = 0;
        for (int r : loaded.graphs[0].relations)
            if (r != 0) ++nonzero;
        CHECK(nonzero == 2);
    }

    SUBCASE("invalid record rejected with index, skipped when permissive") {
        std::ofstream out(path, std::ios::app);
        out << R"({"nodes": [{"label": 9, "bbox": [0.5, 0.5, 0.1, 0.1]}], "edges": []})" << "\n";
        out.close();
        try {
            load_dataset(path);
            CHECK(false);
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("record 2") != std::string::npos);
        }
        const Dataset lax = load_dataset(path, /*permissive=*/true);
        CHECK(lax.graphs.size() == 1);
    }

    SUBCASE("malformed json names the record") {
        std::ofstream out(path, std::ios::app);
        out << "{not json}\n";
        out.close();
        CHECK_THROWS_AS(load_dataset(path), DataError);
    }

    std::remove(path.c_str());
}

TEST_CASE("toy dataset generator") {
    ToyRuleConfig cfg;

    SUBCASE("graphs satisfy the rule and the spec") {
        Rng rng(31);
        const Dataset ds = generate_toy_dataset(200, cfg, rng);
        CHECK(ds.graphs.size() == 200);
        for (const auto& g : ds.graphs) {
            CHECK(satisfies_spatial_rule(g));
            CHECK(validate_graph(g, ds.spec).empty());
            CHECK(g.size() >= cfg.min_nodes);
            CHECK(g.size() <= cfg.max_nodes);
        }
    }

    SUBCASE("count zero gives empty sequence") {
        Rng rng(1);
        CHECK(generate_toy_dataset(0, cfg, rng).graphs.empty());
    }

    SUBCASE("fixed seed reproduces byte-identically") {
        Rng r1(77), r2(77);
        const Dataset a = generate_toy_dataset(50, cfg, r1);
        const Dataset b = generate_toy_dataset(50, cfg, r2);
        REQUIRE(a.graphs.size() == b.graphs.size());
        for (size_t i = 0; i < a.graphs.size(); ++i) CHECK(a.graphs[i] == b.graphs[i]);
    }
}
