#include <doctest.h>

#include <algorithm>

#include "diffusesg/metrics.hpp"

using namespace dsg;

namespace {

DatasetSpec spec6() {
    ToyRuleConfig cfg;
    return cfg.dataset_spec();
}

SceneGraph two_node_graph() {
    SceneGraph g;
    g.nodes = {{0, {0.3, 0.3, 0.2, 0.2}}, {1, {0.7, 0.7, 0.2, 0.2}}};
    g.init_relations();
    g.set_relation(0, 1, 1);
    return g;
}

SceneGraph permuted(const SceneGraph& g, const std::vector<int>& perm) {
    SceneGraph out;
    const int n = g.size();
    out.nodes.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.nodes[static_cast<size_t>(perm[static_cast<size_t>(i)])] =
            g.nodes[static_cast<size_t>(i)];
    out.init_relations();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j)
                out.set_relation(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)],
                                 g.relation(i, j));
    return out;
}

}  // namespace

TEST_CASE("graph descriptors") {
    const DatasetSpec spec = spec6();

    SUBCASE("single edge gives both nodes degree 1") {
        const GraphDescriptor d = describe_graph(two_node_graph(), spec);
        CHECK(d.degree_hist(1) == 1.0);
        CHECK(d.degree_hist.sum() == doctest::Approx(1.0));
        CHECK(d.edge_label_hist(0) == 1.0);  // relation label 1
    }

    SUBCASE("no edges leaves the edge histogram at zero") {
        SceneGraph g = two_node_graph();
        g.init_relations();
        const GraphDescriptor d = describe_graph(g, spec);
        CHECK(d.edge_label_hist.cwiseAbs().maxCoeff() == 0.0);
        CHECK(d.degree_hist(0) == 1.0);
    }

    SUBCASE("fully connected 3-node graph has all degrees 4") {
        std::vector<ObjectNode> nodes = {{0, {0.2, 0.3, 0.1, 0.1}},
                                         {1, {0.7, 0.3, 0.1, 0.1}},
                                         {2, {0.5, 0.8, 0.1, 0.1}}};
        SceneGraph g;
        g.nodes = nodes;
        g.relations = derive_spatial_relations(nodes);
        const GraphDescriptor d = describe_graph(g, spec);
        CHECK(d.degree_hist(4) == 1.0);
    }
}

TEST_CASE("mmd identities") {
    const DatasetSpec spec = spec6();
    Rng rng(3);
    ToyRuleConfig cfg;
    const Dataset ds = generate_toy_dataset(40, cfg, rng);
    std::vector<GraphDescriptor> a, b;
    for (size_t i = 0; i < 20; ++i) a.push_back(describe_graph(ds.graphs[i], spec));
    for (size_t i = 20; i < 40; ++i) b.push_back(describe_graph(ds.graphs[i], spec));

    SUBCASE("identical sets give zero") {
        for (const auto kind :
             {DescriptorKind::kDegree, DescriptorKind::kNodeLabel, DescriptorKind::kEdgeLabel})
            CHECK(std::abs(mmd_squared(a, a, kind, 1.0)) <= 1e-12);
    }

    SUBCASE("singleton collapse to 2 - 2k") {
        const std::vector<GraphDescriptor> sa = {a[0]}, sb = {b[0]};
        const double k = std::exp(-(a[0].degree_hist - b[0].degree_hist).squaredNorm() / 2.0);
        CHECK(mmd_squared(sa, sb, DescriptorKind::kDegree, 1.0) ==
              doctest::Approx(2.0 - 2.0 * k).epsilon(1e-12));
    }

    SUBCASE("nonnegative and symmetric on random splits") {
        for (const auto kind :
             {DescriptorKind::kDegree, DescriptorKind::kNodeLabel, DescriptorKind::kEdgeLabel}) {
            const double ab = mmd_squared(a, b, kind, 1.0);
            CHECK(ab >= -1e-12);
            CHECK(ab == doctest::Approx(mmd_squared(b, a, kind, 1.0)).epsilon(1e-12));
        }
    }

    SUBCASE("empty set rejected, bad bandwidth rejected") {
        CHECK_THROWS_AS(mmd_squared({}, a, DescriptorKind::kDegree, 1.0), ContractError);
        CHECK_THROWS_AS(mmd_squared(a, b, DescriptorKind::kDegree, 0.0), ConfigError);
    }
}

TEST_CASE("triplet tv") {
    SceneGraph g1 = two_node_graph();

    SUBCASE("identical sets give zero") { CHECK(triplet_tv({g1}, {g1}) == 0.0); }

    SUBCASE("disjoint supports give one") {
        SceneGraph g2 = two_node_graph();
        g2.set_relation(0, 1, 3);
        CHECK(triplet_tv({g1}, {g2}) == 1.0);
    }

    SUBCASE("half-overlap gives one half") {
        // p = {a: 1.0}, q = {a: 0.5, b: 0.5}
        SceneGraph q2 = two_node_graph();
        q2.set_relation(1, 0, 2);  // adds a second distinct triplet
        CHECK(triplet_tv({g1}, {q2}) == doctest::Approx(0.5));
    }

    SUBCASE("no generated relations against a related reference") {
        SceneGraph empty = two_node_graph();
        empty.init_relations();
        CHECK(triplet_tv({empty}, {g1}) == 1.0);
    }
}

TEST_CASE("f1 scores") {
    const DatasetSpec spec = spec6();
    Rng rng(5);
    ToyRuleConfig cfg;
    const Dataset ds = generate_toy_dataset(30, cfg, rng);
    const CategoryWeights weights = category_weights(ds.graphs, spec);

    SUBCASE("identical layouts score 1 on all variants") {
        const Layout l = layout_of(ds.graphs[0]);
        for (const auto variant : {F1Variant::kVanilla, F1Variant::kArea, F1Variant::kFrequency,
                                   F1Variant::kBoxOnly})
            CHECK(f1_pair(l, l, variant, weights) == doctest::Approx(1.0));
    }

    SUBCASE("empty generated layout scores 0") {
        const Layout empty;
        const Layout ref = layout_of(ds.graphs[0]);
        for (const auto variant : {F1Variant::kVanilla, F1Variant::kBoxOnly})
            CHECK(f1_pair(empty, ref, variant, weights) == 0.0);
    }

    SUBCASE("hand-counted threshold case: IoU exactly 0.3 passes 6 of 10") {
        // Generated box inside the reference with exactly 30% of its area.
        Layout gen, ref;
        ref.nodes = {{2, {0.5, 0.5, 1.0, 1.0}}};
        gen.nodes = {{2, {0.15, 0.5, 0.3, 1.0}}};
        CHECK(box_iou(gen.nodes[0].box, ref.nodes[0].box) == 0.3);
        CHECK(f1_pair(gen, ref, F1Variant::kVanilla, weights) == doctest::Approx(0.6));
    }

    SUBCASE("per-threshold curve is nonincreasing") {
        // Thresholds only remove matches, so the per-category F1 cannot grow.
        Layout gen = layout_of(ds.graphs[1]);
        Layout ref = layout_of(ds.graphs[2]);
        for (auto& node : gen.nodes) node.label = 0;
        Layout ref0 = ref;
        for (auto& node : ref0.nodes) node.label = 0;
        // Evaluate at coarse proxy: BoxOnly pair score between increasingly
        // perturbed copies decreases.
        Layout nudged = gen;
        for (auto& node : nudged.nodes) node.box.cx = std::min(1.0, node.box.cx + 0.05);
        Layout far = gen;
        for (auto& node : far.nodes) node.box.cx = std::min(1.0, node.box.cx + 0.3);
        const double self_score = f1_pair(gen, gen, F1Variant::kBoxOnly, weights);
        const double near_score = f1_pair(nudged, gen, F1Variant::kBoxOnly, weights);
        const double far_score = f1_pair(far, gen, F1Variant::kBoxOnly, weights);
        CHECK(self_score >= near_score);
        CHECK(near_score >= far_score);
    }

    SUBCASE("max over references, mean over generated; brute-force oracle equality") {
        std::vector<Layout> gen, ref;
        for (int i = 0; i < 12; ++i) gen.push_back(layout_of(ds.graphs[static_cast<size_t>(i)]));
        for (int i = 12; i < 30; ++i) ref.push_back(layout_of(ds.graphs[static_cast<size_t>(i)]));
        // Generated subset of the reference set scores exactly 1.
        std::vector<Layout> subset = {ref[0], ref[3], ref[5]};
        CHECK(f1_score(subset, ref, F1Variant::kVanilla, weights) == doctest::Approx(1.0));

        // Independent brute-force evaluation of the same definition.
        for (const auto variant : {F1Variant::kVanilla, F1Variant::kArea, F1Variant::kFrequency,
                                   F1Variant::kBoxOnly}) {
            double oracle = 0.0;
            for (const auto& g : gen) {
                double best = 0.0;
                for (const auto& r : ref) best = std::max(best, f1_pair(g, r, variant, weights));
                oracle += best;
            }
            oracle /= static_cast<double>(gen.size());
            CHECK(f1_score(gen, ref, variant, weights) == oracle);
        }
    }
}

TEST_CASE("evaluate_all") {
    Rng rng(7);
    ToyRuleConfig cfg;
    const Dataset ds = generate_toy_dataset(24, cfg, rng);
    const CategoryWeights weights = category_weights(ds.graphs, ds.spec);

    SUBCASE("identical sets: zero distances, unit scores") {
        const MetricReport r = evaluate_all(ds.graphs, ds.graphs, ds.spec, weights);
        CHECK(std::abs(r.node_mmd) <= 1e-12);
        CHECK(std::abs(r.degree_mmd) <= 1e-12);
        CHECK(std::abs(r.edge_mmd) <= 1e-12);
        CHECK(r.triplet_tv == 0.0);
        CHECK(r.f1_vanilla == doctest::Approx(1.0));
        CHECK(r.f1_area == doctest::Approx(1.0));
        CHECK(r.f1_frequency == doctest::Approx(1.0));
        CHECK(r.f1_box_only == doctest::Approx(1.0));
        CHECK(r.generated_count == 24);
    }

    SUBCASE("permuting node order changes nothing") {
        std::vector<SceneGraph> shuffled;
        for (const auto& g : ds.graphs) {
            std::vector<int> perm(static_cast<size_t>(g.size()));
            for (int i = 0; i < g.size(); ++i) perm[static_cast<size_t>(i)] = i;
            std::reverse(perm.begin(), perm.end());
            shuffled.push_back(permuted(g, perm));
        }
        std::vector<SceneGraph> gen(ds.graphs.begin(), ds.graphs.begin() + 10);
        std::vector<SceneGraph> gen_shuffled(shuffled.begin(), shuffled.begin() + 10);
        std::vector<SceneGraph> ref(ds.graphs.begin() + 10, ds.graphs.end());
        const MetricReport a = evaluate_all(gen, ref, ds.spec, weights);
        const MetricReport b = evaluate_all(gen_shuffled, ref, ds.spec, weights);
        CHECK(a.node_mmd == doctest::Approx(b.node_mmd).epsilon(1e-12));
        CHECK(a.degree_mmd == doctest::Approx(b.degree_mmd).epsilon(1e-12));
        CHECK(a.edge_mmd == doctest::Approx(b.edge_mmd).epsilon(1e-12));
        CHECK(a.triplet_tv == doctest::Approx(b.triplet_tv).epsilon(1e-12));
        CHECK(a.f1_vanilla == doctest::Approx(b.f1_vanilla).epsilon(1e-12));
        CHECK(a.f1_box_only == doctest::Approx(b.f1_box_only).epsilon(1e-12));
    }

    SUBCASE("averaging reports") {
        MetricReport r1, r2;
        r1.node_mmd = 0.1;
        r2.node_mmd = 0.3;
        r1.f1_vanilla = 1.0;
        r2.f1_vanilla = 0.0;
        const MetricReport avg = average_reports({r1, r2});
        CHECK(avg.node_mmd == doctest::Approx(0.2));
        CHECK(avg.f1_vanilla == doctest::Approx(0.5));
    }
}
