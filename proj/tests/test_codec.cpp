#include <doctest.h>

#include "diffusesg/codec.hpp"

using namespace dsg;

namespace {

DatasetSpec vg_like_spec() {
    DatasetSpec spec;
    spec.object_class_count = 150;
    spec.relation_class_count = 50;
    spec.max_nodes = 8;
    for (int i = 0; i < 150; ++i) spec.object_class_names.push_back("o" + std::to_string(i));
    for (int i = 0; i < 50; ++i) spec.relation_class_names.push_back("r" + std::to_string(i));
    return spec;
}

}  // namespace

TEST_CASE("dims per scheme") {
    const DatasetSpec vg = vg_like_spec();
    const CodecDims bit = dims_for_scheme(EncodingScheme::kBit, vg);
    CHECK(bit.d_c == 8);  // ceil(log2 150)
    CHECK(bit.d_e == 6);  // ceil(log2 51)
    const CodecDims onehot = dims_for_scheme(EncodingScheme::kOneHot, vg);
    CHECK(onehot.d_c == 150);
    CHECK(onehot.d_e == 51);
    const CodecDims scalar = dims_for_scheme(EncodingScheme::kScalar, vg);
    CHECK(scalar.d_c == 1);
    CHECK(scalar.d_e == 1);

    DatasetSpec coco;
    coco.object_class_count = 171;
    coco.relation_class_count = 6;
    coco.max_nodes = 4;
    const CodecDims oh = dims_for_scheme(EncodingScheme::kOneHot, coco);
    CHECK(oh.d_c == 171);
    CHECK(oh.d_e == 7);
}

TEST_CASE("encode_label reference values") {
    SUBCASE("scalar lower boundary") {
        const auto v = encode_label(0, 150, EncodingScheme::kScalar);
        REQUIRE(v.size() == 1);
        CHECK(v[0] == -1.0);
    }
    SUBCASE("bit pattern of 5, msb first") {
        const auto v = encode_label(5, 150, EncodingScheme::kBit);
        const std::vector<double> expected = {-1, -1, -1, -1, -1, 1, -1, 1};
        CHECK(v == expected);
    }
    SUBCASE("one-hot") {
        const auto v = encode_label(2, 4, EncodingScheme::kOneHot);
        const std::vector<double> expected = {-1, -1, 1, -1};
        CHECK(v == expected);
    }
    SUBCASE("out of range") {
        CHECK_THROWS_AS(encode_label(150, 150, EncodingScheme::kScalar), DataError);
        CHECK_THROWS_AS(encode_label(-1, 150, EncodingScheme::kBit), DataError);
    }
}

TEST_CASE("decode_label reference values") {
    SUBCASE("scalar top bin") {
        CHECK(decode_label({0.99}, 150, EncodingScheme::kScalar) == 149);
        CHECK(decode_label({-1.0}, 150, EncodingScheme::kScalar) == 0);
        CHECK(decode_label({5.0}, 150, EncodingScheme::kScalar) == 149);  // clamps first
    }
    SUBCASE("bit sign threshold with overflow clamp") {
        const std::vector<double> noisy = {0.3, -0.2, 0.7, 0.1, -0.9, 0.4, -0.3, 0.2};
        // signs -> 10110101 = 181, clamped to 149
        CHECK(decode_label(noisy, 150, EncodingScheme::kBit) == 149);
    }
    SUBCASE("one-hot argmax") {
        CHECK(decode_label({-0.5, 2.0, 0.1}, 3, EncodingScheme::kOneHot) == 1);
    }
}

TEST_CASE("label round trip exhaustive per scheme") {
    for (const auto scheme :
         {EncodingScheme::kScalar, EncodingScheme::kBit, EncodingScheme::kOneHot}) {
        for (const int m : {1, 2, 7, 51, 150}) {
            if (scheme == EncodingScheme::kOneHot && m > 60) continue;
            for (int label = 0; label < m; ++label) {
                const auto enc = encode_label(label, m, scheme);
                CHECK(decode_label(enc, m, scheme) == label);
            }
        }
    }
}

TEST_CASE("decode_label is total under heavy noise") {
    Rng rng(41);
    for (const auto scheme :
         {EncodingScheme::kScalar, EncodingScheme::kBit, EncodingScheme::kOneHot}) {
        const int m = 51;
        const int w = label_width(m, scheme);
        for (const double sigma : {0.1, 1.0, 10.0}) {
            for (int trial = 0; trial < 300; ++trial) {
                std::vector<double> v(static_cast<size_t>(w));
                for (auto& x : v) x = rng.normal(0.0, sigma);
                const int label = decode_label(v, m, scheme);
                CHECK(label >= 0);
                CHECK(label < m);
            }
        }
    }
}

TEST_CASE("graph encode/decode") {
    DatasetSpec spec;
    spec.object_class_count = 6;
    spec.relation_class_count = 6;
    spec.max_nodes = 4;
    spec.object_class_names = {"a", "b", "c", "d", "e", "f"};
    spec.relation_class_names = kSpatialRelationNames;

    SceneGraph g;
    g.nodes = {{2, {0.25, 0.25, 0.5, 0.5}}, {5, {0.75, 0.75, 0.25, 0.25}}};
    g.init_relations();
    g.set_relation(0, 1, 3);
    g.set_relation(1, 0, 4);

    SUBCASE("shapes and padding for the bit scheme") {
        const EncodedGraph t = encode_graph(g, spec, EncodingScheme::kBit);
        CHECK(t.nodes.rows() == 4);
        CHECK(t.nodes.cols() == 3 + 4);
        CHECK(t.edges.rows() == 16);
        CHECK(t.edges.cols() == 3);
        // Padded node rows are numeric zero.
        CHECK(t.nodes.row(2).cwiseAbs().maxCoeff() == 0.0);
        // Padded edge entries carry the class-0 encoding.
        const auto zero_enc = encode_label(0, 7, EncodingScheme::kBit);
        for (int k = 0; k < 3; ++k) CHECK(t.edges(2 * 4 + 3, k) == zero_enc[static_cast<size_t>(k)]);
    }

    SUBCASE("vg bit widths") {
        const DatasetSpec vg = vg_like_spec();
        SceneGraph g2;
        g2.nodes = {{0, {0.5, 0.5, 0.2, 0.2}}, {1, {0.3, 0.3, 0.1, 0.1}}};
        g2.init_relations();
        const EncodedGraph t = encode_graph(g2, vg, EncodingScheme::kBit);
        CHECK(t.nodes.cols() == 12);
        CHECK(t.edges.cols() == 6);
        CHECK(assemble_triplets(t).cols() == 30);
    }

    SUBCASE("round trip over random toy graphs, all schemes") {
        Rng rng(55);
        ToyRuleConfig cfg;
        cfg.tensor_side = 8;
        const Dataset ds = generate_toy_dataset(1000, cfg, rng);
        DatasetSpec tspec = ds.spec;
        for (const auto scheme :
             {EncodingScheme::kScalar, EncodingScheme::kBit, EncodingScheme::kOneHot}) {
            for (size_t i = 0; i < ds.graphs.size(); i += 7) {
                const SceneGraph& src = ds.graphs[i];
                const SceneGraph back =
                    decode_graph(encode_graph(src, tspec, scheme), tspec, scheme);
                REQUIRE(back.size() == src.size());
                for (int k = 0; k < back.size(); ++k) {
                    CHECK(back.nodes[static_cast<size_t>(k)].label ==
                          src.nodes[static_cast<size_t>(k)].label);
                    CHECK(back.nodes[static_cast<size_t>(k)].box.cx ==
                          doctest::Approx(src.nodes[static_cast<size_t>(k)].box.cx).epsilon(1e-12));
                }
                CHECK(back.relations == src.relations);
            }
        }
    }

    SUBCASE("zero-relation graph encodes class 0 everywhere off-diagonal") {
        SceneGraph lone;
        lone.nodes = {{0, {0.5, 0.5, 0.2, 0.2}}, {1, {0.3, 0.3, 0.1, 0.1}}};
        lone.init_relations();
        const EncodedGraph t = encode_graph(lone, spec, EncodingScheme::kOneHot);
        const auto zero_enc = encode_label(0, 7, EncodingScheme::kOneHot);
        for (int k = 0; k < 7; ++k) CHECK(t.edges(0 * 4 + 1, k) == zero_enc[static_cast<size_t>(k)]);
    }
}

TEST_CASE("assemble_triplets layout") {
    DatasetSpec spec;
    spec.object_class_count = 4;
    spec.relation_class_count = 2;
    spec.max_nodes = 3;
    spec.object_class_names = {"a", "b", "c", "d"};
    spec.relation_class_names = {"r1", "r2"};

    SceneGraph g;
    g.nodes = {{1, {0.2, 0.3, 0.1, 0.2}}, {3, {0.6, 0.7, 0.3, 0.1}}};
    g.init_relations();
    g.set_relation(0, 1, 2);
    g.set_relation(1, 0, 1);
    const EncodedGraph t = encode_graph(g, spec, EncodingScheme::kBit);
    const Mat q = assemble_triplets(t);
    const int nw = static_cast<int>(t.nodes.cols());

    SUBCASE("diagonal entry repeats the node row") {
        CHECK((q.block(0, 0, 1, nw) - t.nodes.row(0)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((q.block(0, nw, 1, nw) - t.nodes.row(0)).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("(0,1) and (1,0) swap node blocks and carry their own edges") {
        const auto r01 = q.row(0 * 3 + 1);
        const auto r10 = q.row(1 * 3 + 0);
        CHECK((r01.segment(0, nw) - r10.segment(nw, nw)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((r01.segment(nw, nw) - r10.segment(0, nw)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((r01.segment(2 * nw, t.edges.cols()) -
               t.edges.row(0 * 3 + 1)).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("slices reconstruct inputs bit-exactly") {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const auto row = q.row(i * 3 + j);
                CHECK((row.segment(0, nw).transpose() - t.nodes.row(i).transpose())
                          .cwiseAbs()
                          .maxCoeff() == 0.0);
                CHECK((row.segment(nw, nw).transpose() - t.nodes.row(j).transpose())
                          .cwiseAbs()
                          .maxCoeff() == 0.0);
            }
    }
}
