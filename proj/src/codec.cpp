#include "diffusesg/codec.hpp"

#include <algorithm>
#include <cmath>

namespace dsg {

EncodingScheme scheme_from_string(const std::string& name) {
    if (name == "scalar") return EncodingScheme::kScalar;
    if (name == "bit") return EncodingScheme::kBit;
    if (name == "onehot") return EncodingScheme::kOneHot;
    throw ConfigError("unknown encoding scheme '" + name + "' (expected scalar|bit|onehot)");
}

std::string scheme_to_string(EncodingScheme scheme) {
    switch (scheme) {
        case EncodingScheme::kScalar: return "scalar";
        case EncodingScheme::kBit: return "bit";
        case EncodingScheme::kOneHot: return "onehot";
    }
    throw ContractError("bad scheme enum");
}

namespace {

int bit_width(int class_count) {
    int w = 0;
    while ((1 << w) < class_count) ++w;
    return std::max(w, 1);
}

}  // namespace

int label_width(int class_count, EncodingScheme scheme) {
    switch (scheme) {
        case EncodingScheme::kScalar: return 1;
        case EncodingScheme::kBit: return bit_width(class_count);
        case EncodingScheme::kOneHot: return class_count;
    }
    throw ContractError("bad scheme enum");
}

CodecDims dims_for_scheme(EncodingScheme scheme, const DatasetSpec& spec) {
    CodecDims d;
    d.d_c = label_width(spec.object_class_count, scheme);
    d.d_e = label_width(spec.relation_class_count + 1, scheme);
    return d;
}

std::vector<double> encode_label(int label, int class_count, EncodingScheme scheme) {
    if (label < 0 || label >= class_count)
        throw DataError("encode_label: label " + std::to_string(label) + " outside [0," +
                        std::to_string(class_count) + ")");
    const int w = label_width(class_count, scheme);
    std::vector<double> out(static_cast<size_t>(w), -1.0);
    switch (scheme) {
        case EncodingScheme::kScalar:
            out[0] = class_count == 1 ? 0.0
                                      : 2.0 * static_cast<double>(label) /
                                                (static_cast<double>(class_count) - 1.0) -
                                            1.0;
            break;
        case EncodingScheme::kBit:
            for (int k = 0; k < w; ++k)
                if ((label >> (w - 1 - k)) & 1) out[static_cast<size_t>(k)] = 1.0;
            break;
        case EncodingScheme::kOneHot:
            out[static_cast<size_t>(label)] = 1.0;
            break;
    }
    return out;
}

int decode_label(const double* values, int width, int class_count, EncodingScheme scheme) {
    check_contract(width == label_width(class_count, scheme), "decode_label: width mismatch");
    switch (scheme) {
        case EncodingScheme::kScalar: {
            if (class_count == 1) return 0;
            const double v = std::clamp(values[0], -1.0, 1.0);
            const int bin = static_cast<int>(std::floor((v + 1.0) * 0.5 * class_count));
            return std::clamp(bin, 0, class_count - 1);
        }
        case EncodingScheme::kBit: {
            int label = 0;
            for (int k = 0; k < width; ++k) label = (label << 1) | (values[k] > 0.0 ? 1 : 0);
            return std::min(label, class_count - 1);
        }
        case EncodingScheme::kOneHot: {
            int best = 0;
            for (int k = 1; k < width; ++k)
                if (values[k] > values[best]) best = k;
            return best;
        }
    }
    throw ContractError("bad scheme enum");
}

int decode_label(const std::vector<double>& values, int class_count, EncodingScheme scheme) {
    return decode_label(values.data(), static_cast<int>(values.size()), class_count, scheme);
}

EncodedGraph encode_padded(const PaddedGraph& p, const DatasetSpec& spec, EncodingScheme scheme) {
    const CodecDims dims = dims_for_scheme(scheme, spec);
    EncodedGraph t;
    t.side = p.side;
    t.real_size = p.real_size;
    t.nodes = Mat::Zero(p.side, dims.node_width());
    t.edges = Mat::Zero(static_cast<Eigen::Index>(p.side) * p.side, dims.d_e);

    for (int i = 0; i < p.side; ++i) {
        if (p.labels[static_cast<size_t>(i)] == PaddedGraph::kFillLabel) continue;  // numeric-zero fill
        const auto enc = encode_label(p.labels[static_cast<size_t>(i)], spec.object_class_count, scheme);
        for (int k = 0; k < dims.d_c; ++k) t.nodes(i, k) = enc[static_cast<size_t>(k)];
        for (int k = 0; k < 4; ++k)
            t.nodes(i, dims.d_c + k) = encode_box_coord(p.boxes[static_cast<size_t>(i) * 4 + k]);
    }
    // Every edge entry, padding included, carries a relation encoding; the
    // padded region and the diagonal encode class 0.
    const int edge_classes = spec.relation_class_count + 1;
    std::vector<std::vector<double>> cache(static_cast<size_t>(edge_classes));
    for (int c = 0; c < edge_classes; ++c) cache[static_cast<size_t>(c)] = encode_label(c, edge_classes, scheme);
    for (int i = 0; i < p.side; ++i) {
        for (int j = 0; j < p.side; ++j) {
            const int r = p.relation(i, j);
            const auto& enc = cache[static_cast<size_t>(r)];
            for (int k = 0; k < dims.d_e; ++k)
                t.edges(static_cast<Eigen::Index>(i) * p.side + j, k) = enc[static_cast<size_t>(k)];
        }
    }
    return t;
}

EncodedGraph encode_graph(const SceneGraph& g, const DatasetSpec& spec, EncodingScheme scheme) {
    return encode_padded(pad_graph(g, spec), spec, scheme);
}

SceneGraph decode_graph(const EncodedGraph& t, const DatasetSpec& spec, EncodingScheme scheme) {
    const CodecDims dims = dims_for_scheme(scheme, spec);
    check_contract(t.nodes.cols() == dims.node_width() && t.edges.cols() == dims.d_e,
                   "decode_graph: tensor width does not match scheme");
    const int n = t.real_size;
    check_contract(n >= 0 && n <= t.side, "decode_graph: bad real_size");

    SceneGraph g;
    g.nodes.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        g.nodes[static_cast<size_t>(i)].label =
            decode_label(t.nodes.row(i).data(), dims.d_c, spec.object_class_count, scheme);
        BBox b;
        b.cx = std::clamp(decode_box_coord(t.nodes(i, dims.d_c + 0)), 0.0, 1.0);
        b.cy = std::clamp(decode_box_coord(t.nodes(i, dims.d_c + 1)), 0.0, 1.0);
        b.w = std::clamp(decode_box_coord(t.nodes(i, dims.d_c + 2)), 1e-4, 1.0);
        b.h = std::clamp(decode_box_coord(t.nodes(i, dims.d_c + 3)), 1e-4, 1.0);
        g.nodes[static_cast<size_t>(i)].box = b;
    }
    g.init_relations();
    const int edge_classes = spec.relation_class_count + 1;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto row = t.edges.row(static_cast<Eigen::Index>(i) * t.side + j);
            g.set_relation(i, j, decode_label(row.data(), dims.d_e, edge_classes, scheme));
        }
    return g;
}

Mat assemble_triplets(const Mat& nodes, const Mat& edges, int side) {
    check_contract(nodes.rows() == side && edges.rows() == static_cast<Eigen::Index>(side) * side,
                   "assemble_triplets: shape mismatch");
    const int nw = static_cast<int>(nodes.cols());
    const int de = static_cast<int>(edges.cols());
    Mat q(static_cast<Eigen::Index>(side) * side, 2 * nw + de);
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            const Eigen::Index r = static_cast<Eigen::Index>(i) * side + j;
            q.block(r, 0, 1, nw) = nodes.row(i);
            q.block(r, nw, 1, nw) = nodes.row(j);
            q.block(r, 2 * nw, 1, de) = edges.row(r);
        }
    }
    return q;
}

Mat assemble_triplets(const EncodedGraph& t) { return assemble_triplets(t.nodes, t.edges, t.side); }

}  // namespace dsg
