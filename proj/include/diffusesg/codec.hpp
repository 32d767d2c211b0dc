#pragma once

#include <string>
#include <vector>

#include "diffusesg/common.hpp"
#include "diffusesg/scene_graph.hpp"

namespace dsg {

enum class EncodingScheme { kScalar, kBit, kOneHot };

EncodingScheme scheme_from_string(const std::string& name);
std::string scheme_to_string(EncodingScheme scheme);

struct CodecDims {
    int d_c = 0;  // label channels per node
    int d_e = 0;  // channels per edge entry

    int node_width() const { return d_c + 4; }
    int triplet_width() const { return 2 * node_width() + d_e; }
};

// scalar -> (1,1); bit -> (ceil(log2 Zv), ceil(log2 (Ze+1)));
// one-hot -> (Zv, Ze+1). Edge attributes have Ze+1 classes (0 = none).
CodecDims dims_for_scheme(EncodingScheme scheme, const DatasetSpec& spec);

// Encode one label of an m-class attribute. Scalar maps to [-1,1], bit and
// one-hot emit +-1 channels (bit vectors are most-significant-bit first).
std::vector<double> encode_label(int label, int class_count, EncodingScheme scheme);

// Total on arbitrary real vectors: scalar bins [-1,1] equally with boundaries
// owned by the upper bin, bit thresholds on sign and clamps unrepresentable
// indices to class_count-1, one-hot takes the argmax.
int decode_label(const double* values, int width, int class_count, EncodingScheme scheme);
int decode_label(const std::vector<double>& values, int class_count, EncodingScheme scheme);

int label_width(int class_count, EncodingScheme scheme);

// Boxes ride in the encoded tensors on the same +-1 scale as the labels.
inline double encode_box_coord(double v) { return 2.0 * v - 1.0; }
inline double decode_box_coord(double v) { return 0.5 * (v + 1.0); }

// Continuous diffusion state of one graph: node rows are label channels then
// 4 box channels; edge entries hold the relation encoding (class 0 included).
// Padded node rows are numeric zero; padded edge entries encode relation 0.
struct EncodedGraph {
    Mat nodes;  // side x (d_c+4)
    Mat edges;  // (side*side) x d_e, row-major over (i,j)
    int side = 0;
    int real_size = 0;
};

EncodedGraph encode_graph(const SceneGraph& g, const DatasetSpec& spec, EncodingScheme scheme);
EncodedGraph encode_padded(const PaddedGraph& p, const DatasetSpec& spec, EncodingScheme scheme);

// Decodes the top-left real_size region; box channels are inverse-mapped then
// clamped to [0,1] with a 1e-4 minimum extent; the diagonal is forced to 0.
SceneGraph decode_graph(const EncodedGraph& t, const DatasetSpec& spec, EncodingScheme scheme);

// (side*side) x (2*(d_c+4) + d_e): entry (i,j) = [node_i, node_j, edge_ij].
Mat assemble_triplets(const EncodedGraph& t);
Mat assemble_triplets(const Mat& nodes, const Mat& edges, int side);

}  // namespace dsg
