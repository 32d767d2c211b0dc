#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffusesg/common.hpp"
#include "diffusesg/rng.hpp"

namespace dsg {

// Normalized (center_x, center_y, width, height), all in [0,1] of the canvas.
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x1() const { return cx - 0.5 * w; }
    double x2() const { return cx + 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    bool operator==(const BBox& o) const = default;
};

struct ObjectNode {
    int label = 0;  // in [0, object_class_count)
    BBox box;

    bool operator==(const ObjectNode& o) const = default;
};

// Directed graph over labeled, localized objects. relations is n*n row-major;
// entry (i,j) is the relation label from node i to node j, 0 meaning none.
// The diagonal is always 0.
struct SceneGraph {
    std::vector<ObjectNode> nodes;
    std::vector<int> relations;

    int size() const { return static_cast<int>(nodes.size()); }
    int relation(int i, int j) const { return relations[static_cast<size_t>(i) * nodes.size() + j]; }
    void set_relation(int i, int j, int label) {
        relations[static_cast<size_t>(i) * nodes.size() + j] = label;
    }
    void init_relations() { relations.assign(nodes.size() * nodes.size(), 0); }

    bool operator==(const SceneGraph& o) const = default;
};

struct DatasetSpec {
    int object_class_count = 0;    // Z_v
    int relation_class_count = 0;  // Z_e, labels 1..Z_e with 0 = none
    std::vector<std::string> object_class_names;
    std::vector<std::string> relation_class_names;
    int max_nodes = 0;  // padded tensor side
    bool fully_connected = false;

    std::vector<std::string> validate() const;
    // Stable content hash used to match checkpoints against manifests.
    uint64_t hash() const;
};

// Empirical distribution over graph sizes.
struct NodeCountDistribution {
    std::map<int, double> probs;

    std::vector<std::string> validate() const;
    static NodeCountDistribution from_counts(const std::vector<int>& sizes);
};

int sample_node_count(const NodeCountDistribution& dist, Rng& rng);

// Returns every invariant violation; empty means the graph is valid.
std::vector<std::string> validate_graph(const SceneGraph& g, const DatasetSpec& spec);

// Fixed-size view of a graph. Padded node slots carry the reserved fill label
// (-1) and a degenerate centered box; padded relation entries are 0.
struct PaddedGraph {
    static constexpr int kFillLabel = -1;

    int side = 0;       // max_nodes
    int real_size = 0;  // n
    std::vector<int> labels;      // side
    std::vector<double> boxes;    // side*4, cxcywh
    std::vector<int> relations;   // side*side

    int relation(int i, int j) const { return relations[static_cast<size_t>(i) * side + j]; }
};

PaddedGraph pad_graph(const SceneGraph& g, const DatasetSpec& spec);
SceneGraph unpad_graph(const PaddedGraph& padded, int n);

// Relation labels of the 6-class spatial vocabulary.
enum SpatialRelation : int {
    kSpatialNone = 0,
    kSpatialLeftOf = 1,
    kSpatialRightOf = 2,
    kSpatialAbove = 3,
    kSpatialBelow = 4,
    kSpatialInside = 5,
    kSpatialSurrounding = 6,
};

extern const std::vector<std::string> kSpatialRelationNames;  // 6 names, labels 1..6

// Deterministic geometric rule assigning relation(i,j) = position of box i
// relative to box j: containment first, then the angle quadrant of the vector
// from center i to center j with boundaries at the +-45 degree family owned
// by the horizontal labels (y grows downward, image convention). Produces a
// fully connected directed matrix without self-loops.
std::vector<int> derive_spatial_relations(const std::vector<ObjectNode>& nodes);

struct Dataset {
    DatasetSpec spec;
    std::vector<SceneGraph> graphs;

    NodeCountDistribution node_count_distribution() const;
    std::vector<int> sizes() const;
};

// JSON-lines manifest: header line with the spec, one record per graph.
// permissive=false rejects the file on the first invalid record; true skips
// invalid records with a warning on stderr.
Dataset load_dataset(const std::string& path, bool permissive = false);
void save_dataset(const Dataset& ds, const std::string& path);

// Rule-based generator used as the training-set stand-in and as the oracle
// for end-to-end checks: relation labels are always exactly
// derive_spatial_relations(nodes).
struct ToyRuleConfig {
    int min_nodes = 3;
    int max_nodes = 6;
    int class_count = 6;                // must be <= canonical layout size
    double center_jitter = 0.015;
    double size_jitter = 0.01;
    bool distinct_labels = true;        // sample labels without replacement
    int tensor_side = 8;                // DatasetSpec.max_nodes

    DatasetSpec dataset_spec() const;
};

Dataset generate_toy_dataset(int count, const ToyRuleConfig& cfg, Rng& rng);

// True iff the graph's relations equal the spatial rule applied to its boxes.
bool satisfies_spatial_rule(const SceneGraph& g);

}  // namespace dsg
