#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "diffusesg/common.hpp"
#include "diffusesg/scene_graph.hpp"

namespace dsg {

// Normalized histograms on fixed supports. The degree support is
// 0..2*(max_nodes-1); edge labels count existing relations only (a graph with
// no relations keeps the zero vector).
struct GraphDescriptor {
    Vec degree_hist;
    Vec node_label_hist;
    Vec edge_label_hist;
};

GraphDescriptor describe_graph(const SceneGraph& g, const DatasetSpec& spec);

enum class DescriptorKind { kDegree, kNodeLabel, kEdgeLabel };

// Biased V-statistic with a Gaussian kernel exp(-|x-y|^2 / (2 bw^2)).
double mmd_squared(const std::vector<GraphDescriptor>& a, const std::vector<GraphDescriptor>& b,
                   DescriptorKind kind, double bandwidth);

using Triplet = std::tuple<int, int, int>;  // (subject label, relation label, object label)

struct TripletDistribution {
    std::map<Triplet, double> probs;
};

TripletDistribution triplet_distribution(const std::vector<SceneGraph>& graphs);

// Half the L1 distance between the two empirical triplet distributions over
// the union support (missing triplets contribute 0).
double triplet_tv(const std::vector<SceneGraph>& generated,
                  const std::vector<SceneGraph>& reference);

enum class F1Variant { kVanilla, kArea, kFrequency, kBoxOnly };

// Per-category Area(c)/Freq(c) taken from a validation split.
struct CategoryWeights {
    std::vector<double> mean_area;  // per object class
    std::vector<double> frequency;
};

CategoryWeights category_weights(const std::vector<SceneGraph>& validation, const DatasetSpec& spec);

// Node-only view of a graph.
struct Layout {
    std::vector<ObjectNode> nodes;
};

Layout layout_of(const SceneGraph& g);

double box_iou(const BBox& a, const BBox& b);

// Weighted per-category F1 between two layouts, averaged over the 10 IoU
// thresholds k/20 for k = 1..10. Matching is greedy by descending IoU within
// a category. Categories absent from both layouts are excluded and weights
// renormalized; a category present in exactly one layout scores 0.
double f1_pair(const Layout& generated, const Layout& reference, F1Variant variant,
               const CategoryWeights& weights);

// Mean over generated layouts of the best f1_pair against any reference.
double f1_score(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
                F1Variant variant, const CategoryWeights& weights);

struct MetricReport {
    double node_mmd = 0.0;
    double degree_mmd = 0.0;
    double edge_mmd = 0.0;
    double triplet_tv = 0.0;
    double f1_vanilla = 0.0;
    double f1_area = 0.0;
    double f1_frequency = 0.0;
    double f1_box_only = 0.0;
    int generated_count = 0;
    int reference_count = 0;
    double bandwidth = 1.0;
    uint64_t seed = 0;

    std::string to_json() const;
};

MetricReport evaluate_all(const std::vector<SceneGraph>& generated,
                          const std::vector<SceneGraph>& reference, const DatasetSpec& spec,
                          const CategoryWeights& weights, double bandwidth = 1.0);

MetricReport average_reports(const std::vector<MetricReport>& reports);

}  // namespace dsg
