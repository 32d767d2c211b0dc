#pragma once

#include <string>
#include <vector>

#include "diffusesg/sampler.hpp"

namespace dsg {

// true = unknown / to-generate. Masks align with the real graph; the padded
// region is always free.
struct CompletionMask {
    std::vector<uint8_t> node_label_unknown;  // per node
    std::vector<uint8_t> bbox_unknown;        // per node
    std::vector<uint8_t> edge_unknown;        // per ordered pair, n*n

    std::vector<std::string> validate(int n) const;
    bool all_unknown() const;
};

CompletionMask make_empty_mask(int n);  // everything known (invalid until a bit is set)
CompletionMask make_full_mask(int n);   // everything unknown

// Task masks per the completion protocol. Node-label and bbox tasks pick a
// node with degree >= 1; the edge task picks an existing directed relation.
CompletionMask mask_single_node_label(const SceneGraph& g, Rng& rng, int* node_out = nullptr);
CompletionMask mask_single_bbox(const SceneGraph& g, Rng& rng, int* node_out = nullptr);
CompletionMask mask_single_edge_label(const SceneGraph& g, Rng& rng, int* subj_out = nullptr,
                                      int* obj_out = nullptr);

// Masked sampling: the chain runs the full sampler loop; after every state
// update the known channels are overwritten with the clean values perturbed
// to the current noise level; the final decode restores known entries
// bit-exactly from the input graph.
SceneGraph inpaint_sample(const GraphDenoiser& net, const ParamStore& params_ema,
                          const SceneGraph& known, const CompletionMask& mask,
                          const DatasetSpec& spec, EncodingScheme scheme,
                          const SamplerConfig& cfg, const Preconditioning& pc, Rng& rng);

// Independent repetitions of the same completion (chains share the known
// region, each owns its rng streams).
std::vector<SceneGraph> inpaint_sample_batch(const GraphDenoiser& net,
                                             const ParamStore& params_ema, const SceneGraph& known,
                                             const CompletionMask& mask, const DatasetSpec& spec,
                                             EncodingScheme scheme, const SamplerConfig& cfg,
                                             const Preconditioning& pc, int count, Rng& rng,
                                             int chunk = 64);

struct LabelCompletionResult {
    std::vector<int> completions;
    int ground_truth = 0;
};

struct BoxCompletionResult {
    std::vector<BBox> completions;
    BBox ground_truth;
};

// Per instance: 1 iff the ground truth is among the k most frequently
// predicted categories (ties at the k-boundary broken uniformly at random);
// mean over instances.
double hit_rate_at_k(const std::vector<LabelCompletionResult>& results, int k, Rng& tie_rng);

// Mean over instances of (correct predictions / repetitions).
double mean_accuracy(const std::vector<LabelCompletionResult>& results);

// Rasterize each box onto a grid_side x grid_side canvas and accumulate
// coverage counts. A cell (r,c) is covered when it intersects the half-open
// pixel footprint of the box.
std::vector<uint32_t> bbox_heatmap(const std::vector<BBox>& boxes, int grid_side);

// Pixel count of one box on the heatmap grid (the per-box mass).
uint64_t bbox_pixel_area(const BBox& box, int grid_side);

// Grayscale PNG, max-normalized.
void write_heatmap_png(const std::string& path, const std::vector<uint32_t>& counts,
                       int grid_side);

}  // namespace dsg
