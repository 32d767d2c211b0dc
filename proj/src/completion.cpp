#include "diffusesg/completion.hpp"

#include <algorithm>
#include <cmath>

namespace dsg {

std::vector<std::string> CompletionMask::validate(int n) const {
    std::vector<std::string> v;
    if (static_cast<int>(node_label_unknown.size()) != n ||
        static_cast<int>(bbox_unknown.size()) != n ||
        static_cast<int>(edge_unknown.size()) != n * n)
        v.push_back("mask sizes do not match graph size");
    bool any = false;
    for (auto b : node_label_unknown) any = any || b;
    for (auto b : bbox_unknown) any = any || b;
    for (auto b : edge_unknown) any = any || b;
    if (!any) v.push_back("mask has no unknown entry");
    return v;
}

bool CompletionMask::all_unknown() const {
    for (auto b : node_label_unknown)
        if (!b) return false;
    for (auto b : bbox_unknown)
        if (!b) return false;
    for (auto b : edge_unknown)
        if (!b) return false;
    return true;
}

CompletionMask make_empty_mask(int n) {
    CompletionMask m;
    m.node_label_unknown.assign(static_cast<size_t>(n), 0);
    m.bbox_unknown.assign(static_cast<size_t>(n), 0);
    m.edge_unknown.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
    return m;
}

CompletionMask make_full_mask(int n) {
    CompletionMask m;
    m.node_label_unknown.assign(static_cast<size_t>(n), 1);
    m.bbox_unknown.assign(static_cast<size_t>(n), 1);
    m.edge_unknown.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 1);
    return m;
}

namespace {

std::vector<int> nodes_with_degree(const SceneGraph& g) {
    std::vector<int> eligible;
    const int n = g.size();
    for (int i = 0; i < n; ++i) {
        int degree = 0;
        for (int j = 0; j < n; ++j) {
            if (g.relation(i, j) != 0) ++degree;
            if (g.relation(j, i) != 0) ++degree;
        }
        if (degree >= 1) eligible.push_back(i);
    }
    return eligible;
}

}  // namespace

CompletionMask mask_single_node_label(const SceneGraph& g, Rng& rng, int* node_out) {
    const auto eligible = nodes_with_degree(g);
    if (eligible.empty()) throw DataError("node-label mask: no node with degree >= 1");
    const int node =
        eligible[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(eligible.size()) - 1))];
    CompletionMask m = make_empty_mask(g.size());
    m.node_label_unknown[static_cast<size_t>(node)] = 1;
    if (node_out != nullptr) *node_out = node;
    return m;
}

CompletionMask mask_single_bbox(const SceneGraph& g, Rng& rng, int* node_out) {
    const auto eligible = nodes_with_degree(g);
    if (eligible.empty()) throw DataError("bbox mask: no node with degree >= 1");
    const int node =
        eligible[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(eligible.size()) - 1))];
    CompletionMask m = make_empty_mask(g.size());
    m.bbox_unknown[static_cast<size_t>(node)] = 1;
    if (node_out != nullptr) *node_out = node;
    return m;
}

CompletionMask mask_single_edge_label(const SceneGraph& g, Rng& rng, int* subj_out, int* obj_out) {
    std::vector<std::pair<int, int>> edges;
    const int n = g.size();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && g.relation(i, j) != 0) edges.emplace_back(i, j);
    if (edges.empty()) throw DataError("edge-label mask: graph has no relations");
    const auto [s, o] =
        edges[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(edges.size()) - 1))];
    CompletionMask m = make_empty_mask(n);
    m.edge_unknown[static_cast<size_t>(s) * n + o] = 1;
    if (subj_out != nullptr) *subj_out = s;
    if (obj_out != nullptr) *obj_out = o;
    return m;
}

namespace {

KnownRegion build_known_region(const EncodedGraph& clean, const CompletionMask& mask, int n,
                               const CodecDims& dims) {
    KnownRegion known;
    known.v_values = clean.nodes;
    known.e_values = clean.edges;
    const int side = clean.side;
    known.v_known.assign(static_cast<size_t>(side) * dims.node_width(), 0);
    known.e_known.assign(static_cast<size_t>(side) * side * dims.d_e, 0);
    for (int i = 0; i < n; ++i) {
        if (!mask.node_label_unknown[static_cast<size_t>(i)])
            for (int k = 0; k < dims.d_c; ++k) {
                known.v_known[static_cast<size_t>(i) * dims.node_width() + k] = 1;
                known.any = true;
            }
        if (!mask.bbox_unknown[static_cast<size_t>(i)])
            for (int k = 0; k < 4; ++k) {
                known.v_known[static_cast<size_t>(i) * dims.node_width() + dims.d_c + k] = 1;
                known.any = true;
            }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (mask.edge_unknown[static_cast<size_t>(i) * n + j]) continue;
            for (int k = 0; k < dims.d_e; ++k) {
                known.e_known[(static_cast<size_t>(i) * side + j) * dims.d_e + k] = 1;
                known.any = true;
            }
        }
    return known;
}

void restore_known(SceneGraph& out, const SceneGraph& known, const CompletionMask& mask) {
    const int n = known.size();
    for (int i = 0; i < n; ++i) {
        if (!mask.node_label_unknown[static_cast<size_t>(i)])
            out.nodes[static_cast<size_t>(i)].label = known.nodes[static_cast<size_t>(i)].label;
        if (!mask.bbox_unknown[static_cast<size_t>(i)])
            out.nodes[static_cast<size_t>(i)].box = known.nodes[static_cast<size_t>(i)].box;
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && !mask.edge_unknown[static_cast<size_t>(i) * n + j])
                out.set_relation(i, j, known.relation(i, j));
}

}  // namespace

std::vector<SceneGraph> inpaint_sample_batch(const GraphDenoiser& net,
                                             const ParamStore& params_ema, const SceneGraph& known,
                                             const CompletionMask& mask, const DatasetSpec& spec,
                                             EncodingScheme scheme, const SamplerConfig& cfg,
                                             const Preconditioning& pc, int count, Rng& rng,
                                             int chunk) {
    const int n = known.size();
    const auto mask_violations = mask.validate(n);
    if (!mask_violations.empty()) throw DataError("completion mask: " + mask_violations.front());
    const auto graph_violations = validate_graph(known, spec);
    if (!graph_violations.empty())
        throw DataError("completion input graph: " + graph_violations.front());

    const CodecDims dims = dims_for_scheme(scheme, spec);
    const int side = net.arch().tensor_side;
    check_contract(side == spec.max_nodes, "inpaint: architecture side != spec.max_nodes");
    const EncodedGraph clean = encode_graph(known, spec, scheme);
    const KnownRegion region = build_known_region(clean, mask, n, dims);

    ChainLayout layout{side, side * side, dims.node_width(), dims.d_e};
    std::vector<SceneGraph> out;
    out.reserve(static_cast<size_t>(count));
    for (int start = 0; start < count; start += chunk) {
        const int b = std::min(chunk, count - start);
        Mat v(static_cast<Eigen::Index>(b) * layout.node_rows, layout.node_cols);
        Mat e(static_cast<Eigen::Index>(b) * layout.edge_rows, layout.edge_cols);
        std::vector<Rng> chain_rngs, inpaint_rngs;
        for (int c = 0; c < b; ++c) {
            chain_rngs.push_back(rng.substream("chain", static_cast<uint64_t>(start + c)));
            inpaint_rngs.push_back(rng.substream("inpaint", static_cast<uint64_t>(start + c)));
        }
        run_chains(make_network_denoiser(net, params_ema, pc, b), v, e, layout, b, cfg, chain_rngs,
                   &region, &inpaint_rngs);
        for (int c = 0; c < b; ++c) {
            EncodedGraph t;
            t.side = side;
            t.real_size = n;
            t.nodes = v.middleRows(static_cast<Eigen::Index>(c) * layout.node_rows, layout.node_rows);
            t.edges = e.middleRows(static_cast<Eigen::Index>(c) * layout.edge_rows, layout.edge_rows);
            SceneGraph g = decode_graph(t, spec, scheme);
            restore_known(g, known, mask);
            out.push_back(std::move(g));
        }
    }
    return out;
}

SceneGraph inpaint_sample(const GraphDenoiser& net, const ParamStore& params_ema,
                          const SceneGraph& known, const CompletionMask& mask,
                          const DatasetSpec& spec, EncodingScheme scheme, const SamplerConfig& cfg,
                          const Preconditioning& pc, Rng& rng) {
    return inpaint_sample_batch(net, params_ema, known, mask, spec, scheme, cfg, pc, 1, rng)
        .front();
}

double hit_rate_at_k(const std::vector<LabelCompletionResult>& results, int k, Rng& tie_rng) {
    if (k < 1) throw ConfigError("hit_rate_at_k: k must be >= 1");
    if (results.empty()) return 0.0;
    double hits = 0.0;
    for (size_t idx = 0; idx < results.size(); ++idx) {
        const auto& r = results[idx];
        std::map<int, int> counts;
        for (int label : r.completions) counts[label] += 1;
        const auto gt = counts.find(r.ground_truth);
        if (gt == counts.end()) continue;  // never predicted
        int above = 0, ties = 0, tie_rank = 0;
        // Boundary ties get a seeded random priority. Priorities come from a
        // per-instance substream so the kept top-k sets are nested in k and
        // the hit rate is monotone.
        Rng inst = tie_rng.substream("hrk-tie", static_cast<uint64_t>(idx));
        double gt_priority = 0.0;
        std::vector<double> tie_priorities;
        for (const auto& [label, c] : counts) {
            const double priority = inst.uniform();
            if (c > gt->second) ++above;
            if (c == gt->second) {
                ++ties;
                tie_priorities.push_back(priority);
                if (label == r.ground_truth) gt_priority = priority;
            }
        }
        const int slots = k - above;
        bool hit = false;
        if (slots >= ties) {
            hit = true;
        } else if (slots > 0) {
            for (double p : tie_priorities)
                if (p > gt_priority) ++tie_rank;
            hit = tie_rank < slots;
        }
        hits += hit ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(results.size());
}

double mean_accuracy(const std::vector<LabelCompletionResult>& results) {
    if (results.empty()) throw DataError("mean_accuracy: no results");
    double acc = 0.0;
    for (const auto& r : results) {
        check_contract(!r.completions.empty(), "mean_accuracy: empty completion set");
        int correct = 0;
        for (int label : r.completions)
            if (label == r.ground_truth) ++correct;
        acc += static_cast<double>(correct) / static_cast<double>(r.completions.size());
    }
    return acc / static_cast<double>(results.size());
}

namespace {

struct PixelRect {
    int x0, x1, y0, y1;  // half-open
};

PixelRect pixel_footprint(const BBox& box, int grid_side) {
    const auto clampi = [grid_side](int v) { return std::clamp(v, 0, grid_side); };
    PixelRect r;
    r.x0 = clampi(static_cast<int>(std::floor(box.x1() * grid_side)));
    r.x1 = clampi(static_cast<int>(std::ceil(box.x2() * grid_side)));
    r.y0 = clampi(static_cast<int>(std::floor(box.y1() * grid_side)));
    r.y1 = clampi(static_cast<int>(std::ceil(box.y2() * grid_side)));
    return r;
}

}  // namespace

uint64_t bbox_pixel_area(const BBox& box, int grid_side) {
    const PixelRect r = pixel_footprint(box, grid_side);
    return static_cast<uint64_t>(std::max(0, r.x1 - r.x0)) *
           static_cast<uint64_t>(std::max(0, r.y1 - r.y0));
}

std::vector<uint32_t> bbox_heatmap(const std::vector<BBox>& boxes, int grid_side) {
    check_contract(grid_side >= 1, "bbox_heatmap: bad grid side");
    std::vector<uint32_t> counts(static_cast<size_t>(grid_side) * grid_side, 0);
    for (const auto& box : boxes) {
        const PixelRect r = pixel_footprint(box, grid_side);
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x)
                counts[static_cast<size_t>(y) * grid_side + x] += 1;
    }
    return counts;
}

void write_grayscale_png(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                         int height);  // png.cpp

void write_heatmap_png(const std::string& path, const std::vector<uint32_t>& counts,
                       int grid_side) {
    check_contract(counts.size() == static_cast<size_t>(grid_side) * grid_side,
                   "heatmap: size mismatch");
    uint32_t max_count = 0;
    for (uint32_t c : counts) max_count = std::max(max_count, c);
    std::vector<uint8_t> pixels(counts.size(), 0);
    if (max_count > 0)
        for (size_t i = 0; i < counts.size(); ++i)
            pixels[i] = static_cast<uint8_t>(255.0 * counts[i] / max_count + 0.5);
    write_grayscale_png(path, pixels, grid_side, grid_side);
}

}  // namespace dsg
