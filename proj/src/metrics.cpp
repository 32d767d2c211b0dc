#include "diffusesg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dsg {

GraphDescriptor describe_graph(const SceneGraph& g, const DatasetSpec& spec) {
    GraphDescriptor d;
    const int n = g.size();
    d.degree_hist = Vec::Zero(2 * (spec.max_nodes - 1) + 1);
    d.node_label_hist = Vec::Zero(spec.object_class_count);
    d.edge_label_hist = Vec::Zero(spec.relation_class_count);

    int edge_count = 0;
    for (int i = 0; i < n; ++i) {
        int degree = 0;
        for (int j = 0; j < n; ++j) {
            if (g.relation(i, j) != 0) ++degree;
            if (g.relation(j, i) != 0) ++degree;
        }
        if (degree < d.degree_hist.size()) d.degree_hist(degree) += 1.0;
        d.node_label_hist(g.nodes[static_cast<size_t>(i)].label) += 1.0;
        for (int j = 0; j < n; ++j) {
            const int r = g.relation(i, j);
            if (r >= 1) {
                d.edge_label_hist(r - 1) += 1.0;
                ++edge_count;
            }
        }
    }
    if (n > 0) {
        d.degree_hist /= static_cast<double>(n);
        d.node_label_hist /= static_cast<double>(n);
    }
    if (edge_count > 0) d.edge_label_hist /= static_cast<double>(edge_count);
    return d;
}

namespace {

const Vec& pick(const GraphDescriptor& d, DescriptorKind kind) {
    switch (kind) {
        case DescriptorKind::kDegree: return d.degree_hist;
        case DescriptorKind::kNodeLabel: return d.node_label_hist;
        case DescriptorKind::kEdgeLabel: return d.edge_label_hist;
    }
    throw ContractError("bad descriptor kind");
}

double gaussian_kernel(const Vec& x, const Vec& y, double bandwidth) {
    return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

}  // namespace

double mmd_squared(const std::vector<GraphDescriptor>& a, const std::vector<GraphDescriptor>& b,
                   DescriptorKind kind, double bandwidth) {
    if (a.empty() || b.empty()) throw ContractError("mmd_squared: empty descriptor set");
    if (!(bandwidth > 0.0)) throw ConfigError("mmd_squared: bandwidth must be > 0");
    const auto n = static_cast<double>(a.size());
    const auto m = static_cast<double>(b.size());
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (const auto& x : a)
        for (const auto& y : a) kaa += gaussian_kernel(pick(x, kind), pick(y, kind), bandwidth);
    for (const auto& x : b)
        for (const auto& y : b) kbb += gaussian_kernel(pick(x, kind), pick(y, kind), bandwidth);
    for (const auto& x : a)
        for (const auto& y : b) kab += gaussian_kernel(pick(x, kind), pick(y, kind), bandwidth);
    return kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m);
}

TripletDistribution triplet_distribution(const std::vector<SceneGraph>& graphs) {
    TripletDistribution dist;
    double total = 0.0;
    for (const auto& g : graphs) {
        const int n = g.size();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const int r = g.relation(i, j);
                if (r < 1) continue;
                dist.probs[{g.nodes[static_cast<size_t>(i)].label, r,
                            g.nodes[static_cast<size_t>(j)].label}] += 1.0;
                total += 1.0;
            }
    }
    if (total > 0.0)
        for (auto& [key, p] : dist.probs) p /= total;
    return dist;
}

double triplet_tv(const std::vector<SceneGraph>& generated,
                  const std::vector<SceneGraph>& reference) {
    if (reference.empty()) throw ContractError("triplet_tv: empty reference");
    const TripletDistribution p = triplet_distribution(generated);
    const TripletDistribution q = triplet_distribution(reference);
    // A side with no relations at all is maximally distant from one that has
    // some (disjoint supports).
    if (p.probs.empty() != q.probs.empty()) return 1.0;
    std::set<Triplet> support;
    for (const auto& [key, v] : p.probs) support.insert(key);
    for (const auto& [key, v] : q.probs) support.insert(key);
    double l1 = 0.0;
    for (const auto& key : support) {
        const auto pi = p.probs.find(key);
        const auto qi = q.probs.find(key);
        l1 += std::abs((pi != p.probs.end() ? pi->second : 0.0) -
                       (qi != q.probs.end() ? qi->second : 0.0));
    }
    return 0.5 * l1;
}

CategoryWeights category_weights(const std::vector<SceneGraph>& validation,
                                 const DatasetSpec& spec) {
    CategoryWeights w;
    w.mean_area.assign(static_cast<size_t>(spec.object_class_count), 0.0);
    w.frequency.assign(static_cast<size_t>(spec.object_class_count), 0.0);
    std::vector<double> counts(static_cast<size_t>(spec.object_class_count), 0.0);
    for (const auto& g : validation)
        for (const auto& node : g.nodes) {
            counts[static_cast<size_t>(node.label)] += 1.0;
            w.mean_area[static_cast<size_t>(node.label)] += node.box.area();
        }
    for (size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] > 0.0) w.mean_area[c] /= counts[c];
        w.frequency[c] = counts[c];
    }
    return w;
}

Layout layout_of(const SceneGraph& g) { return Layout{g.nodes}; }

double box_iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

namespace {

// Greedy matching by descending IoU, each box used at most once; returns the
// matched IoUs. Deterministic tie-break by (generated index, reference index).
std::vector<double> greedy_match_ious(const std::vector<const BBox*>& gen,
                                      const std::vector<const BBox*>& ref) {
    struct Pair {
        double iou;
        int g, r;
    };
    std::vector<Pair> pairs;
    pairs.reserve(gen.size() * ref.size());
    for (int g = 0; g < static_cast<int>(gen.size()); ++g)
        for (int r = 0; r < static_cast<int>(ref.size()); ++r) {
            const double iou = box_iou(*gen[static_cast<size_t>(g)], *ref[static_cast<size_t>(r)]);
            if (iou > 0.0) pairs.push_back({iou, g, r});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.g != b.g) return a.g < b.g;
        return a.r < b.r;
    });
    std::vector<bool> gen_used(gen.size(), false), ref_used(ref.size(), false);
    std::vector<double> matched;
    for (const auto& p : pairs) {
        if (gen_used[static_cast<size_t>(p.g)] || ref_used[static_cast<size_t>(p.r)]) continue;
        gen_used[static_cast<size_t>(p.g)] = true;
        ref_used[static_cast<size_t>(p.r)] = true;
        matched.push_back(p.iou);
    }
    return matched;
}

// Mean over the 10 thresholds k/20 of the matched-pair F1.
double f1_category(const std::vector<const BBox*>& gen, const std::vector<const BBox*>& ref) {
    if (gen.empty() || ref.empty()) return 0.0;
    const auto matched = greedy_match_ious(gen, ref);
    double acc = 0.0;
    for (int k = 1; k <= 10; ++k) {
        const double thr = static_cast<double>(k) / 20.0;
        int tp = 0;
        for (double iou : matched)
            if (iou >= thr) ++tp;
        if (tp == 0) continue;
        const double precision = static_cast<double>(tp) / static_cast<double>(gen.size());
        const double recall = static_cast<double>(tp) / static_cast<double>(ref.size());
        acc += 2.0 * precision * recall / (precision + recall);
    }
    return acc / 10.0;
}

}  // namespace

double f1_pair(const Layout& generated, const Layout& reference, F1Variant variant,
               const CategoryWeights& weights) {
    if (variant == F1Variant::kBoxOnly) {
        std::vector<const BBox*> gen, ref;
        for (const auto& node : generated.nodes) gen.push_back(&node.box);
        for (const auto& node : reference.nodes) ref.push_back(&node.box);
        return f1_category(gen, ref);
    }

    // Group boxes per category over the union of present categories.
    std::map<int, std::pair<std::vector<const BBox*>, std::vector<const BBox*>>> per_class;
    for (const auto& node : generated.nodes)
        per_class[node.label].first.push_back(&node.box);
    for (const auto& node : reference.nodes)
        per_class[node.label].second.push_back(&node.box);
    if (per_class.empty()) return 0.0;

    double weight_sum = 0.0;
    double score = 0.0;
    for (const auto& [label, boxes] : per_class) {
        double w = 1.0;
        switch (variant) {
            case F1Variant::kVanilla: w = 1.0; break;
            case F1Variant::kArea: w = weights.mean_area[static_cast<size_t>(label)]; break;
            case F1Variant::kFrequency: w = weights.frequency[static_cast<size_t>(label)]; break;
            case F1Variant::kBoxOnly: break;
        }
        weight_sum += w;
        score += w * f1_category(boxes.first, boxes.second);
    }
    if (weight_sum <= 0.0) return 0.0;
    return score / weight_sum;
}

double f1_score(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
                F1Variant variant, const CategoryWeights& weights) {
    if (generated.empty() || reference.empty()) throw ContractError("f1_score: empty layout set");
    double total = 0.0;
    for (const auto& gen : generated) {
        double best = 0.0;
        for (const auto& ref : reference) best = std::max(best, f1_pair(gen, ref, variant, weights));
        total += best;
    }
    return total / static_cast<double>(generated.size());
}

MetricReport evaluate_all(const std::vector<SceneGraph>& generated,
                          const std::vector<SceneGraph>& reference, const DatasetSpec& spec,
                          const CategoryWeights& weights, double bandwidth) {
    if (generated.empty() || reference.empty()) throw ContractError("evaluate_all: empty set");
    MetricReport report;
    std::vector<GraphDescriptor> gen_desc, ref_desc;
    gen_desc.reserve(generated.size());
    ref_desc.reserve(reference.size());
    for (const auto& g : generated) gen_desc.push_back(describe_graph(g, spec));
    for (const auto& g : reference) ref_desc.push_back(describe_graph(g, spec));

    report.node_mmd = mmd_squared(gen_desc, ref_desc, DescriptorKind::kNodeLabel, bandwidth);
    report.degree_mmd = mmd_squared(gen_desc, ref_desc, DescriptorKind::kDegree, bandwidth);
    report.edge_mmd = mmd_squared(gen_desc, ref_desc, DescriptorKind::kEdgeLabel, bandwidth);
    report.triplet_tv = triplet_tv(generated, reference);

    std::vector<Layout> gen_layouts, ref_layouts;
    for (const auto& g : generated) gen_layouts.push_back(layout_of(g));
    for (const auto& g : reference) ref_layouts.push_back(layout_of(g));
    report.f1_vanilla = f1_score(gen_layouts, ref_layouts, F1Variant::kVanilla, weights);
    report.f1_area = f1_score(gen_layouts, ref_layouts, F1Variant::kArea, weights);
    report.f1_frequency = f1_score(gen_layouts, ref_layouts, F1Variant::kFrequency, weights);
    report.f1_box_only = f1_score(gen_layouts, ref_layouts, F1Variant::kBoxOnly, weights);

    report.generated_count = static_cast<int>(generated.size());
    report.reference_count = static_cast<int>(reference.size());
    report.bandwidth = bandwidth;
    return report;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
    check_contract(!reports.empty(), "average_reports: no reports");
    MetricReport avg;
    for (const auto& r : reports) {
        avg.node_mmd += r.node_mmd;
        avg.degree_mmd += r.degree_mmd;
        avg.edge_mmd += r.edge_mmd;
        avg.triplet_tv += r.triplet_tv;
        avg.f1_vanilla += r.f1_vanilla;
        avg.f1_area += r.f1_area;
        avg.f1_frequency += r.f1_frequency;
        avg.f1_box_only += r.f1_box_only;
        avg.generated_count += r.generated_count;
        avg.reference_count = r.reference_count;
        avg.bandwidth = r.bandwidth;
    }
    const double n = static_cast<double>(reports.size());
    avg.node_mmd /= n;
    avg.degree_mmd /= n;
    avg.edge_mmd /= n;
    avg.triplet_tv /= n;
    avg.f1_vanilla /= n;
    avg.f1_area /= n;
    avg.f1_frequency /= n;
    avg.f1_box_only /= n;
    return avg;
}

std::string MetricReport::to_json() const {
    nlohmann::json j{{"node_mmd", node_mmd},
                     {"degree_mmd", degree_mmd},
                     {"edge_mmd", edge_mmd},
                     {"triplet_tv", triplet_tv},
                     {"f1_vanilla", f1_vanilla},
                     {"f1_area", f1_area},
                     {"f1_frequency", f1_frequency},
                     {"f1_box_only", f1_box_only},
                     {"generated_count", generated_count},
                     {"reference_count", reference_count},
                     {"bandwidth", bandwidth},
                     {"seed", seed}};
    return j.dump(2);
}

}  // namespace dsg
