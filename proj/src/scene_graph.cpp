#include "diffusesg/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "diffusesg/common.hpp"

namespace dsg {

using nlohmann::json;

std::vector<std::string> DatasetSpec::validate() const {
    std::vector<std::string> v;
    if (object_class_count <= 0) v.push_back("object_class_count must be positive");
    if (relation_class_count <= 0) v.push_back("relation_class_count must be positive");
    if (max_nodes <= 0) v.push_back("max_nodes must be positive");
    if (!object_class_names.empty() &&
        static_cast<int>(object_class_names.size()) != object_class_count)
        v.push_back("object_class_names length != object_class_count");
    if (!relation_class_names.empty() &&
        static_cast<int>(relation_class_names.size()) != relation_class_count)
        v.push_back("relation_class_names length != relation_class_count");
    return v;
}

uint64_t DatasetSpec::hash() const {
    std::ostringstream os;
    os << object_class_count << '|' << relation_class_count << '|' << max_nodes << '|'
       << fully_connected;
    for (const auto& s : object_class_names) os << '|' << s;
    for (const auto& s : relation_class_names) os << '|' << s;
    const std::string flat = os.str();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : flat) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::string> NodeCountDistribution::validate() const {
    std::vector<std::string> v;
    if (probs.empty()) {
        v.push_back("empty node-count distribution");
        return v;
    }
    double sum = 0.0;
    for (const auto& [n, p] : probs) {
        if (n <= 0) v.push_back("node count " + std::to_string(n) + " must be positive");
        if (p < 0.0) v.push_back("negative probability at n=" + std::to_string(n));
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) v.push_back("probabilities sum to " + std::to_string(sum));
    return v;
}

NodeCountDistribution NodeCountDistribution::from_counts(const std::vector<int>& sizes) {
    NodeCountDistribution d;
    if (sizes.empty()) return d;
    for (int n : sizes) d.probs[n] += 1.0;
    for (auto& [n, p] : d.probs) p /= static_cast<double>(sizes.size());
    return d;
}

int sample_node_count(const NodeCountDistribution& dist, Rng& rng) {
    const auto violations = dist.validate();
    if (!violations.empty()) throw ConfigError("sample_node_count: " + violations.front());
    double u = rng.uniform();
    double acc = 0.0;
    int last = 0;
    for (const auto& [n, p] : dist.probs) {
        acc += p;
        last = n;
        if (u < acc) return n;
    }
    return last;  // u landed in the residual rounding mass
}

std::vector<std::string> validate_graph(const SceneGraph& g, const DatasetSpec& spec) {
    std::vector<std::string> v;
    const int n = g.size();
    if (g.relations.size() != static_cast<size_t>(n) * static_cast<size_t>(n)) {
        v.push_back("relation matrix is not n*n");
        return v;  // indexing below would be unsafe
    }
    for (int i = 0; i < n; ++i) {
        const ObjectNode& node = g.nodes[static_cast<size_t>(i)];
        if (node.label < 0 || node.label >= spec.object_class_count)
            v.push_back("node " + std::to_string(i) + ": label " + std::to_string(node.label) +
                        " outside [0," + std::to_string(spec.object_class_count) + ")");
        const double coords[4] = {node.box.cx, node.box.cy, node.box.w, node.box.h};
        for (double c : coords)
            if (!(c >= 0.0 && c <= 1.0)) {
                v.push_back("node " + std::to_string(i) + ": bbox coordinate out of [0,1]");
                break;
            }
        if (!(node.box.w > 0.0) || !(node.box.h > 0.0))
            v.push_back("node " + std::to_string(i) + ": nonpositive extent");
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int r = g.relation(i, j);
            if (i == j && r != 0) v.push_back("self-loop present at node " + std::to_string(i));
            if (r < 0 || r > spec.relation_class_count)
                v.push_back("relation (" + std::to_string(i) + "," + std::to_string(j) +
                            ") label " + std::to_string(r) + " outside [0," +
                            std::to_string(spec.relation_class_count) + "]");
        }
    }
    return v;
}

PaddedGraph pad_graph(const SceneGraph& g, const DatasetSpec& spec) {
    const int n = g.size();
    if (n > spec.max_nodes)
        throw DataError("pad_graph: graph has " + std::to_string(n) + " nodes, max_nodes is " +
                        std::to_string(spec.max_nodes));
    PaddedGraph p;
    p.side = spec.max_nodes;
    p.real_size = n;
    p.labels.assign(static_cast<size_t>(p.side), PaddedGraph::kFillLabel);
    // 0.5 everywhere: the box fill that the codec maps to numeric zero.
    p.boxes.assign(static_cast<size_t>(p.side) * 4, 0.5);
    p.relations.assign(static_cast<size_t>(p.side) * p.side, 0);
    for (int i = 0; i < n; ++i) {
        p.labels[static_cast<size_t>(i)] = g.nodes[static_cast<size_t>(i)].label;
        const BBox& b = g.nodes[static_cast<size_t>(i)].box;
        p.boxes[static_cast<size_t>(i) * 4 + 0] = b.cx;
        p.boxes[static_cast<size_t>(i) * 4 + 1] = b.cy;
        p.boxes[static_cast<size_t>(i) * 4 + 2] = b.w;
        p.boxes[static_cast<size_t>(i) * 4 + 3] = b.h;
        for (int j = 0; j < n; ++j) p.relations[static_cast<size_t>(i) * p.side + j] = g.relation(i, j);
    }
    return p;
}

SceneGraph unpad_graph(const PaddedGraph& padded, int n) {
    if (n > padded.side)
        throw DataError("unpad_graph: n=" + std::to_string(n) + " exceeds tensor side " +
                        std::to_string(padded.side));
    SceneGraph g;
    g.nodes.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        g.nodes[static_cast<size_t>(i)].label = padded.labels[static_cast<size_t>(i)];
        g.nodes[static_cast<size_t>(i)].box = {padded.boxes[static_cast<size_t>(i) * 4 + 0],
                                               padded.boxes[static_cast<size_t>(i) * 4 + 1],
                                               padded.boxes[static_cast<size_t>(i) * 4 + 2],
                                               padded.boxes[static_cast<size_t>(i) * 4 + 3]};
    }
    g.init_relations();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) g.set_relation(i, j, padded.relation(i, j));
    return g;
}

const std::vector<std::string> kSpatialRelationNames = {
    "left of", "right of", "above", "below", "inside", "surrounding"};

namespace {

bool box_inside(const BBox& a, const BBox& b) {
    // a lies entirely within b; equal boxes fall through to the angle rule.
    return a.x1() >= b.x1() && a.x2() <= b.x2() && a.y1() >= b.y1() && a.y2() <= b.y2() &&
           a.area() < b.area();
}

int angle_relation(const BBox& from, const BBox& to) {
    // relation(i,j) = position of i relative to j, from the angle of the
    // vector i->j. |theta| <= 45 means j sits to the right, so i is left of j.
    // Boundaries, including the degenerate zero vector, go to the horizontal
    // labels.
    const double dx = to.cx - from.cx;
    const double dy = to.cy - from.cy;
    const double theta = std::atan2(dy, dx) * 180.0 / M_PI;
    if (std::abs(theta) <= 45.0) return kSpatialLeftOf;
    if (std::abs(theta) >= 135.0) return kSpatialRightOf;
    return theta > 0.0 ? kSpatialAbove : kSpatialBelow;  // y grows downward
}

}  // namespace

std::vector<int> derive_spatial_relations(const std::vector<ObjectNode>& nodes) {
    const int n = static_cast<int>(nodes.size());
    check_contract(n >= 1, "derive_spatial_relations: need at least one node");
    std::vector<int> rel(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const BBox& a = nodes[static_cast<size_t>(i)].box;
            const BBox& b = nodes[static_cast<size_t>(j)].box;
            int r;
            if (box_inside(a, b))
                r = kSpatialInside;
            else if (box_inside(b, a))
                r = kSpatialSurrounding;
            else
                r = angle_relation(a, b);
            rel[static_cast<size_t>(i) * n + j] = r;
        }
    }
    return rel;
}

NodeCountDistribution Dataset::node_count_distribution() const {
    return NodeCountDistribution::from_counts(sizes());
}

std::vector<int> Dataset::sizes() const {
    std::vector<int> s;
    s.reserve(graphs.size());
    for (const auto& g : graphs) s.push_back(g.size());
    return s;
}

namespace {

json spec_to_json(const DatasetSpec& spec) {
    return json{{"object_classes", spec.object_class_names},
                {"relation_classes", spec.relation_class_names},
                {"max_nodes", spec.max_nodes},
                {"fully_connected", spec.fully_connected}};
}

DatasetSpec spec_from_json(const json& j) {
    DatasetSpec spec;
    spec.object_class_names = j.at("object_classes").get<std::vector<std::string>>();
    spec.relation_class_names = j.at("relation_classes").get<std::vector<std::string>>();
    spec.object_class_count = static_cast<int>(spec.object_class_names.size());
    spec.relation_class_count = static_cast<int>(spec.relation_class_names.size());
    spec.max_nodes = j.at("max_nodes").get<int>();
    spec.fully_connected = j.value("fully_connected", false);
    return spec;
}

json graph_to_json(const SceneGraph& g) {
    json nodes = json::array();
    for (const auto& node : g.nodes)
        nodes.push_back(json{{"label", node.label},
                             {"bbox", {node.box.cx, node.box.cy, node.box.w, node.box.h}}});
    json edges = json::array();
    const int n = g.size();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && g.relation(i, j) != 0)
                edges.push_back(json::array({i, j, g.relation(i, j)}));
    return json{{"nodes", nodes}, {"edges", edges}};
}

SceneGraph graph_from_json(const json& j, size_t record_index) {
    SceneGraph g;
    const auto fail = [&](const std::string& field, const std::string& why) {
        throw DataError("record " + std::to_string(record_index) + ", field '" + field +
                        "': " + why);
    };
    if (!j.contains("nodes") || !j.at("nodes").is_array()) fail("nodes", "missing or not an array");
    for (const auto& nj : j.at("nodes")) {
        ObjectNode node;
        if (!nj.contains("label") || !nj.at("label").is_number_integer())
            fail("nodes.label", "missing or not an integer");
        node.label = nj.at("label").get<int>();
        if (!nj.contains("bbox") || !nj.at("bbox").is_array() || nj.at("bbox").size() != 4)
            fail("nodes.bbox", "must be an array of 4 numbers");
        const auto& bb = nj.at("bbox");
        node.box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                    bb[3].get<double>()};
        g.nodes.push_back(node);
    }
    g.init_relations();
    const int n = g.size();
    if (j.contains("edges")) {
        if (!j.at("edges").is_array()) fail("edges", "not an array");
        for (const auto& ej : j.at("edges")) {
            if (!ej.is_array() || ej.size() != 3) fail("edges", "entry must be [subject, object, label]");
            const int s = ej[0].get<int>();
            const int o = ej[1].get<int>();
            const int r = ej[2].get<int>();
            if (s < 0 || s >= n || o < 0 || o >= n) fail("edges", "node index out of range");
            if (r < 1) fail("edges", "relation label must be >= 1");
            g.set_relation(s, o, r);
        }
    }
    return g;
}

}  // namespace

Dataset load_dataset(const std::string& path, bool permissive) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset manifest: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset manifest: " + path);

    Dataset ds;
    try {
        const json header = json::parse(line);
        ds.spec = spec_from_json(header.at("spec"));
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest header: ") + e.what());
    }
    const auto spec_violations = ds.spec.validate();
    if (!spec_violations.empty()) throw DataError("manifest spec: " + spec_violations.front());

    size_t record_index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++record_index;
        SceneGraph g;
        try {
            g = graph_from_json(json::parse(line), record_index);
        } catch (const json::exception& e) {
            throw DataError("record " + std::to_string(record_index) + ": " + e.what());
        }
        const auto violations = validate_graph(g, ds.spec);
        if (!violations.empty()) {
            const std::string msg =
                "record " + std::to_string(record_index) + ": " + violations.front();
            if (permissive) {
                std::fprintf(stderr, "warning: skipping invalid %s\n", msg.c_str());
                continue;
            }
            throw DataError(msg);
        }
        if (g.size() > ds.spec.max_nodes)
            throw DataError("record " + std::to_string(record_index) + ": graph larger than max_nodes");
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset manifest: " + path);
    out << json{{"spec", spec_to_json(ds.spec)}}.dump() << '\n';
    for (const auto& g : ds.graphs) out << graph_to_json(g).dump() << '\n';
    if (!out) throw DataError("write failed: " + path);
}

namespace {

struct ToyClass {
    BBox canonical;
};

// Canonical layout: one large container class plus small boxes placed so that
// every pairwise center angle stays well clear of the +-45 degree boundaries
// under jitter, and containment w.r.t. class 0 cannot flip.
const std::vector<ToyClass>& toy_layout() {
    static const std::vector<ToyClass> layout = {
        {{0.50, 0.50, 0.92, 0.92}},
        {{0.18, 0.30, 0.12, 0.11}},
        {{0.50, 0.30, 0.13, 0.12}},
        {{0.82, 0.30, 0.11, 0.13}},
        {{0.22, 0.72, 0.12, 0.12}},
        {{0.78, 0.72, 0.13, 0.11}},
    };
    return layout;
}

}  // namespace

DatasetSpec ToyRuleConfig::dataset_spec() const {
    DatasetSpec spec;
    spec.object_class_count = class_count;
    for (int c = 0; c < class_count; ++c) spec.object_class_names.push_back("toy" + std::to_string(c));
    spec.relation_class_count = 6;
    spec.relation_class_names = kSpatialRelationNames;
    spec.max_nodes = tensor_side;
    spec.fully_connected = true;
    return spec;
}

Dataset generate_toy_dataset(int count, const ToyRuleConfig& cfg, Rng& rng) {
    if (cfg.class_count < 1 || cfg.class_count > static_cast<int>(toy_layout().size()))
        throw ConfigError("toy generator supports 1.." + std::to_string(toy_layout().size()) +
                          " classes");
    if (cfg.min_nodes < 1 || cfg.min_nodes > cfg.max_nodes)
        throw ConfigError("toy generator: bad node-count range");
    if (cfg.distinct_labels && cfg.max_nodes > cfg.class_count)
        throw ConfigError("toy generator: distinct labels need max_nodes <= class_count");
    if (cfg.max_nodes > cfg.tensor_side)
        throw ConfigError("toy generator: node range exceeds tensor side");

    Dataset ds;
    ds.spec = cfg.dataset_spec();
    ds.graphs.reserve(static_cast<size_t>(std::max(count, 0)));
    for (int k = 0; k < count; ++k) {
        const int n = static_cast<int>(rng.uniform_int(cfg.min_nodes, cfg.max_nodes));
        std::vector<int> labels;
        if (cfg.distinct_labels) {
            std::vector<int> pool(static_cast<size_t>(cfg.class_count));
            for (int c = 0; c < cfg.class_count; ++c) pool[static_cast<size_t>(c)] = c;
            for (int i = 0; i < n; ++i) {
                const auto pick = rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1);
                labels.push_back(pool[static_cast<size_t>(pick)]);
                pool.erase(pool.begin() + pick);
            }
        } else {
            for (int i = 0; i < n; ++i)
                labels.push_back(static_cast<int>(rng.uniform_int(0, cfg.class_count - 1)));
        }

        SceneGraph g;
        for (int i = 0; i < n; ++i) {
            const BBox& c = toy_layout()[static_cast<size_t>(labels[static_cast<size_t>(i)])].canonical;
            BBox b;
            b.cx = c.cx + rng.uniform(-cfg.center_jitter, cfg.center_jitter);
            b.cy = c.cy + rng.uniform(-cfg.center_jitter, cfg.center_jitter);
            b.w = c.w + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
            b.h = c.h + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
            b.cx = std::clamp(b.cx, 0.0, 1.0);
            b.cy = std::clamp(b.cy, 0.0, 1.0);
            b.w = std::clamp(b.w, 1e-4, 1.0);
            b.h = std::clamp(b.h, 1e-4, 1.0);
            g.nodes.push_back({labels[static_cast<size_t>(i)], b});
        }
        g.relations = derive_spatial_relations(g.nodes);
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

bool satisfies_spatial_rule(const SceneGraph& g) {
    if (g.size() == 0) return false;
    return g.relations == derive_spatial_relations(g.nodes);
}

}  // namespace dsg
