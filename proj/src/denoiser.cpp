#include "diffusesg/denoiser.hpp"

#include <cmath>

namespace dsg {

std::vector<std::string> ArchitectureConfig::validate() const {
    std::vector<std::string> v;
    const int s = stages();
    if (s < 1) v.push_back("need at least one stage");
    if (static_cast<int>(up_blocks.size()) != s)
        v.push_back("down and up paths must mirror (same stage count)");
    if (static_cast<int>(heads.size()) != s) v.push_back("heads list must have one entry per stage");
    if (tensor_side < 1 || window_size < 1 || token_dim < 1 || ffn_dim < 1 || time_embed_dim < 2)
        v.push_back("dimensions must be positive (time_embed_dim >= 2)");
    for (int k = 0; k < s; ++k) {
        const int side = tensor_side >> k;
        if (k > 0 && (tensor_side >> (k - 1)) % 2 != 0) {
            v.push_back("stage " + std::to_string(k - 1) + " side is odd, cannot downsample");
            break;
        }
        if (side < window_size || side % window_size != 0)
            v.push_back("stage " + std::to_string(k) + " side " + std::to_string(side) +
                        " not divisible by window " + std::to_string(window_size));
        if (k < static_cast<int>(heads.size()) && heads[static_cast<size_t>(k)] >= 1) {
            if ((token_dim << k) % heads[static_cast<size_t>(k)] != 0)
                v.push_back("stage " + std::to_string(k) + " channels not divisible by heads");
        } else {
            v.push_back("stage " + std::to_string(k) + " needs >= 1 head");
        }
    }
    if (time_embed_dim % 2 != 0) v.push_back("time_embed_dim must be even");
    return v;
}

ArchitectureConfig ArchitectureConfig::toy() { return ArchitectureConfig{}; }

ArchitectureConfig ArchitectureConfig::vg() {
    ArchitectureConfig a;
    a.tensor_side = 64;
    a.window_size = 8;
    a.token_dim = 96;
    a.ffn_dim = 384;
    a.down_blocks = {1, 1, 3, 1};
    a.up_blocks = {1, 1, 3, 1};
    a.heads = {3, 6, 12, 24};
    a.time_embed_dim = 96;
    return a;
}

ArchitectureConfig ArchitectureConfig::coco() {
    ArchitectureConfig a;
    a.tensor_side = 40;
    a.window_size = 10;
    a.token_dim = 96;
    a.ffn_dim = 384;
    a.down_blocks = {1, 2, 6};
    a.up_blocks = {1, 2, 6};
    a.heads = {3, 6, 12};
    a.time_embed_dim = 96;
    return a;
}

int ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ContractError("unknown parameter '" + name + "'");
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& m : values) n += static_cast<size_t>(m.size());
    return n;
}

std::vector<int> window_order_indices(int side, int batch, int window, bool shifted) {
    const int off = shifted ? window / 2 : 0;
    const int nw = side / window;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(batch) * side * side);
    for (int b = 0; b < batch; ++b)
        for (int wi = 0; wi < nw; ++wi)
            for (int wj = 0; wj < nw; ++wj)
                for (int u = 0; u < window; ++u)
                    for (int v = 0; v < window; ++v) {
                        const int i = (wi * window + u + off) % side;
                        const int j = (wj * window + v + off) % side;
                        idx.push_back(b * side * side + i * side + j);
                    }
    return idx;
}

std::vector<int> invert_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

std::vector<int> relative_bias_indices(int window) {
    const int span = 2 * window - 1;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(window) * window * window * window);
    for (int u1 = 0; u1 < window; ++u1)
        for (int v1 = 0; v1 < window; ++v1)
            for (int u2 = 0; u2 < window; ++u2)
                for (int v2 = 0; v2 < window; ++v2)
                    idx.push_back((u1 - u2 + window - 1) * span + (v1 - v2 + window - 1));
    return idx;
}

namespace {

std::vector<int> row_to_item_map(int rows_per_item, int batch) {
    std::vector<int> map;
    map.reserve(static_cast<size_t>(rows_per_item) * batch);
    for (int b = 0; b < batch; ++b)
        for (int r = 0; r < rows_per_item; ++r) map.push_back(b);
    return map;
}

}  // namespace

GraphDenoiser::GraphDenoiser(ArchitectureConfig arch, CodecDims dims)
    : arch_(std::move(arch)), dims_(dims) {
    const auto violations = arch_.validate();
    if (!violations.empty()) throw ConfigError("architecture: " + violations.front());

    const int S = arch_.stages();
    tok_w_ = reg("tokenizer.w", input_channels(), arch_.token_dim, Init::kLinear);
    tok_b_ = reg("tokenizer.b", 1, arch_.token_dim, Init::kZeros);

    // Shift parity alternates across the global layer sequence so stages with
    // a single layer still see shifted partitions somewhere in the network.
    int global_layer = 0;
    down_stages_.resize(static_cast<size_t>(S));
    up_stages_.resize(static_cast<size_t>(S));
    down_transitions_.resize(static_cast<size_t>(S > 0 ? S - 1 : 0));
    up_transitions_.resize(static_cast<size_t>(S > 0 ? S - 1 : 0));

    for (int s = 0; s < S; ++s) {
        const int c = arch_.stage_channels(s);
        const int f = arch_.stage_ffn(s);
        if (s > 0) {
            const std::string p = "down" + std::to_string(s) + ".transition.";
            Transition& tr = down_transitions_[static_cast<size_t>(s - 1)];
            tr.mix_w = reg(p + "mix.w", 4 * arch_.stage_channels(s - 1), c, Init::kLinear);
            tr.mix_b = reg(p + "mix.b", 1, c, Init::kZeros);
            tr.ffn = reg_ffn_block(p, c, f);
        }
        Stage& st = down_stages_[static_cast<size_t>(s)];
        st.time_w = reg("down" + std::to_string(s) + ".time.w", arch_.time_embed_dim, c, Init::kLinear);
        st.time_b = reg("down" + std::to_string(s) + ".time.b", 1, c, Init::kZeros);
        for (int l = 0; l < arch_.down_blocks[static_cast<size_t>(s)]; ++l) {
            st.layers.push_back(reg_attn_layer(
                "down" + std::to_string(s) + ".attn" + std::to_string(l) + ".", c,
                arch_.heads[static_cast<size_t>(s)], (global_layer++ % 2) == 1, f));
        }
    }
    // Up path visits resolutions deepest-first; up_blocks is indexed by
    // resolution like down_blocks.
    for (int s = S - 1; s >= 0; --s) {
        const int c = arch_.stage_channels(s);
        const int f = arch_.stage_ffn(s);
        if (s < S - 1) {
            const std::string p = "up" + std::to_string(s) + ".transition.";
            Transition& tr = up_transitions_[static_cast<size_t>(s)];
            tr.mix_w = reg(p + "mix.w", arch_.stage_channels(s + 1) / 4, c, Init::kLinear);
            tr.mix_b = reg(p + "mix.b", 1, c, Init::kZeros);
            tr.ffn = reg_ffn_block(p, c, f);
        }
        Stage& st = up_stages_[static_cast<size_t>(s)];
        st.time_w = reg("up" + std::to_string(s) + ".time.w", arch_.time_embed_dim, c, Init::kLinear);
        st.time_b = reg("up" + std::to_string(s) + ".time.b", 1, c, Init::kZeros);
        for (int l = 0; l < arch_.up_blocks[static_cast<size_t>(s)]; ++l) {
            st.layers.push_back(reg_attn_layer(
                "up" + std::to_string(s) + ".attn" + std::to_string(l) + ".", c,
                arch_.heads[static_cast<size_t>(s)], (global_layer++ % 2) == 1, f));
        }
    }

    final_ln_g_ = reg("final_ln.g", 1, arch_.token_dim, Init::kOnes);
    final_ln_b_ = reg("final_ln.b", 1, arch_.token_dim, Init::kZeros);
    node_h1_w_ = reg("head.node.1.w", arch_.token_dim, arch_.ffn_dim, Init::kLinear);
    node_h1_b_ = reg("head.node.1.b", 1, arch_.ffn_dim, Init::kZeros);
    node_h2_w_ = reg("head.node.2.w", arch_.ffn_dim, dims_.node_width(), Init::kSmall);
    node_h2_b_ = reg("head.node.2.b", 1, dims_.node_width(), Init::kZeros);
    edge_h1_w_ = reg("head.edge.1.w", arch_.token_dim, arch_.ffn_dim, Init::kLinear);
    edge_h1_b_ = reg("head.edge.1.b", 1, arch_.ffn_dim, Init::kZeros);
    edge_h2_w_ = reg("head.edge.2.w", arch_.ffn_dim, dims_.d_e, Init::kSmall);
    edge_h2_b_ = reg("head.edge.2.b", 1, dims_.d_e, Init::kZeros);

    bias_index_ = std::make_shared<const std::vector<int>>(relative_bias_indices(arch_.window_size));
}

int GraphDenoiser::reg(const std::string& name, int rows, int cols, Init init) {
    specs_.push_back({name, rows, cols, init});
    return static_cast<int>(specs_.size()) - 1;
}

GraphDenoiser::FfnBlock GraphDenoiser::reg_ffn_block(const std::string& prefix, int channels,
                                                     int ffn) {
    FfnBlock f;
    f.ln_g = reg(prefix + "ffn.ln.g", 1, channels, Init::kOnes);
    f.ln_b = reg(prefix + "ffn.ln.b", 1, channels, Init::kZeros);
    f.f1_w = reg(prefix + "ffn.1.w", channels, ffn, Init::kLinear);
    f.f1_b = reg(prefix + "ffn.1.b", 1, ffn, Init::kZeros);
    f.f2_w = reg(prefix + "ffn.2.w", ffn, channels, Init::kLinear);
    f.f2_b = reg(prefix + "ffn.2.b", 1, channels, Init::kZeros);
    return f;
}

GraphDenoiser::AttnLayer GraphDenoiser::reg_attn_layer(const std::string& prefix, int channels,
                                                       int n_heads, bool shifted, int ffn) {
    AttnLayer l;
    l.ln1_g = reg(prefix + "ln1.g", 1, channels, Init::kOnes);
    l.ln1_b = reg(prefix + "ln1.b", 1, channels, Init::kZeros);
    l.qkv_w = reg(prefix + "qkv.w", channels, 3 * channels, Init::kLinear);
    l.qkv_b = reg(prefix + "qkv.b", 1, 3 * channels, Init::kZeros);
    l.proj_w = reg(prefix + "proj.w", channels, channels, Init::kLinear);
    l.proj_b = reg(prefix + "proj.b", 1, channels, Init::kZeros);
    const int span = 2 * arch_.window_size - 1;
    l.bias_table = reg(prefix + "bias", span * span, n_heads, Init::kZeros);
    l.ln2_g = reg(prefix + "ln2.g", 1, channels, Init::kOnes);
    l.ln2_b = reg(prefix + "ln2.b", 1, channels, Init::kZeros);
    l.ffn1_w = reg(prefix + "ffn.1.w", channels, ffn, Init::kLinear);
    l.ffn1_b = reg(prefix + "ffn.1.b", 1, ffn, Init::kZeros);
    l.ffn2_w = reg(prefix + "ffn.2.w", ffn, channels, Init::kLinear);
    l.ffn2_b = reg(prefix + "ffn.2.b", 1, channels, Init::kZeros);
    l.shifted = shifted;
    return l;
}

ParamStore GraphDenoiser::init_params(Rng& rng) const {
    ParamStore store;
    store.names.reserve(specs_.size());
    store.values.reserve(specs_.size());
    for (const auto& spec : specs_) {
        Mat m(spec.rows, spec.cols);
        switch (spec.init) {
            case Init::kZeros:
                m.setZero();
                break;
            case Init::kOnes:
                m.setOnes();
                break;
            case Init::kLinear: {
                const double std = 1.0 / std::sqrt(static_cast<double>(spec.rows));
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, std);
                break;
            }
            case Init::kSmall: {
                // Readout layers start near zero so the raw network output is
                // initially negligible against the skip term.
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 1e-4);
                break;
            }
        }
        store.names.push_back(spec.name);
        store.values.push_back(std::move(m));
    }
    return store;
}

std::vector<int> GraphDenoiser::push_params(Tape& tape, const ParamStore& params,
                                            bool requires_grad) const {
    check_contract(params.values.size() == specs_.size(), "param store does not match model");
    std::vector<int> nodes;
    nodes.reserve(specs_.size());
    for (size_t i = 0; i < specs_.size(); ++i) {
        check_contract(params.values[i].rows() == specs_[i].rows &&
                           params.values[i].cols() == specs_[i].cols,
                       "param '" + specs_[i].name + "' has wrong shape");
        nodes.push_back(tape.leaf(params.values[i], requires_grad));
    }
    return nodes;
}

Mat GraphDenoiser::time_features(const Vec& noise_cond) const {
    const int half = arch_.time_embed_dim / 2;
    Mat out(noise_cond.size(), arch_.time_embed_dim);
    for (Eigen::Index b = 0; b < noise_cond.size(); ++b) {
        for (int k = 0; k < half; ++k) {
            const double freq =
                std::pow(1000.0, half > 1 ? static_cast<double>(k) / (half - 1) : 0.0);
            out(b, 2 * k) = std::sin(noise_cond(b) * freq);
            out(b, 2 * k + 1) = std::cos(noise_cond(b) * freq);
        }
    }
    return out;
}

int GraphDenoiser::apply_ffn(Tape& t, const std::vector<int>& pn, int x, const FfnBlock& f) const {
    int h = t.layer_norm(x, pn[static_cast<size_t>(f.ln_g)], pn[static_cast<size_t>(f.ln_b)]);
    h = t.linear(h, pn[static_cast<size_t>(f.f1_w)], pn[static_cast<size_t>(f.f1_b)]);
    h = t.gelu(h);
    h = t.linear(h, pn[static_cast<size_t>(f.f2_w)], pn[static_cast<size_t>(f.f2_b)]);
    return t.add(x, h);
}

int GraphDenoiser::apply_attn(Tape& t, const std::vector<int>& pn, int x, const AttnLayer& l,
                              int side, int batch, int n_heads) const {
    const int c = static_cast<int>(t.value(x).cols());
    const int window = arch_.window_size;
    const int T = window * window;

    int h = t.layer_norm(x, pn[static_cast<size_t>(l.ln1_g)], pn[static_cast<size_t>(l.ln1_b)]);
    auto order = window_order_indices(side, batch, window, l.shifted);
    auto inverse = invert_permutation(order);
    h = t.gather_rows(h, std::move(order));
    const int qkv = t.linear(h, pn[static_cast<size_t>(l.qkv_w)], pn[static_cast<size_t>(l.qkv_b)]);
    const int q = t.slice_cols(qkv, 0, c);
    const int k = t.slice_cols(qkv, c, c);
    const int v = t.slice_cols(qkv, 2 * c, c);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c / n_heads));
    int a = t.window_attention(q, k, v, pn[static_cast<size_t>(l.bias_table)], bias_index_, T,
                               n_heads, scale);
    a = t.linear(a, pn[static_cast<size_t>(l.proj_w)], pn[static_cast<size_t>(l.proj_b)]);
    a = t.gather_rows(a, std::move(inverse));
    int out = t.add(x, a);

    int f = t.layer_norm(out, pn[static_cast<size_t>(l.ln2_g)], pn[static_cast<size_t>(l.ln2_b)]);
    f = t.linear(f, pn[static_cast<size_t>(l.ffn1_w)], pn[static_cast<size_t>(l.ffn1_b)]);
    f = t.gelu(f);
    f = t.linear(f, pn[static_cast<size_t>(l.ffn2_w)], pn[static_cast<size_t>(l.ffn2_b)]);
    return t.add(out, f);
}

GraphDenoiser::Output GraphDenoiser::forward(Tape& tape, const std::vector<int>& pn, int tokens_in,
                                             const Vec& noise_cond, int batch) const {
    const int side = arch_.tensor_side;
    check_contract(tape.value(tokens_in).rows() == static_cast<Eigen::Index>(batch) * side * side,
                   "forward: token rows != batch * side^2");
    check_contract(tape.value(tokens_in).cols() == input_channels(),
                   "forward: token channels mismatch (self-conditioning concat expected)");
    check_contract(noise_cond.size() == batch, "forward: one conditioning scalar per item");

    const int S = arch_.stages();
    const int emb = tape.input(time_features(noise_cond));

    int x = tape.linear(tokens_in, pn[static_cast<size_t>(tok_w_)], pn[static_cast<size_t>(tok_b_)]);

    std::vector<int> skips(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
        if (s > 0) {
            const Transition& tr = down_transitions_[static_cast<size_t>(s - 1)];
            x = tape.parity_merge(x, arch_.stage_side(s - 1), batch);
            x = tape.linear(x, pn[static_cast<size_t>(tr.mix_w)], pn[static_cast<size_t>(tr.mix_b)]);
            x = apply_ffn(tape, pn, x, tr.ffn);
        }
        const Stage& st = down_stages_[static_cast<size_t>(s)];
        const int e = tape.linear(emb, pn[static_cast<size_t>(st.time_w)],
                                  pn[static_cast<size_t>(st.time_b)]);
        x = tape.add_gathered_rows(
            x, e, row_to_item_map(arch_.stage_side(s) * arch_.stage_side(s), batch));
        for (const auto& layer : st.layers)
            x = apply_attn(tape, pn, x, layer, arch_.stage_side(s), batch,
                           arch_.heads[static_cast<size_t>(s)]);
        skips[static_cast<size_t>(s)] = x;
    }

    for (int s = S - 1; s >= 0; --s) {
        if (s < S - 1) {
            const Transition& tr = up_transitions_[static_cast<size_t>(s)];
            x = tape.parity_split(x, arch_.stage_side(s + 1), batch);
            x = tape.linear(x, pn[static_cast<size_t>(tr.mix_w)], pn[static_cast<size_t>(tr.mix_b)]);
            x = apply_ffn(tape, pn, x, tr.ffn);
            x = tape.add(x, skips[static_cast<size_t>(s)]);
        }
        const Stage& st = up_stages_[static_cast<size_t>(s)];
        const int e = tape.linear(emb, pn[static_cast<size_t>(st.time_w)],
                                  pn[static_cast<size_t>(st.time_b)]);
        x = tape.add_gathered_rows(
            x, e, row_to_item_map(arch_.stage_side(s) * arch_.stage_side(s), batch));
        for (const auto& layer : st.layers)
            x = apply_attn(tape, pn, x, layer, arch_.stage_side(s), batch,
                           arch_.heads[static_cast<size_t>(s)]);
    }

    x = tape.layer_norm(x, pn[static_cast<size_t>(final_ln_g_)], pn[static_cast<size_t>(final_ln_b_)]);

    // Node estimate for node i is read off the diagonal token (i,i).
    std::vector<int> diag;
    diag.reserve(static_cast<size_t>(batch) * side);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < side; ++i) diag.push_back(b * side * side + i * side + i);
    int nodes = tape.gather_rows(x, std::move(diag));
    nodes = tape.linear(nodes, pn[static_cast<size_t>(node_h1_w_)], pn[static_cast<size_t>(node_h1_b_)]);
    nodes = tape.gelu(nodes);
    nodes = tape.linear(nodes, pn[static_cast<size_t>(node_h2_w_)], pn[static_cast<size_t>(node_h2_b_)]);

    int edges = tape.linear(x, pn[static_cast<size_t>(edge_h1_w_)], pn[static_cast<size_t>(edge_h1_b_)]);
    edges = tape.gelu(edges);
    edges = tape.linear(edges, pn[static_cast<size_t>(edge_h2_w_)], pn[static_cast<size_t>(edge_h2_b_)]);

    return {nodes, edges};
}

}  // namespace dsg
