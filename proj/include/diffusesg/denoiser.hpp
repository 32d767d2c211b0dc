#pragma once

#include <string>
#include <vector>

#include "diffusesg/codec.hpp"
#include "diffusesg/common.hpp"
#include "diffusesg/rng.hpp"
#include "diffusesg/tape.hpp"

namespace dsg {

struct ArchitectureConfig {
    int tensor_side = 8;
    int window_size = 4;
    int token_dim = 32;
    int ffn_dim = 64;  // at full resolution; deeper stages scale with channels
    std::vector<int> down_blocks = {1, 1};
    std::vector<int> up_blocks = {1, 1};
    std::vector<int> heads = {2, 4};
    int time_embed_dim = 32;

    int stages() const { return static_cast<int>(down_blocks.size()); }
    int stage_side(int s) const { return tensor_side >> s; }
    int stage_channels(int s) const { return token_dim << s; }
    int stage_ffn(int s) const { return ffn_dim << s; }

    std::vector<std::string> validate() const;

    // Test-scale configuration.
    static ArchitectureConfig toy();
    // Published large-scale configurations (64x64 and 40x40 grids).
    static ArchitectureConfig vg();
    static ArchitectureConfig coco();
};

// Flat named parameter set; order is fixed by the registering model.
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Mat> values;

    int find(const std::string& name) const;
    size_t tensor_count() const { return values.size(); }
    size_t scalar_count() const;
};

// U-shaped shifted-window graph transformer over triplet tokens, with a node
// readout off the diagonal tokens and an edge readout off every token. The
// forward pass is the raw network F consumed by the preconditioning wrapper.
class GraphDenoiser {
public:
    GraphDenoiser(ArchitectureConfig arch, CodecDims dims);

    const ArchitectureConfig& arch() const { return arch_; }
    const CodecDims& dims() const { return dims_; }
    // Tokenizer input channels: triplet width doubled by the
    // self-conditioning concat.
    int input_channels() const { return 2 * dims_.triplet_width(); }

    ParamStore init_params(Rng& rng) const;
    // Creates one tape leaf per parameter, in registration order.
    std::vector<int> push_params(Tape& tape, const ParamStore& params, bool requires_grad) const;

    struct Output {
        int node_out;  // (B*side) x (d_c+4)
        int edge_out;  // (B*side*side) x d_e
    };
    // tokens_in: (B*side*side) x input_channels(); noise_cond: one conditioning
    // scalar per batch item (the preconditioned noise-level input).
    Output forward(Tape& tape, const std::vector<int>& param_nodes, int tokens_in,
                   const Vec& noise_cond, int batch) const;

    // Sinusoidal features of the conditioning scalar (geometric frequencies).
    Mat time_features(const Vec& noise_cond) const;

private:
    struct AttnLayer {
        int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
        int ln2_g, ln2_b, ffn1_w, ffn1_b, ffn2_w, ffn2_b;
        int bias_table;
        bool shifted;
    };
    struct FfnBlock {
        int ln_g, ln_b, f1_w, f1_b, f2_w, f2_b;
    };
    struct Transition {
        int mix_w, mix_b;
        FfnBlock ffn;
    };
    struct Stage {
        int time_w, time_b;
        std::vector<AttnLayer> layers;
    };

    enum class Init { kLinear, kZeros, kOnes, kSmall };
    struct ParamSpec {
        std::string name;
        int rows, cols;
        Init init;
    };

    int reg(const std::string& name, int rows, int cols, Init init);
    AttnLayer reg_attn_layer(const std::string& prefix, int channels, int n_heads, bool shifted,
                             int ffn);
    FfnBlock reg_ffn_block(const std::string& prefix, int channels, int ffn);

    int apply_attn(Tape& t, const std::vector<int>& pn, int x, const AttnLayer& l, int side,
                   int batch, int n_heads) const;
    int apply_ffn(Tape& t, const std::vector<int>& pn, int x, const FfnBlock& f) const;

    ArchitectureConfig arch_;
    CodecDims dims_;
    std::vector<ParamSpec> specs_;

    int tok_w_, tok_b_;
    std::vector<Stage> down_stages_, up_stages_;
    std::vector<Transition> down_transitions_, up_transitions_;  // between stage s-1 and s
    int final_ln_g_, final_ln_b_;
    int node_h1_w_, node_h1_b_, node_h2_w_, node_h2_b_;
    int edge_h1_w_, edge_h1_b_, edge_h2_w_, edge_h2_b_;
    std::shared_ptr<const std::vector<int>> bias_index_;  // shared by all layers
};

// Window-ordered row gather for a (batch, side, side) grid, with the shifted
// variant cyclically offset by window/2 in both axes.
std::vector<int> window_order_indices(int side, int batch, int window, bool shifted);
std::vector<int> invert_permutation(const std::vector<int>& perm);
std::vector<int> relative_bias_indices(int window);

}  // namespace dsg
