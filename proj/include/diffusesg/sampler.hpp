#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "diffusesg/codec.hpp"
#include "diffusesg/common.hpp"
#include "diffusesg/diffusion.hpp"
#include "diffusesg/rng.hpp"
#include "diffusesg/scene_graph.hpp"

namespace dsg {

struct SamplerConfig {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double s_tmin = 0.05;
    double s_tmax = 50.0;
    double s_noise = 1.003;
    double s_churn = 40.0;
    int steps = 256;  // T

    std::vector<std::string> validate() const;
};

// t_i = (max^(1/rho) + i/(T-1) * (min^(1/rho) - max^(1/rho)))^rho for
// i in [0, T-1], with t_T = 0 appended. Strictly decreasing.
std::vector<double> build_time_grid(const SamplerConfig& cfg);

// gamma_i = 1[s_tmin <= t <= s_tmax] * min(s_churn/T, sqrt(2)-1).
double churn_gamma(double t, const SamplerConfig& cfg);

// Denoiser callback for a stack of chains at one shared noise level. Inputs
// are the noisy node/edge tensors and the previous clean estimates
// (self-conditioning); outputs are the new clean estimates.
using StackDenoiser =
    std::function<void(const Mat& v, const Mat& e, const Mat& v_sc, const Mat& e_sc, double sigma,
                       Mat& v_out, Mat& e_out)>;

struct ChainLayout {
    int node_rows = 0;  // rows of the node tensor per chain
    int edge_rows = 0;
    int node_cols = 0;
    int edge_cols = 0;
};

// Known-region constraint for inpainting: after each iteration the flagged
// entries are overwritten with the clean values forward-perturbed to the
// current noise level. Masks and values cover a single chain and are applied
// to every chain in the stack.
struct KnownRegion {
    Mat v_values, e_values;                      // clean encoded values
    std::vector<uint8_t> v_known, e_known;       // per entry of one chain
    bool any = false;
};

// Second-order stochastic sampling loop (churn, Euler step, trapezoidal
// correction on the churned state, Euler-only final step), with
// self-conditioning threaded through the two evaluations per iteration.
// chain_rngs supplies one stream per chain; known (optional) activates
// inpainting via an extra per-chain stream.
void run_chains(const StackDenoiser& denoise, Mat& v, Mat& e, const ChainLayout& layout,
                int chains, const SamplerConfig& cfg, std::vector<Rng>& chain_rngs,
                const KnownRegion* known = nullptr, std::vector<Rng>* inpaint_rngs = nullptr);

// How node counts are chosen for a batch of samples.
struct NodeCountFixed {
    int n;
};
struct NodeCountList {
    std::vector<int> sizes;  // consumed in order; must cover the batch
};
using NodeCountSource = std::variant<NodeCountFixed, NodeCountList, NodeCountDistribution>;

// Denoiser-backed sampling. Node counts only matter at decode; the chains
// always run on the full padded tensors.
SceneGraph sample_graph(const GraphDenoiser& net, const ParamStore& params_ema,
                        const DatasetSpec& spec, EncodingScheme scheme, int n,
                        const SamplerConfig& cfg, const Preconditioning& pc, Rng& rng);

std::vector<SceneGraph> sample_graph_batch(const GraphDenoiser& net, const ParamStore& params_ema,
                                           const DatasetSpec& spec, EncodingScheme scheme,
                                           int count, const NodeCountSource& node_counts,
                                           const SamplerConfig& cfg, const Preconditioning& pc,
                                           Rng& rng, int chunk = 64);

// The StackDenoiser backed by the graph transformer (exposed for reuse by the
// completion module).
StackDenoiser make_network_denoiser(const GraphDenoiser& net, const ParamStore& params,
                                    const Preconditioning& pc, int chains);

}  // namespace dsg
