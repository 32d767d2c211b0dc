#include "diffusesg/sampler.hpp"

#include <cmath>
#include <sstream>

namespace dsg {

std::vector<std::string> SamplerConfig::validate() const {
    std::vector<std::string> v;
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) v.push_back("need 0 < sigma_min < sigma_max");
    if (steps < 1) v.push_back("steps must be >= 1");
    if (s_churn < 0.0) v.push_back("s_churn must be >= 0");
    if (!(rho > 0.0)) v.push_back("rho must be > 0");
    if (!(s_noise > 0.0)) v.push_back("s_noise must be > 0");
    return v;
}

std::vector<double> build_time_grid(const SamplerConfig& cfg) {
    const auto violations = cfg.validate();
    if (!violations.empty()) throw ConfigError("sampler: " + violations.front());
    std::vector<double> t(static_cast<size_t>(cfg.steps) + 1, 0.0);
    if (cfg.steps == 1) {
        t[0] = cfg.sigma_max;
        return t;
    }
    const double max_r = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
    const double min_r = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
    for (int i = 0; i < cfg.steps; ++i) {
        const double f = static_cast<double>(i) / (cfg.steps - 1);
        t[static_cast<size_t>(i)] = std::pow(max_r + f * (min_r - max_r), cfg.rho);
    }
    // Endpoints are exact by construction of the interpolant.
    t[0] = cfg.sigma_max;
    t[static_cast<size_t>(cfg.steps) - 1] = cfg.sigma_min;
    return t;
}

double churn_gamma(double t, const SamplerConfig& cfg) {
    if (t < cfg.s_tmin || t > cfg.s_tmax) return 0.0;
    return std::min(cfg.s_churn / static_cast<double>(cfg.steps), M_SQRT2 - 1.0);
}

namespace {

void fill_normal_per_chain(Mat& m, int rows_per_chain, int chains, std::vector<Rng>& rngs,
                           double scale) {
    for (int c = 0; c < chains; ++c) {
        Rng& rng = rngs[static_cast<size_t>(c)];
        for (int r = 0; r < rows_per_chain; ++r)
            for (Eigen::Index k = 0; k < m.cols(); ++k)
                m(static_cast<Eigen::Index>(c) * rows_per_chain + r, k) = scale * rng.normal();
    }
}

void overwrite_known(Mat& v, Mat& e, const ChainLayout& layout, int chains,
                     const KnownRegion& known, double sigma, std::vector<Rng>& inpaint_rngs) {
    for (int c = 0; c < chains; ++c) {
        Rng& rng = inpaint_rngs[static_cast<size_t>(c)];
        for (int r = 0; r < layout.node_rows; ++r)
            for (int k = 0; k < layout.node_cols; ++k) {
                if (!known.v_known[static_cast<size_t>(r) * layout.node_cols + k]) continue;
                const double eps = sigma > 0.0 ? rng.normal() : 0.0;
                v(static_cast<Eigen::Index>(c) * layout.node_rows + r, k) =
                    known.v_values(r, k) + sigma * eps;
            }
        for (int r = 0; r < layout.edge_rows; ++r)
            for (int k = 0; k < layout.edge_cols; ++k) {
                if (!known.e_known[static_cast<size_t>(r) * layout.edge_cols + k]) continue;
                const double eps = sigma > 0.0 ? rng.normal() : 0.0;
                e(static_cast<Eigen::Index>(c) * layout.edge_rows + r, k) =
                    known.e_values(r, k) + sigma * eps;
            }
    }
}

void check_finite(const Mat& v, const Mat& e, int step, double t) {
    if (v.allFinite() && e.allFinite()) return;
    std::ostringstream os;
    os << "non-finite sampler state at step " << step << ", t=" << t;
    throw NumericError(os.str());
}

}  // namespace

void run_chains(const StackDenoiser& denoise, Mat& v, Mat& e, const ChainLayout& layout,
                int chains, const SamplerConfig& cfg, std::vector<Rng>& chain_rngs,
                const KnownRegion* known, std::vector<Rng>* inpaint_rngs) {
    check_contract(static_cast<int>(chain_rngs.size()) == chains, "run_chains: one rng per chain");
    check_contract(v.rows() == static_cast<Eigen::Index>(chains) * layout.node_rows &&
                       e.rows() == static_cast<Eigen::Index>(chains) * layout.edge_rows,
                   "run_chains: state shape mismatch");
    const bool inpaint = known != nullptr && known->any;
    check_contract(!inpaint || inpaint_rngs != nullptr, "run_chains: inpainting needs rng streams");

    const auto grid = build_time_grid(cfg);
    const int T = cfg.steps;

    // S^(0) ~ N(0, t_0^2 I) over both tensors.
    fill_normal_per_chain(v, layout.node_rows, chains, chain_rngs, grid[0]);
    fill_normal_per_chain(e, layout.edge_rows, chains, chain_rngs, grid[0]);
    if (inpaint) overwrite_known(v, e, layout, chains, *known, grid[0], *inpaint_rngs);

    Mat sc_v = Mat::Zero(v.rows(), v.cols());
    Mat sc_e = Mat::Zero(e.rows(), e.cols());
    Mat den_v, den_e, den2_v, den2_e, noise_v(v.rows(), v.cols()), noise_e(e.rows(), e.cols());

    for (int i = 0; i < T; ++i) {
        const double t = grid[static_cast<size_t>(i)];
        const double t_next = grid[static_cast<size_t>(i) + 1];
        const double gamma = churn_gamma(t, cfg);
        double t_hat = t;
        if (gamma > 0.0) {
            t_hat = (1.0 + gamma) * t;
            const double bump = std::sqrt(t_hat * t_hat - t * t);
            fill_normal_per_chain(noise_v, layout.node_rows, chains, chain_rngs, cfg.s_noise);
            fill_normal_per_chain(noise_e, layout.edge_rows, chains, chain_rngs, cfg.s_noise);
            v += bump * noise_v;
            e += bump * noise_e;
        }

        denoise(v, e, sc_v, sc_e, t_hat, den_v, den_e);
        const Mat d_v = (v - den_v) / t_hat;
        const Mat d_e = (e - den_e) / t_hat;

        if (t_next == 0.0) {
            // Final step: the correction would divide by t_next; plain Euler,
            // which lands exactly on the denoised estimate.
            v += (t_next - t_hat) * d_v;
            e += (t_next - t_hat) * d_e;
            sc_v = den_v;
            sc_e = den_e;
        } else {
            Mat v_pred = v + (t_next - t_hat) * d_v;
            Mat e_pred = e + (t_next - t_hat) * d_e;
            denoise(v_pred, e_pred, den_v, den_e, t_next, den2_v, den2_e);
            const Mat d2_v = (v_pred - den2_v) / t_next;
            const Mat d2_e = (e_pred - den2_e) / t_next;
            // Trapezoidal correction applied to the churned state.
            v += 0.5 * (t_next - t_hat) * (d_v + d2_v);
            e += 0.5 * (t_next - t_hat) * (d_e + d2_e);
            sc_v = den2_v;
            sc_e = den2_e;
        }

        if (inpaint) overwrite_known(v, e, layout, chains, *known, t_next, *inpaint_rngs);
        check_finite(v, e, i, t_next);
    }
}

StackDenoiser make_network_denoiser(const GraphDenoiser& net, const ParamStore& params,
                                    const Preconditioning& pc, int chains) {
    return [&net, &params, pc, chains](const Mat& v, const Mat& e, const Mat& v_sc,
                                       const Mat& e_sc, double sigma, Mat& v_out, Mat& e_out) {
        denoise_stack(net, params, pc, v, e, v_sc, e_sc, sigma, chains, v_out, e_out);
    };
}

namespace {

std::vector<int> resolve_node_counts(const NodeCountSource& source, int count,
                                     const DatasetSpec& spec, Rng& rng) {
    std::vector<int> sizes;
    sizes.reserve(static_cast<size_t>(count));
    if (const auto* fixed = std::get_if<NodeCountFixed>(&source)) {
        if (fixed->n < 1 || fixed->n > spec.max_nodes)
            throw ConfigError("fixed node count outside [1, max_nodes]");
        sizes.assign(static_cast<size_t>(count), fixed->n);
    } else if (const auto* list = std::get_if<NodeCountList>(&source)) {
        if (static_cast<int>(list->sizes.size()) < count)
            throw ConfigError("node-count list shorter than requested sample count");
        sizes.assign(list->sizes.begin(), list->sizes.begin() + count);
        for (int n : sizes)
            if (n < 1 || n > spec.max_nodes) throw DataError("node-count list entry out of range");
    } else {
        const auto& dist = std::get<NodeCountDistribution>(source);
        for (int i = 0; i < count; ++i) {
            const int n = sample_node_count(dist, rng);
            if (n > spec.max_nodes) throw DataError("sampled node count exceeds max_nodes");
            sizes.push_back(n);
        }
    }
    return sizes;
}

}  // namespace

SceneGraph sample_graph(const GraphDenoiser& net, const ParamStore& params_ema,
                        const DatasetSpec& spec, EncodingScheme scheme, int n,
                        const SamplerConfig& cfg, const Preconditioning& pc, Rng& rng) {
    if (n < 1 || n > spec.max_nodes) throw ConfigError("sample: node count outside [1, max_nodes]");
    const CodecDims dims = dims_for_scheme(scheme, spec);
    const int side = net.arch().tensor_side;
    check_contract(side == spec.max_nodes, "sample: architecture side != spec.max_nodes");

    ChainLayout layout{side, side * side, dims.node_width(), dims.d_e};
    Mat v(layout.node_rows, layout.node_cols);
    Mat e(layout.edge_rows, layout.edge_cols);
    std::vector<Rng> chain_rngs{rng.substream("chain", 0)};
    run_chains(make_network_denoiser(net, params_ema, pc, 1), v, e, layout, 1, cfg, chain_rngs);

    EncodedGraph t;
    t.side = side;
    t.real_size = n;
    t.nodes = std::move(v);
    t.edges = std::move(e);
    return decode_graph(t, spec, scheme);
}

std::vector<SceneGraph> sample_graph_batch(const GraphDenoiser& net, const ParamStore& params_ema,
                                           const DatasetSpec& spec, EncodingScheme scheme,
                                           int count, const NodeCountSource& node_counts,
                                           const SamplerConfig& cfg, const Preconditioning& pc,
                                           Rng& rng, int chunk) {
    check_contract(chunk >= 1, "sample_graph_batch: chunk must be >= 1");
    const CodecDims dims = dims_for_scheme(scheme, spec);
    const int side = net.arch().tensor_side;
    check_contract(side == spec.max_nodes, "sample: architecture side != spec.max_nodes");
    Rng size_rng = rng.substream("node-count");
    const auto sizes = resolve_node_counts(node_counts, count, spec, size_rng);

    std::vector<SceneGraph> out;
    out.reserve(static_cast<size_t>(count));
    ChainLayout layout{side, side * side, dims.node_width(), dims.d_e};
    for (int start = 0; start < count; start += chunk) {
        const int b = std::min(chunk, count - start);
        Mat v(static_cast<Eigen::Index>(b) * layout.node_rows, layout.node_cols);
        Mat e(static_cast<Eigen::Index>(b) * layout.edge_rows, layout.edge_cols);
        std::vector<Rng> chain_rngs;
        chain_rngs.reserve(static_cast<size_t>(b));
        for (int c = 0; c < b; ++c)
            chain_rngs.push_back(rng.substream("chain", static_cast<uint64_t>(start + c)));
        run_chains(make_network_denoiser(net, params_ema, pc, b), v, e, layout, b, cfg,
                   chain_rngs);
        for (int c = 0; c < b; ++c) {
            EncodedGraph t;
            t.side = side;
            t.real_size = sizes[static_cast<size_t>(start + c)];
            t.nodes = v.middleRows(static_cast<Eigen::Index>(c) * layout.node_rows, layout.node_rows);
            t.edges = e.middleRows(static_cast<Eigen::Index>(c) * layout.edge_rows, layout.edge_rows);
            out.push_back(decode_graph(t, spec, scheme));
        }
    }
    return out;
}

}  // namespace dsg
