#include "diffusesg/diffusion.hpp"

#include <cmath>
#include <sstream>

namespace dsg {

double sample_sigma(const SigmaDistribution& dist, Rng& rng) {
    if (!(dist.scale > 0.0)) throw ConfigError("sigma distribution needs scale > 0");
    return std::exp(rng.normal(dist.location, dist.scale));
}

Mat precondition(const RawNet& raw, const Mat& x_noisy, double sigma, const Mat& self_cond,
                 const Preconditioning& pc) {
    if (sigma == 0.0) return x_noisy;  // c_skip -> 1, c_out -> 0
    const Mat f = raw(pc.c_in(sigma) * x_noisy, self_cond, pc.c_noise(sigma));
    return pc.c_skip(sigma) * x_noisy + pc.c_out(sigma) * f;
}

EncodedGraph perturb(const EncodedGraph& t, double sigma, Rng& rng, EncodedGraph* noise_out) {
    if (sigma < 0.0) throw DataError("perturb: sigma must be nonnegative");
    EncodedGraph out = t;
    EncodedGraph noise;
    noise.side = t.side;
    noise.real_size = t.real_size;
    noise.nodes = Mat(t.nodes.rows(), t.nodes.cols());
    noise.edges = Mat(t.edges.rows(), t.edges.cols());
    for (Eigen::Index i = 0; i < noise.nodes.size(); ++i) noise.nodes.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < noise.edges.size(); ++i) noise.edges.data()[i] = rng.normal();
    out.nodes += sigma * noise.nodes;
    out.edges += sigma * noise.edges;
    if (noise_out != nullptr) *noise_out = std::move(noise);
    return out;
}

double denoising_loss(const Mat& d_v, const Mat& d_e, const Mat& clean_v, const Mat& clean_e) {
    check_contract(d_v.rows() == clean_v.rows() && d_v.cols() == clean_v.cols(),
                   "denoising_loss: node shape mismatch");
    check_contract(d_e.rows() == clean_e.rows() && d_e.cols() == clean_e.cols(),
                   "denoising_loss: edge shape mismatch");
    return (d_v - clean_v).squaredNorm() + (d_e - clean_e).squaredNorm();
}

double giou_loss(const Mat& predicted, const Mat& target) {
    check_contract(predicted.cols() == 4 && target.cols() == 4, "giou_loss: boxes are cxcywh");
    check_contract(predicted.rows() == target.rows(), "giou_loss: count mismatch");
    check_contract(predicted.rows() >= 1, "giou_loss: needs at least one box");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < predicted.rows(); ++i)
        acc += giou(predicted(i, 0), predicted(i, 1), predicted(i, 2), predicted(i, 3),
                    target(i, 0), target(i, 1), target(i, 2), target(i, 3));
    return 1.0 - acc / static_cast<double>(predicted.rows());
}

std::vector<std::string> TrainingConfig::validate() const {
    std::vector<std::string> v;
    if (lambda_iou < 0.0) v.push_back("lambda_iou must be >= 0");
    if (!(learning_rate > 0.0)) v.push_back("learning_rate must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) v.push_back("ema_decay must be in [0,1)");
    if (!(self_conditioning_prob >= 0.0 && self_conditioning_prob <= 1.0))
        v.push_back("self_conditioning_prob must be in [0,1]");
    if (batch_size < 1) v.push_back("batch_size must be >= 1");
    if (total_steps < 1) v.push_back("total_steps must be >= 1");
    if (!(sigma_dist.scale > 0.0)) v.push_back("sigma scale must be > 0");
    return v;
}

void adam_step(ParamStore& params, const std::vector<Mat>& grads, double lr, AdamState& state) {
    check_contract(grads.size() == params.values.size(), "adam: grad count mismatch");
    if (state.m.empty()) {
        state.m.reserve(params.values.size());
        state.v.reserve(params.values.size());
        for (const auto& p : params.values) {
            state.m.push_back(Mat::Zero(p.rows(), p.cols()));
            state.v.push_back(Mat::Zero(p.rows(), p.cols()));
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.values.size(); ++i) {
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        const Mat& g = grads[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        params.values[i].array() -=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
    }
}

void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
    check_contract(ema.values.size() == params.values.size(), "ema: param count mismatch");
    for (size_t i = 0; i < params.values.size(); ++i) {
        check_contract(ema.values[i].rows() == params.values[i].rows() &&
                           ema.values[i].cols() == params.values[i].cols(),
                       "ema: shape mismatch");
        ema.values[i] = decay * ema.values[i] + (1.0 - decay) * params.values[i];
    }
}

Mat stack_nodes(const std::vector<const EncodedGraph*>& items) {
    check_contract(!items.empty(), "stack_nodes: empty batch");
    const Eigen::Index rows = items[0]->nodes.rows();
    const Eigen::Index cols = items[0]->nodes.cols();
    Mat out(rows * static_cast<Eigen::Index>(items.size()), cols);
    for (size_t b = 0; b < items.size(); ++b) {
        check_contract(items[b]->nodes.rows() == rows && items[b]->nodes.cols() == cols,
                       "stack_nodes: inconsistent shapes");
        out.middleRows(static_cast<Eigen::Index>(b) * rows, rows) = items[b]->nodes;
    }
    return out;
}

Mat stack_edges(const std::vector<const EncodedGraph*>& items) {
    check_contract(!items.empty(), "stack_edges: empty batch");
    const Eigen::Index rows = items[0]->edges.rows();
    const Eigen::Index cols = items[0]->edges.cols();
    Mat out(rows * static_cast<Eigen::Index>(items.size()), cols);
    for (size_t b = 0; b < items.size(); ++b)
        out.middleRows(static_cast<Eigen::Index>(b) * rows, rows) = items[b]->edges;
    return out;
}

Mat stacked_triplets(const Mat& v, const Mat& e, int side, int batch) {
    const Eigen::Index nw = v.cols();
    const Eigen::Index de = e.cols();
    check_contract(v.rows() == static_cast<Eigen::Index>(batch) * side, "stacked_triplets: nodes");
    check_contract(e.rows() == static_cast<Eigen::Index>(batch) * side * side,
                   "stacked_triplets: edges");
    Mat q(static_cast<Eigen::Index>(batch) * side * side, 2 * nw + de);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index v0 = static_cast<Eigen::Index>(b) * side;
        const Eigen::Index q0 = static_cast<Eigen::Index>(b) * side * side;
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                const Eigen::Index r = q0 + static_cast<Eigen::Index>(i) * side + j;
                q.block(r, 0, 1, nw) = v.row(v0 + i);
                q.block(r, nw, 1, nw) = v.row(v0 + j);
                q.block(r, 2 * nw, 1, de) = e.row(r);
            }
    }
    return q;
}

void denoise_stack(const GraphDenoiser& net, const ParamStore& params, const Preconditioning& pc,
                   const Mat& v_noisy, const Mat& e_noisy, const Mat& v_selfcond,
                   const Mat& e_selfcond, double sigma, int batch, Mat& v_out, Mat& e_out) {
    check_contract(sigma > 0.0, "denoise_stack: sigma must be positive");
    const int side = net.arch().tensor_side;
    const double cin = pc.c_in(sigma);
    Mat q_scaled = stacked_triplets(cin * v_noisy, cin * e_noisy, side, batch);
    Mat q_sc = stacked_triplets(v_selfcond, e_selfcond, side, batch);
    Mat tokens(q_scaled.rows(), q_scaled.cols() + q_sc.cols());
    tokens.leftCols(q_scaled.cols()) = q_scaled;
    tokens.rightCols(q_sc.cols()) = q_sc;

    Tape tape(/*grads_enabled=*/false);
    const auto pn = net.push_params(tape, params, /*requires_grad=*/false);
    const int in_node = tape.input(std::move(tokens));
    const Vec cond = Vec::Constant(batch, pc.c_noise(sigma));
    const auto out = net.forward(tape, pn, in_node, cond, batch);

    const double cskip = pc.c_skip(sigma);
    const double cout = pc.c_out(sigma);
    v_out = cskip * v_noisy + cout * tape.value(out.node_out);
    e_out = cskip * e_noisy + cout * tape.value(out.edge_out);
}

LossBreakdown batch_loss(const GraphDenoiser& net, const ParamStore& params,
                         const std::vector<const EncodedGraph*>& clean,
                         const std::vector<EncodedGraph>& noisy, const std::vector<double>& sigmas,
                         const Mat& v_selfcond, const Mat& e_selfcond, const TrainingConfig& cfg,
                         std::vector<Mat>* grads_out) {
    const int B = static_cast<int>(clean.size());
    check_contract(B >= 1 && noisy.size() == clean.size() && sigmas.size() == clean.size(),
                   "batch_loss: inconsistent batch");
    const int side = net.arch().tensor_side;
    const int d_c = net.dims().d_c;

    // Stack noisy tensors and the clean targets.
    std::vector<const EncodedGraph*> noisy_ptrs;
    noisy_ptrs.reserve(noisy.size());
    for (const auto& n : noisy) noisy_ptrs.push_back(&n);
    const Mat v_noisy = stack_nodes(noisy_ptrs);
    const Mat e_noisy = stack_edges(noisy_ptrs);
    const Mat v_clean = stack_nodes(clean);
    const Mat e_clean = stack_edges(clean);

    const Preconditioning& pc = cfg.precond;
    Mat v_scaled = v_noisy;
    Mat e_scaled = e_noisy;
    Vec cond(B);
    for (int b = 0; b < B; ++b) {
        const double cin = pc.c_in(sigmas[static_cast<size_t>(b)]);
        v_scaled.middleRows(static_cast<Eigen::Index>(b) * side, side) *= cin;
        e_scaled.middleRows(static_cast<Eigen::Index>(b) * side * side, side * side) *= cin;
        cond(b) = pc.c_noise(sigmas[static_cast<size_t>(b)]);
    }
    Mat q_scaled = stacked_triplets(v_scaled, e_scaled, side, B);
    Mat q_sc = stacked_triplets(v_selfcond, e_selfcond, side, B);
    Mat tokens(q_scaled.rows(), q_scaled.cols() + q_sc.cols());
    tokens.leftCols(q_scaled.cols()) = q_scaled;
    tokens.rightCols(q_sc.cols()) = q_sc;

    Tape tape(/*grads_enabled=*/grads_out != nullptr);
    const auto pn = net.push_params(tape, params, grads_out != nullptr);
    const int in_node = tape.input(std::move(tokens));
    const auto raw = net.forward(tape, pn, in_node, cond, B);

    // Per-row preconditioning coefficients.
    Vec cskip_v(static_cast<Eigen::Index>(B) * side), cout_v(cskip_v.size());
    Vec cskip_e(static_cast<Eigen::Index>(B) * side * side), cout_e(cskip_e.size());
    for (int b = 0; b < B; ++b) {
        const double cs = pc.c_skip(sigmas[static_cast<size_t>(b)]);
        const double co = pc.c_out(sigmas[static_cast<size_t>(b)]);
        cskip_v.segment(static_cast<Eigen::Index>(b) * side, side).setConstant(cs);
        cout_v.segment(static_cast<Eigen::Index>(b) * side, side).setConstant(co);
        cskip_e.segment(static_cast<Eigen::Index>(b) * side * side, side * side).setConstant(cs);
        cout_e.segment(static_cast<Eigen::Index>(b) * side * side, side * side).setConstant(co);
    }
    const int d_v =
        tape.add(tape.scale_rows(raw.node_out, cout_v),
                 tape.input(cskip_v.asDiagonal() * v_noisy));
    const int d_e =
        tape.add(tape.scale_rows(raw.edge_out, cout_e),
                 tape.input(cskip_e.asDiagonal() * e_noisy));

    const int l_d = tape.scale(
        tape.add(tape.sum_squares_vs(d_v, v_clean), tape.sum_squares_vs(d_e, e_clean)),
        1.0 / static_cast<double>(B));

    // Decode predicted boxes; the IoU term only sees the real rows.
    const int pos = tape.clamp(tape.affine(tape.slice_cols(d_v, d_c, 2), 0.5, 0.5), 0.0, 1.0);
    const int ext = tape.clamp(tape.affine(tape.slice_cols(d_v, d_c + 2, 2), 0.5, 0.5), 1e-4, 1.0);
    const int boxes = tape.concat_cols(pos, ext);
    std::vector<int> real_rows;
    std::vector<double> row_weight;
    for (int b = 0; b < B; ++b) {
        const int n = clean[static_cast<size_t>(b)]->real_size;
        check_contract(n >= 1, "batch_loss: graphs must have at least one node");
        for (int i = 0; i < n; ++i) {
            real_rows.push_back(b * side + i);
            row_weight.push_back(1.0 / (static_cast<double>(B) * n));
        }
    }
    Mat target_boxes(static_cast<Eigen::Index>(real_rows.size()), 4);
    for (size_t r = 0; r < real_rows.size(); ++r)
        for (int k = 0; k < 4; ++k)
            target_boxes(static_cast<Eigen::Index>(r), k) =
                decode_box_coord(v_clean(real_rows[r], d_c + k));
    Vec weights = Eigen::Map<Vec>(row_weight.data(), static_cast<Eigen::Index>(row_weight.size()));
    const int pred_rows = tape.gather_rows(boxes, real_rows);
    const int l_iou = tape.giou_loss(pred_rows, std::move(target_boxes), std::move(weights));

    const int l_total =
        cfg.lambda_iou == 0.0 ? l_d : tape.add(l_d, tape.scale(l_iou, cfg.lambda_iou));

    LossBreakdown out;
    out.l_denoise = tape.value(l_d)(0, 0);
    out.l_iou = tape.value(l_iou)(0, 0);
    out.l_total = tape.value(l_total)(0, 0);

    if (!std::isfinite(out.l_total)) {
        std::ostringstream os;
        os << "non-finite training loss (l_denoise=" << out.l_denoise << ", l_iou=" << out.l_iou
           << ", sigmas=";
        for (double s : sigmas) os << ' ' << s;
        os << ")";
        throw NumericError(os.str());
    }

    if (grads_out != nullptr) {
        tape.backward(l_total);
        grads_out->clear();
        grads_out->reserve(pn.size());
        for (size_t i = 0; i < pn.size(); ++i) {
            // A parameter off the loss path keeps a zero gradient.
            if (tape.has_grad(pn[i]))
                grads_out->push_back(tape.grad(pn[i]));
            else
                grads_out->push_back(Mat::Zero(params.values[i].rows(), params.values[i].cols()));
        }
    }
    return out;
}

LossBreakdown training_step(const GraphDenoiser& net, ParamStore& params, AdamState& opt,
                            ParamStore* ema, const std::vector<const EncodedGraph*>& batch,
                            const TrainingConfig& cfg, Rng& rng) {
    const int B = static_cast<int>(batch.size());
    check_contract(B >= 1, "training_step: empty batch");
    const int side = net.arch().tensor_side;

    std::vector<double> sigmas(static_cast<size_t>(B));
    std::vector<EncodedGraph> noisy;
    noisy.reserve(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        sigmas[static_cast<size_t>(b)] = sample_sigma(cfg.sigma_dist, rng);
        noisy.push_back(perturb(*batch[static_cast<size_t>(b)], sigmas[static_cast<size_t>(b)], rng));
    }

    Mat v_sc = Mat::Zero(static_cast<Eigen::Index>(B) * side, net.dims().node_width());
    Mat e_sc = Mat::Zero(static_cast<Eigen::Index>(B) * side * side, net.dims().d_e);
    if (rng.uniform() < cfg.self_conditioning_prob) {
        // Estimate once with a zero self-condition; the estimate is frozen
        // (no gradient flows through this pass).
        Mat v_est(v_sc.rows(), v_sc.cols()), e_est(e_sc.rows(), e_sc.cols());
        for (int b = 0; b < B; ++b) {
            Mat vb, eb;
            denoise_stack(net, params, cfg.precond,
                          noisy[static_cast<size_t>(b)].nodes, noisy[static_cast<size_t>(b)].edges,
                          v_sc.middleRows(static_cast<Eigen::Index>(b) * side, side),
                          e_sc.middleRows(static_cast<Eigen::Index>(b) * side * side, side * side),
                          sigmas[static_cast<size_t>(b)], 1, vb, eb);
            v_est.middleRows(static_cast<Eigen::Index>(b) * side, side) = vb;
            e_est.middleRows(static_cast<Eigen::Index>(b) * side * side, side * side) = eb;
        }
        v_sc = std::move(v_est);
        e_sc = std::move(e_est);
    }

    std::vector<Mat> grads;
    const LossBreakdown loss =
        batch_loss(net, params, batch, noisy, sigmas, v_sc, e_sc, cfg, &grads);
    adam_step(params, grads, cfg.learning_rate, opt);
    if (ema != nullptr) ema_update(*ema, params, cfg.ema_decay);
    return loss;
}

}  // namespace dsg
