#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "diffusesg/codec.hpp"
#include "diffusesg/common.hpp"
#include "diffusesg/denoiser.hpp"
#include "diffusesg/rng.hpp"

namespace dsg {

// Variance-exploding schedule: sigma(t) = t, zero drift,
// diffusion coefficient sqrt(2 * sigma'(t) * sigma(t)).
struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;

    double sigma(double t) const { return t; }
    double drift() const { return 0.0; }
    double diffusion_coeff(double t) const { return std::sqrt(2.0 * t); }
};

// ln(sigma) ~ Normal(location, scale^2).
struct SigmaDistribution {
    double location = -1.2;
    double scale = 1.2;
};

double sample_sigma(const SigmaDistribution& dist, Rng& rng);

// D(x, sigma) = c_skip*x + c_out*F(c_in*x, self_cond, c_noise); as sigma -> 0,
// c_skip -> 1 and c_out -> 0, so D -> x.
struct Preconditioning {
    double sigma_data = 0.5;

    double c_skip(double sigma) const {
        return sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data);
    }
    double c_out(double sigma) const {
        return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
    }
    double c_in(double sigma) const {
        return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data);
    }
    double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
};

using RawNet = std::function<Mat(const Mat& scaled_input, const Mat& self_cond, double c_noise)>;

Mat precondition(const RawNet& raw, const Mat& x_noisy, double sigma, const Mat& self_cond,
                 const Preconditioning& pc);

// x + sigma * eps, elementwise independent noise on both tensors. Optionally
// returns the draws.
EncodedGraph perturb(const EncodedGraph& t, double sigma, Rng& rng,
                     EncodedGraph* noise_out = nullptr);

// Sum of squared errors over both heads (full padded tensors).
double denoising_loss(const Mat& d_v, const Mat& d_e, const Mat& clean_v, const Mat& clean_e);

// 1 - mean GIoU over the given boxes (both n x 4 cxcywh, n >= 1); in [0, 2].
double giou_loss(const Mat& predicted, const Mat& target);

struct TrainingConfig {
    double lambda_iou = 1.0;
    double learning_rate = 0.0002;
    double ema_decay = 0.9999;
    double self_conditioning_prob = 0.5;
    int batch_size = 16;
    int64_t total_steps = 2000;
    uint64_t seed = 0;
    SigmaDistribution sigma_dist;
    Preconditioning precond;

    std::vector<std::string> validate() const;
};

struct LossBreakdown {
    double l_denoise = 0.0;
    double l_iou = 0.0;
    double l_total = 0.0;
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<Mat> m;
    std::vector<Mat> v;
};

void adam_step(ParamStore& params, const std::vector<Mat>& grads, double lr, AdamState& state);

// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(ParamStore& ema, const ParamStore& params, double decay);

// One denoiser application on a stack of graphs sharing one noise level:
// assembles c_in-scaled triplets concatenated with the self-conditioning
// triplets, runs the network, applies the preconditioning wrapper.
void denoise_stack(const GraphDenoiser& net, const ParamStore& params, const Preconditioning& pc,
                   const Mat& v_noisy, const Mat& e_noisy, const Mat& v_selfcond,
                   const Mat& e_selfcond, double sigma, int batch, Mat& v_out, Mat& e_out);

// Training loss over a batch (mean over items): per-item denoising SSE plus
// lambda times the per-item GIoU loss over the real (unpadded) boxes. Fills
// per-parameter gradients when grads_out is given.
LossBreakdown batch_loss(const GraphDenoiser& net, const ParamStore& params,
                         const std::vector<const EncodedGraph*>& clean,
                         const std::vector<EncodedGraph>& noisy, const std::vector<double>& sigmas,
                         const Mat& v_selfcond, const Mat& e_selfcond, const TrainingConfig& cfg,
                         std::vector<Mat>* grads_out);

// Alg-style step: draw sigma per sample, perturb, denoise with both heads,
// take one optimizer step on the total loss, refresh the EMA copy.
LossBreakdown training_step(const GraphDenoiser& net, ParamStore& params, AdamState& opt,
                            ParamStore* ema, const std::vector<const EncodedGraph*>& batch,
                            const TrainingConfig& cfg, Rng& rng);

// Stacking helpers (chains/batch items are stacked along rows).
Mat stack_nodes(const std::vector<const EncodedGraph*>& items);
Mat stack_edges(const std::vector<const EncodedGraph*>& items);
Mat stacked_triplets(const Mat& v, const Mat& e, int side, int batch);

}  // namespace dsg
