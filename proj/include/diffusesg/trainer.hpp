#pragma once

#include <functional>
#include <optional>
#include <string>

#include "diffusesg/checkpoint.hpp"
#include "diffusesg/config.hpp"
#include "diffusesg/scene_graph.hpp"

namespace dsg {

using StepLogger = std::function<void(int64_t step, const LossBreakdown&)>;

// In-memory training (no files); spec.max_nodes is widened to the
// architecture's tensor side.
struct TrainedModel {
    GraphDenoiser net;
    ParamStore params;
    ParamStore ema;
    DatasetSpec spec;
    EncodingScheme scheme;
    Preconditioning precond;
};

TrainedModel train_in_memory(const Dataset& data, EncodingScheme scheme,
                             const ArchitectureConfig& arch, const TrainingConfig& cfg,
                             const StepLogger& logger = nullptr);

// Full training run with periodic atomic checkpoints, a CSV loss log
// (step,l_denoise,l_iou,l_total) and a run manifest under cfg.out_dir.
// Returns the final checkpoint path. resume_path continues a previous run
// with identical rng consumption.
std::string train_run(const RunConfig& cfg, const std::optional<std::string>& resume_path,
                      const StepLogger& logger = nullptr);

}  // namespace dsg
