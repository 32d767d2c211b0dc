#pragma once

#include <string>

#include "diffusesg/codec.hpp"
#include "diffusesg/denoiser.hpp"
#include "diffusesg/diffusion.hpp"
#include "diffusesg/sampler.hpp"
#include "diffusesg/scene_graph.hpp"

namespace dsg {

// Everything needed to resume training or to sample: raw + EMA parameters,
// optimizer moments, step counter, rng state, and the data/model
// configuration they belong to.
struct Checkpoint {
    int format_version = 1;
    DatasetSpec spec;
    EncodingScheme scheme = EncodingScheme::kBit;
    ArchitectureConfig arch;
    TrainingConfig train;
    ParamStore params;
    ParamStore ema;
    AdamState opt;
    int64_t step = 0;
    std::vector<uint64_t> rng_state;

    uint64_t spec_hash() const { return spec.hash(); }
};

// Binary (CBOR) container, written atomically (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the file bytes; used in run manifests.
uint64_t file_hash(const std::string& path);

}  // namespace dsg
