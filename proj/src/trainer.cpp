#include "diffusesg/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

namespace dsg {

namespace {

std::vector<EncodedGraph> encode_all(const Dataset& data, const DatasetSpec& spec,
                                     EncodingScheme scheme) {
    std::vector<EncodedGraph> encoded;
    encoded.reserve(data.graphs.size());
    for (const auto& g : data.graphs) encoded.push_back(encode_graph(g, spec, scheme));
    return encoded;
}

std::vector<const EncodedGraph*> draw_batch(const std::vector<EncodedGraph>& pool, int batch,
                                            Rng& rng) {
    std::vector<const EncodedGraph*> out;
    out.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b)
        out.push_back(&pool[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
    return out;
}

}  // namespace

TrainedModel train_in_memory(const Dataset& data, EncodingScheme scheme,
                             const ArchitectureConfig& arch, const TrainingConfig& cfg,
                             const StepLogger& logger) {
    if (data.graphs.empty()) throw DataError("training needs at least one graph");
    DatasetSpec spec = data.spec;
    spec.max_nodes = arch.tensor_side;

    GraphDenoiser net(arch, dims_for_scheme(scheme, spec));
    Rng root(cfg.seed);
    Rng init_rng = root.substream("init");
    ParamStore params = net.init_params(init_rng);
    ParamStore ema = params;
    AdamState opt;
    Rng train_rng = root.substream("train");

    const auto encoded = encode_all(data, spec, scheme);
    for (int64_t step = 0; step < cfg.total_steps; ++step) {
        const auto batch = draw_batch(encoded, cfg.batch_size, train_rng);
        const LossBreakdown loss = training_step(net, params, opt, &ema, batch, cfg, train_rng);
        if (logger) logger(step + 1, loss);
    }
    return TrainedModel{std::move(net), std::move(params), std::move(ema), std::move(spec), scheme,
                        cfg.precond};
}

std::string train_run(const RunConfig& cfg, const std::optional<std::string>& resume_path,
                      const StepLogger& logger) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.train_manifest.empty()) throw ConfigError("dataset.train: missing manifest path");
    Dataset data = load_dataset(cfg.train_manifest);
    cfg.validate_against(data.spec);
    DatasetSpec spec = data.spec;
    spec.max_nodes = cfg.arch.tensor_side;

    std::filesystem::create_directories(cfg.out_dir);
    const std::string latest = cfg.out_dir + "/checkpoint_latest.ckpt";
    const std::string final_path = cfg.out_dir + "/checkpoint_final.ckpt";
    const std::string csv_path = cfg.out_dir + "/loss_log.csv";

    GraphDenoiser net(cfg.arch, dims_for_scheme(cfg.scheme, spec));
    TrainingConfig tcfg = cfg.training;
    tcfg.seed = cfg.seed;

    ParamStore params, ema;
    AdamState opt;
    int64_t start_step = 0;
    Rng root(cfg.seed);
    Rng train_rng = root.substream("train");

    if (resume_path) {
        Checkpoint ckpt = load_checkpoint(*resume_path);
        if (ckpt.spec_hash() != spec.hash())
            throw DataError("resume: checkpoint dataset spec does not match manifest");
        if (ckpt.scheme != cfg.scheme) throw ConfigError("resume: encoding scheme mismatch");
        params = std::move(ckpt.params);
        ema = std::move(ckpt.ema);
        opt = std::move(ckpt.opt);
        start_step = ckpt.step;
        train_rng.set_state(ckpt.rng_state);
    } else {
        Rng init_rng = root.substream("init");
        params = net.init_params(init_rng);
        ema = params;
    }

    const auto encoded = encode_all(data, spec, cfg.scheme);

    std::ofstream csv(csv_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!csv) throw DataError("cannot write " + csv_path);
    if (start_step == 0) csv << "step,l_denoise,l_iou,l_total\n";

    const auto save = [&](const std::string& path, int64_t step) {
        Checkpoint ckpt;
        ckpt.spec = spec;
        ckpt.scheme = cfg.scheme;
        ckpt.arch = cfg.arch;
        ckpt.train = tcfg;
        ckpt.params = params;
        ckpt.ema = ema;
        ckpt.opt = opt;
        ckpt.step = step;
        ckpt.rng_state = train_rng.state();
        save_checkpoint(ckpt, path);
    };

    LossBreakdown loss;
    for (int64_t step = start_step; step < tcfg.total_steps; ++step) {
        const auto batch = draw_batch(encoded, tcfg.batch_size, train_rng);
        loss = training_step(net, params, opt, &ema, batch, tcfg, train_rng);
        if ((step + 1) % cfg.log_interval == 0 || step + 1 == tcfg.total_steps) {
            csv << (step + 1) << ',' << loss.l_denoise << ',' << loss.l_iou << ','
                << loss.l_total << '\n';
            csv.flush();
        }
        if ((step + 1) % cfg.checkpoint_interval == 0) save(latest, step + 1);
        if (logger) logger(step + 1, loss);
    }
    save(final_path, tcfg.total_steps);
    save(latest, tcfg.total_steps);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_run_manifest(cfg.out_dir + "/run_manifest.json", "train", cfg, file_hash(final_path),
                       wall, {{"final_checkpoint", final_path}});
    return final_path;
}

}  // namespace dsg
