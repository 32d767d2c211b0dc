#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "diffusesg/checkpoint.hpp"
#include "diffusesg/config.hpp"
#include "diffusesg/trainer.hpp"

using namespace dsg;

TEST_CASE("rng streams") {
    SUBCASE("determinism and stream independence") {
        Rng a(5), b(5);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng c(5);
        Rng s1 = c.substream("train");
        Rng s2 = c.substream("sample");
        CHECK(s1.next_u64() != s2.next_u64());
        Rng s1b = Rng(5).substream("train");
        Rng s1c = Rng(5).substream("train");
        CHECK(s1b.next_u64() == s1c.next_u64());
    }

    SUBCASE("state save/restore resumes the sequence") {
        Rng a(9);
        for (int i = 0; i < 7; ++i) a.normal();
        const auto state = a.state();
        const double next = a.normal();
        Rng b(1234);
        b.set_state(state);
        CHECK(b.normal() == next);
    }

    SUBCASE("uniform_int covers range without bias drift") {
        Rng a(3);
        int counts[5] = {0, 0, 0, 0, 0};
        for (int i = 0; i < 50000; ++i) ++counts[a.uniform_int(0, 4)];
        for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    }

    SUBCASE("normal moments") {
        Rng a(11);
        double sum = 0.0, sq = 0.0;
        const int n = 200000;
        for (int i = 0; i < n; ++i) {
            const double x = a.normal();
            sum += x;
            sq += x * x;
        }
        CHECK(std::abs(sum / n) < 0.01);
        CHECK(std::abs(sq / n - 1.0) < 0.02);
    }
}

TEST_CASE("toml subset parsing") {
    const std::string text = R"(
# run configuration
[model]
scheme = "bit"           # encoding
tensor_side = 8
down_blocks = [1, 1]
lr_unused = 0.5

[training]
learning_rate = 2e-4
total_steps = 100
flag = true
name = "toy run"
)";
    const TomlFile f = TomlFile::parse_string(text);
    CHECK(f.get("model", "scheme").as_string("") == "bit");
    CHECK(f.get("model", "tensor_side").as_int("") == 8);
    CHECK(f.get("model", "down_blocks").as_int_list("") == std::vector<int>{1, 1});
    CHECK(f.get("training", "learning_rate").as_double("") == doctest::Approx(2e-4));
    CHECK(f.get("training", "flag").as_bool(""));
    CHECK(f.get("training", "name").as_string("") == "toy run");
    CHECK(!f.has("training", "missing"));
    CHECK_THROWS_AS(f.get("training", "missing"), ConfigError);
    CHECK_THROWS_AS(TomlFile::parse_string("key valueextra ="), ConfigError);

    SUBCASE("run config round trips through its own writer") {
        RunConfig cfg;
        cfg.seed = 42;
        cfg.scheme = EncodingScheme::kOneHot;
        cfg.training.learning_rate = 1e-3;
        const std::string path = "test_cfg.toml";
        std::ofstream(path) << cfg.to_toml();
        const RunConfig back = RunConfig::from_file(path);
        CHECK(back.seed == 42);
        CHECK(back.scheme == EncodingScheme::kOneHot);
        CHECK(back.training.learning_rate == doctest::Approx(1e-3));
        CHECK(back.arch.down_blocks == cfg.arch.down_blocks);
        std::remove(path.c_str());
    }
}

TEST_CASE("checkpoint round trip") {
    ToyRuleConfig toy;
    DatasetSpec spec = toy.dataset_spec();
    ArchitectureConfig arch = ArchitectureConfig::toy();
    spec.max_nodes = arch.tensor_side;
    const GraphDenoiser net(arch, dims_for_scheme(EncodingScheme::kBit, spec));
    Rng rng(2);

    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.scheme = EncodingScheme::kBit;
    ckpt.arch = arch;
    ckpt.params = net.init_params(rng);
    ckpt.ema = ckpt.params;
    ckpt.step = 123;
    ckpt.rng_state = rng.state();
    ckpt.opt.step = 7;
    for (const auto& p : ckpt.params.values) {
        ckpt.opt.m.push_back(Mat::Zero(p.rows(), p.cols()));
        ckpt.opt.v.push_back(Mat::Constant(p.rows(), p.cols(), 0.5));
    }

    const std::string path = "test_ckpt.bin";
    save_checkpoint(ckpt, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.step == 123);
    CHECK(back.scheme == EncodingScheme::kBit);
    CHECK(back.spec_hash() == ckpt.spec_hash());
    CHECK(back.arch.down_blocks == arch.down_blocks);
    CHECK(back.params.names == ckpt.params.names);
    double max_diff = 0.0;
    for (size_t i = 0; i < back.params.values.size(); ++i)
        max_diff = std::max(max_diff,
                            (back.params.values[i] - ckpt.params.values[i]).cwiseAbs().maxCoeff());
    CHECK(max_diff == 0.0);
    CHECK(back.opt.v[0](0, 0) == 0.5);
    CHECK(back.rng_state == ckpt.rng_state);
    CHECK(file_hash(path) != 0);
    std::remove(path.c_str());
}

TEST_CASE("train_run writes artifacts and resumes identically") {
    namespace fs = std::filesystem;
    const std::string dir = "test_train_run";
    fs::remove_all(dir);
    fs::create_directories(dir);

    Rng gen_rng(1);
    ToyRuleConfig toy;
    const Dataset ds = generate_toy_dataset(24, toy, gen_rng);
    const std::string manifest = dir + "/train.jsonl";
    save_dataset(ds, manifest);

    RunConfig cfg;
    cfg.train_manifest = manifest;
    cfg.out_dir = dir + "/run_a";
    cfg.seed = 17;
    cfg.checkpoint_interval = 4;
    cfg.log_interval = 2;
    cfg.training.total_steps = 8;
    cfg.training.batch_size = 2;

    const std::string final_a = train_run(cfg, std::nullopt);
    CHECK(fs::exists(final_a));
    CHECK(fs::exists(cfg.out_dir + "/checkpoint_latest.ckpt"));
    CHECK(fs::exists(cfg.out_dir + "/loss_log.csv"));
    CHECK(fs::exists(cfg.out_dir + "/run_manifest.json"));
    {
        std::ifstream csv(cfg.out_dir + "/loss_log.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "step,l_denoise,l_iou,l_total");
        int rows = 0;
        std::string line;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 4);  // steps 2,4,6,8
    }

    SUBCASE("interrupted-and-resumed run matches the uninterrupted one") {
        RunConfig half = cfg;
        half.out_dir = dir + "/run_b";
        half.training.total_steps = 4;
        train_run(half, std::nullopt);

        RunConfig full = cfg;
        full.out_dir = dir + "/run_b";
        full.training.total_steps = 8;
        const std::string final_b =
            train_run(full, std::optional<std::string>(dir + "/run_b/checkpoint_final.ckpt"));

        const Checkpoint a = load_checkpoint(final_a);
        const Checkpoint b = load_checkpoint(final_b);
        REQUIRE(a.params.values.size() == b.params.values.size());
        double max_diff = 0.0;
        for (size_t i = 0; i < a.params.values.size(); ++i)
            max_diff = std::max(
                max_diff, (a.params.values[i] - b.params.values[i]).cwiseAbs().maxCoeff());
        CHECK(max_diff == 0.0);
        CHECK(a.step == b.step);
    }

    fs::remove_all(dir);
}

TEST_CASE("run config validation reports field paths") {
    RunConfig cfg;
    cfg.arch.tensor_side = 4;  // smaller than dataset max_nodes below
    cfg.arch.window_size = 2;
    ToyRuleConfig toy;
    DatasetSpec spec = toy.dataset_spec();  // max_nodes 8
    try {
        cfg.validate_against(spec);
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.tensor_side") != std::string::npos);
    }
}
