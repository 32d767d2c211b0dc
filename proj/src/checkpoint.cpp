#include "diffusesg/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace dsg {

using nlohmann::json;

namespace {

json mat_to_json(const Mat& m) {
    std::vector<double> flat(m.data(), m.data() + m.size());
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(flat)}};
}

Mat mat_from_json(const json& j) {
    Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto flat = j.at("data").get<std::vector<double>>();
    check_contract(static_cast<Eigen::Index>(flat.size()) == m.size(), "checkpoint: tensor size");
    std::copy(flat.begin(), flat.end(), m.data());
    return m;
}

json store_to_json(const ParamStore& store) {
    json arr = json::array();
    for (size_t i = 0; i < store.values.size(); ++i) {
        json entry = mat_to_json(store.values[i]);
        entry["name"] = store.names[i];
        arr.push_back(std::move(entry));
    }
    return arr;
}

ParamStore store_from_json(const json& arr) {
    ParamStore store;
    for (const auto& entry : arr) {
        store.names.push_back(entry.at("name").get<std::string>());
        store.values.push_back(mat_from_json(entry));
    }
    return store;
}

json spec_to_json(const DatasetSpec& spec) {
    return json{{"object_classes", spec.object_class_names},
                {"relation_classes", spec.relation_class_names},
                {"max_nodes", spec.max_nodes},
                {"fully_connected", spec.fully_connected}};
}

DatasetSpec spec_from_json(const json& j) {
    DatasetSpec spec;
    spec.object_class_names = j.at("object_classes").get<std::vector<std::string>>();
    spec.relation_class_names = j.at("relation_classes").get<std::vector<std::string>>();
    spec.object_class_count = static_cast<int>(spec.object_class_names.size());
    spec.relation_class_count = static_cast<int>(spec.relation_class_names.size());
    spec.max_nodes = j.at("max_nodes").get<int>();
    spec.fully_connected = j.at("fully_connected").get<bool>();
    return spec;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json j;
    j["format_version"] = ckpt.format_version;
    j["spec"] = spec_to_json(ckpt.spec);
    j["spec_hash"] = ckpt.spec_hash();
    j["scheme"] = scheme_to_string(ckpt.scheme);
    j["arch"] = json{{"tensor_side", ckpt.arch.tensor_side},
                     {"window_size", ckpt.arch.window_size},
                     {"token_dim", ckpt.arch.token_dim},
                     {"ffn_dim", ckpt.arch.ffn_dim},
                     {"down_blocks", ckpt.arch.down_blocks},
                     {"up_blocks", ckpt.arch.up_blocks},
                     {"heads", ckpt.arch.heads},
                     {"time_embed_dim", ckpt.arch.time_embed_dim}};
    j["train"] = json{{"lambda_iou", ckpt.train.lambda_iou},
                      {"learning_rate", ckpt.train.learning_rate},
                      {"ema_decay", ckpt.train.ema_decay},
                      {"self_conditioning_prob", ckpt.train.self_conditioning_prob},
                      {"batch_size", ckpt.train.batch_size},
                      {"total_steps", ckpt.train.total_steps},
                      {"seed", ckpt.train.seed},
                      {"sigma_location", ckpt.train.sigma_dist.location},
                      {"sigma_scale", ckpt.train.sigma_dist.scale},
                      {"sigma_data", ckpt.train.precond.sigma_data}};
    j["params"] = store_to_json(ckpt.params);
    j["ema"] = store_to_json(ckpt.ema);
    json adam;
    adam["step"] = ckpt.opt.step;
    adam["m"] = json::array();
    adam["v"] = json::array();
    for (const auto& m : ckpt.opt.m) adam["m"].push_back(mat_to_json(m));
    for (const auto& v : ckpt.opt.v) adam["v"].push_back(mat_to_json(v));
    j["adam"] = std::move(adam);
    j["step"] = ckpt.step;
    j["rng_state"] = ckpt.rng_state;

    const std::vector<uint8_t> blob = json::to_cbor(j);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + tmp);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size()));
        if (!out) throw DataError("checkpoint write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot rename checkpoint into place: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::from_cbor(blob);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint parse: ") + e.what());
    }
    Checkpoint ckpt;
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != 1)
        throw DataError("unsupported checkpoint format version " +
                        std::to_string(ckpt.format_version));
    ckpt.spec = spec_from_json(j.at("spec"));
    ckpt.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    const auto& arch = j.at("arch");
    ckpt.arch.tensor_side = arch.at("tensor_side").get<int>();
    ckpt.arch.window_size = arch.at("window_size").get<int>();
    ckpt.arch.token_dim = arch.at("token_dim").get<int>();
    ckpt.arch.ffn_dim = arch.at("ffn_dim").get<int>();
    ckpt.arch.down_blocks = arch.at("down_blocks").get<std::vector<int>>();
    ckpt.arch.up_blocks = arch.at("up_blocks").get<std::vector<int>>();
    ckpt.arch.heads = arch.at("heads").get<std::vector<int>>();
    ckpt.arch.time_embed_dim = arch.at("time_embed_dim").get<int>();
    const auto& train = j.at("train");
    ckpt.train.lambda_iou = train.at("lambda_iou").get<double>();
    ckpt.train.learning_rate = train.at("learning_rate").get<double>();
    ckpt.train.ema_decay = train.at("ema_decay").get<double>();
    ckpt.train.self_conditioning_prob = train.at("self_conditioning_prob").get<double>();
    ckpt.train.batch_size = train.at("batch_size").get<int>();
    ckpt.train.total_steps = train.at("total_steps").get<int64_t>();
    ckpt.train.seed = train.at("seed").get<uint64_t>();
    ckpt.train.sigma_dist.location = train.at("sigma_location").get<double>();
    ckpt.train.sigma_dist.scale = train.at("sigma_scale").get<double>();
    ckpt.train.precond.sigma_data = train.at("sigma_data").get<double>();
    ckpt.params = store_from_json(j.at("params"));
    ckpt.ema = store_from_json(j.at("ema"));
    const auto& adam = j.at("adam");
    ckpt.opt.step = adam.at("step").get<int64_t>();
    for (const auto& m : adam.at("m")) ckpt.opt.m.push_back(mat_from_json(m));
    for (const auto& v : adam.at("v")) ckpt.opt.v.push_back(mat_from_json(v));
    ckpt.step = j.at("step").get<int64_t>();
    ckpt.rng_state = j.at("rng_state").get<std::vector<uint64_t>>();
    return ckpt;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot hash: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const auto got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

}  // namespace dsg
