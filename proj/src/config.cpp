#include "diffusesg/config.hpp"

#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dsg {

bool TomlValue::as_bool(const std::string& where) const {
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    throw ConfigError(where + ": expected a boolean");
}

int64_t TomlValue::as_int(const std::string& where) const {
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    throw ConfigError(where + ": expected an integer");
}

double TomlValue::as_double(const std::string& where) const {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<int64_t>(&v)) return static_cast<double>(*i);
    throw ConfigError(where + ": expected a number");
}

const std::string& TomlValue::as_string(const std::string& where) const {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError(where + ": expected a string");
}

std::vector<int> TomlValue::as_int_list(const std::string& where) const {
    const auto* arr = std::get_if<std::vector<TomlValue>>(&v);
    if (arr == nullptr) throw ConfigError(where + ": expected an array");
    std::vector<int> out;
    for (const auto& e : *arr) out.push_back(static_cast<int>(e.as_int(where)));
    return out;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

TomlValue parse_scalar(const std::string& raw, const std::string& where) {
    const std::string s = trim(raw);
    if (s.empty()) throw ConfigError(where + ": empty value");
    if (s == "true") return TomlValue{true};
    if (s == "false") return TomlValue{false};
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') throw ConfigError(where + ": unterminated string");
        return TomlValue{s.substr(1, s.size() - 2)};
    }
    // Integer first, double as fallback.
    try {
        size_t used = 0;
        const int64_t i = std::stoll(s, &used);
        if (used == s.size()) return TomlValue{i};
    } catch (...) {
    }
    try {
        size_t used = 0;
        const double d = std::stod(s, &used);
        if (used == s.size()) return TomlValue{d};
    } catch (...) {
    }
    throw ConfigError(where + ": cannot parse value '" + s + "'");
}

TomlValue parse_value(const std::string& raw, const std::string& where) {
    const std::string s = trim(raw);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where + ": unterminated array");
        std::vector<TomlValue> items;
        std::string body = s.substr(1, s.size() - 2);
        std::string current;
        bool in_string = false;
        for (char c : body) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!trim(current).empty()) items.push_back(parse_scalar(current, where));
                current.clear();
            } else {
                current += c;
            }
        }
        if (!trim(current).empty()) items.push_back(parse_scalar(current, where));
        return TomlValue{std::move(items)};
    }
    return parse_scalar(s, where);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

}  // namespace

TomlFile TomlFile::parse_string(const std::string& text) {
    TomlFile file;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(s.substr(0, eq));
        const std::string where = section.empty() ? key : section + "." + key;
        file.sections[section][key] = parse_value(s.substr(eq + 1), where);
    }
    return file;
}

TomlFile TomlFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

bool TomlFile::has(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

const TomlValue& TomlFile::get(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    if (s == sections.end() || s->second.count(key) == 0)
        throw ConfigError("missing config key " + section + "." + key);
    return s->second.at(key);
}

RunConfig RunConfig::from_file(const std::string& path) {
    const TomlFile f = TomlFile::parse_file(path);
    RunConfig c;
    if (f.has("dataset", "train")) c.train_manifest = f.get("dataset", "train").as_string("dataset.train");
    if (f.has("dataset", "val")) c.val_manifest = f.get("dataset", "val").as_string("dataset.val");

    if (f.has("model", "scheme"))
        c.scheme = scheme_from_string(f.get("model", "scheme").as_string("model.scheme"));
    auto& a = c.arch;
    if (f.has("model", "tensor_side"))
        a.tensor_side = static_cast<int>(f.get("model", "tensor_side").as_int("model.tensor_side"));
    if (f.has("model", "window_size"))
        a.window_size = static_cast<int>(f.get("model", "window_size").as_int("model.window_size"));
    if (f.has("model", "token_dim"))
        a.token_dim = static_cast<int>(f.get("model", "token_dim").as_int("model.token_dim"));
    if (f.has("model", "ffn_dim"))
        a.ffn_dim = static_cast<int>(f.get("model", "ffn_dim").as_int("model.ffn_dim"));
    if (f.has("model", "down_blocks")) a.down_blocks = f.get("model", "down_blocks").as_int_list("model.down_blocks");
    if (f.has("model", "up_blocks")) a.up_blocks = f.get("model", "up_blocks").as_int_list("model.up_blocks");
    if (f.has("model", "heads")) a.heads = f.get("model", "heads").as_int_list("model.heads");
    if (f.has("model", "time_embed_dim"))
        a.time_embed_dim =
            static_cast<int>(f.get("model", "time_embed_dim").as_int("model.time_embed_dim"));

    auto& t = c.training;
    if (f.has("training", "lambda_iou")) t.lambda_iou = f.get("training", "lambda_iou").as_double("training.lambda_iou");
    if (f.has("training", "learning_rate"))
        t.learning_rate = f.get("training", "learning_rate").as_double("training.learning_rate");
    if (f.has("training", "ema_decay")) t.ema_decay = f.get("training", "ema_decay").as_double("training.ema_decay");
    if (f.has("training", "self_conditioning_prob"))
        t.self_conditioning_prob =
            f.get("training", "self_conditioning_prob").as_double("training.self_conditioning_prob");
    if (f.has("training", "batch_size"))
        t.batch_size = static_cast<int>(f.get("training", "batch_size").as_int("training.batch_size"));
    if (f.has("training", "total_steps"))
        t.total_steps = f.get("training", "total_steps").as_int("training.total_steps");
    if (f.has("training", "sigma_location"))
        t.sigma_dist.location = f.get("training", "sigma_location").as_double("training.sigma_location");
    if (f.has("training", "sigma_scale"))
        t.sigma_dist.scale = f.get("training", "sigma_scale").as_double("training.sigma_scale");
    if (f.has("training", "sigma_data"))
        t.precond.sigma_data = f.get("training", "sigma_data").as_double("training.sigma_data");

    auto& s = c.sampler;
    if (f.has("sampler", "steps")) s.steps = static_cast<int>(f.get("sampler", "steps").as_int("sampler.steps"));
    if (f.has("sampler", "sigma_min")) s.sigma_min = f.get("sampler", "sigma_min").as_double("sampler.sigma_min");
    if (f.has("sampler", "sigma_max")) s.sigma_max = f.get("sampler", "sigma_max").as_double("sampler.sigma_max");
    if (f.has("sampler", "rho")) s.rho = f.get("sampler", "rho").as_double("sampler.rho");
    if (f.has("sampler", "s_churn")) s.s_churn = f.get("sampler", "s_churn").as_double("sampler.s_churn");
    if (f.has("sampler", "s_tmin")) s.s_tmin = f.get("sampler", "s_tmin").as_double("sampler.s_tmin");
    if (f.has("sampler", "s_tmax")) s.s_tmax = f.get("sampler", "s_tmax").as_double("sampler.s_tmax");
    if (f.has("sampler", "s_noise")) s.s_noise = f.get("sampler", "s_noise").as_double("sampler.s_noise");

    if (f.has("run", "out_dir")) c.out_dir = f.get("run", "out_dir").as_string("run.out_dir");
    if (f.has("run", "seed")) c.seed = static_cast<uint64_t>(f.get("run", "seed").as_int("run.seed"));
    if (f.has("run", "checkpoint_interval"))
        c.checkpoint_interval =
            static_cast<int>(f.get("run", "checkpoint_interval").as_int("run.checkpoint_interval"));
    if (f.has("run", "log_interval"))
        c.log_interval = static_cast<int>(f.get("run", "log_interval").as_int("run.log_interval"));
    if (f.has("run", "mmd_bandwidth"))
        c.mmd_bandwidth = f.get("run", "mmd_bandwidth").as_double("run.mmd_bandwidth");
    return c;
}

void RunConfig::validate_against(const DatasetSpec& spec) const {
    const auto arch_violations = arch.validate();
    if (!arch_violations.empty()) throw ConfigError("model: " + arch_violations.front());
    const auto train_violations = training.validate();
    if (!train_violations.empty()) throw ConfigError("training: " + train_violations.front());
    const auto sampler_violations = sampler.validate();
    if (!sampler_violations.empty()) throw ConfigError("sampler: " + sampler_violations.front());
    if (arch.tensor_side < spec.max_nodes)
        throw ConfigError("model.tensor_side: must be >= dataset max_nodes (" +
                          std::to_string(spec.max_nodes) + ")");
}

namespace {

std::string int_list(const std::vector<int>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
}

}  // namespace

std::string RunConfig::to_toml() const {
    std::ostringstream os;
    os.precision(17);
    os << "[dataset]\n";
    os << "train = \"" << train_manifest << "\"\n";
    os << "val = \"" << val_manifest << "\"\n\n";
    os << "[model]\n";
    os << "scheme = \"" << scheme_to_string(scheme) << "\"\n";
    os << "tensor_side = " << arch.tensor_side << "\n";
    os << "window_size = " << arch.window_size << "\n";
    os << "token_dim = " << arch.token_dim << "\n";
    os << "ffn_dim = " << arch.ffn_dim << "\n";
    os << "down_blocks = " << int_list(arch.down_blocks) << "\n";
    os << "up_blocks = " << int_list(arch.up_blocks) << "\n";
    os << "heads = " << int_list(arch.heads) << "\n";
    os << "time_embed_dim = " << arch.time_embed_dim << "\n\n";
    os << "[training]\n";
    os << "lambda_iou = " << training.lambda_iou << "\n";
    os << "learning_rate = " << training.learning_rate << "\n";
    os << "ema_decay = " << training.ema_decay << "\n";
    os << "self_conditioning_prob = " << training.self_conditioning_prob << "\n";
    os << "batch_size = " << training.batch_size << "\n";
    os << "total_steps = " << training.total_steps << "\n";
    os << "sigma_location = " << training.sigma_dist.location << "\n";
    os << "sigma_scale = " << training.sigma_dist.scale << "\n";
    os << "sigma_data = " << training.precond.sigma_data << "\n\n";
    os << "[sampler]\n";
    os << "steps = " << sampler.steps << "\n";
    os << "sigma_min = " << sampler.sigma_min << "\n";
    os << "sigma_max = " << sampler.sigma_max << "\n";
    os << "rho = " << sampler.rho << "\n";
    os << "s_churn = " << sampler.s_churn << "\n";
    os << "s_tmin = " << sampler.s_tmin << "\n";
    os << "s_tmax = " << sampler.s_tmax << "\n";
    os << "s_noise = " << sampler.s_noise << "\n\n";
    os << "[run]\n";
    os << "out_dir = \"" << out_dir << "\"\n";
    os << "seed = " << seed << "\n";
    os << "checkpoint_interval = " << checkpoint_interval << "\n";
    os << "log_interval = " << log_interval << "\n";
    os << "mmd_bandwidth = " << mmd_bandwidth << "\n";
    return os.str();
}

void write_run_manifest(const std::string& path, const std::string& command,
                        const RunConfig& config, uint64_t checkpoint_hash, double wall_seconds,
                        const std::map<std::string, std::string>& extra) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config.to_toml();
    j["checkpoint_hash"] = checkpoint_hash;
    j["seed"] = config.seed;
    j["wall_seconds"] = wall_seconds;
    for (const auto& [k, v] : extra) j[k] = v;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write run manifest: " + tmp);
        out << j.dump(2) << "\n";
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot rename run manifest into place: " + path);
}

}  // namespace dsg
