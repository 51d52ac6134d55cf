#include "natlas/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace natlas {

using nlohmann::json;

namespace {

using Errors = std::vector<std::string>;

bool read(const json& j, int& out) {
    if (!j.is_number_integer()) return false;
    const auto v = j.get<std::int64_t>();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) return false;
    out = int(v);
    return true;
}
bool read(const json& j, std::uint64_t& out) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) return false;
    out = j.get<std::uint64_t>();
    return true;
}
bool read(const json& j, double& out) {
    if (!j.is_number()) return false;
    out = j.get<double>();
    return true;
}
bool read(const json& j, bool& out) {
    if (!j.is_boolean()) return false;
    out = j.get<bool>();
    return true;
}
template <class T, std::size_t N>
bool read(const json& j, std::array<T, N>& out) {
    if (!j.is_array() || j.size() != N) return false;
    std::array<T, N> tmp{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!read(j[i], tmp[i])) return false;
    }
    out = tmp;
    return true;
}
bool read(const json& j, std::vector<int>& out) {
    if (!j.is_array()) return false;
    std::vector<int> tmp(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!read(j[i], tmp[i])) return false;
    }
    out = tmp;
    return true;
}
bool read(const json& j, Dims4& out) {
    std::array<int, 4> a{};
    if (!read(j, a)) return false;
    out = {a[0], a[1], a[2], a[3]};
    return true;
}

template <class T>
const char* type_name() {
    if constexpr (std::is_same_v<T, int>) return "integer";
    else if constexpr (std::is_same_v<T, std::uint64_t>) return "non-negative integer";
    else if constexpr (std::is_same_v<T, double>) return "number";
    else if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_same_v<T, Dims4>) return "array of 4 integers";
    else if constexpr (std::is_same_v<T, Vec3>) return "array of 3 numbers";
    else if constexpr (std::is_same_v<T, std::array<int, 3>>) return "array of 3 integers";
    else return "array of integers";
}

/// Reads the keys of one JSON object, remembering which were consumed so the
/// rest can be reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string path, Errors& errors) : j_(j), path_(std::move(path)), errors_(errors) {
        if (!j_.is_object()) {
            errors_.push_back((path_.empty() ? std::string("config") : path_) + ": expected an object");
            ok_ = false;
        }
    }
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    ~Reader() {
        if (!ok_) return;
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) errors_.push_back("unknown key '" + full(key) + "'");
        }
    }

    template <class T>
    void field(const std::string& key, T& out) {
        if (!take(key)) return;
        if (!read(j_.at(key), out)) errors_.push_back(full(key) + ": expected " + type_name<T>());
    }

    /// Number, or null for +infinity.
    void number_or_inf(const std::string& key, double& out) {
        if (!take(key)) return;
        const auto& v = j_.at(key);
        if (v.is_null()) {
            out = std::numeric_limits<double>::infinity();
        } else if (!read(v, out)) {
            errors_.push_back(full(key) + ": expected number or null");
        }
    }

    template <class Fn>
    void object(const std::string& key, Fn&& fn) {
        if (!take(key)) return;
        Reader sub(j_.at(key), full(key), errors_);
        if (sub.ok_) fn(sub);
    }

    const std::string& path() const { return path_; }
    bool ok() const { return ok_; }

private:
    bool take(const std::string& key) {
        if (!ok_) return false;
        seen_.insert(key);
        return j_.contains(key);
    }
    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
    Errors& errors_;
    std::set<std::string> seen_;
    bool ok_ = true;
};

void read_grid(Reader& r, HashGridConfig& c) {
    r.field("levels", c.levels);
    r.field("features_per_level", c.features_per_level);
    r.field("table_size_log2", c.table_size_log2);
    r.field("base_resolution", c.base_resolution);
    r.field("growth_factor", c.growth_factor);
    r.field("init_scale", c.init_scale);
}

void read_model(Reader& r, ModelConfig& c) {
    r.object("velocity_grid", [&](Reader& s) { read_grid(s, c.velocity_grid); });
    r.object("static_grid", [&](Reader& s) { read_grid(s, c.static_grid); });
    r.object("intensity_grid", [&](Reader& s) { read_grid(s, c.intensity_grid); });
    r.field("latent_dim", c.latent_dim);
    r.field("hidden_width", c.hidden_width);
    r.field("hidden_layers", c.hidden_layers);
    r.field("decoder_hidden_width", c.decoder_hidden_width);
    r.field("use_svf", c.use_svf);
    r.field("euler_steps", c.euler_steps);
    r.field("squarings", c.squarings);
    r.field("use_intensity_field", c.use_intensity_field);
}

void read_train(Reader& r, TrainConfig& c) {
    r.field("iterations", c.iterations);
    r.field("spatial_batch", c.spatial_batch);
    r.field("temporal_batch", c.temporal_batch);
    r.field("learning_rate", c.learning_rate);
    r.field("final_learning_rate", c.final_learning_rate);
    r.object("adam", [&](Reader& s) {
        s.field("beta1", c.adam.beta1);
        s.field("beta2", c.adam.beta2);
        s.field("epsilon", c.adam.epsilon);
    });
    r.field("seed", c.seed);
    r.field("checkpoint_interval", c.checkpoint_interval);
    r.field("reg_points", c.reg_points);
    r.field("threads", c.threads);
    r.field("foreground_quantile", c.foreground_quantile);
    r.field("background_fraction", c.background_fraction);
    r.object("weights", [&](Reader& s) {
        s.field("def_norm", c.weights.def_norm);
        s.field("div", c.weights.div);
        s.field("centrality", c.weights.centrality);
        s.field("jac", c.weights.jac);
        s.field("intensity", c.weights.intensity);
        s.field("tv", c.weights.tv);
    });
    r.field("centrality_bins", c.centrality_bins);
    r.field("centrality_decay", c.centrality_decay);
    r.field("stop_after", c.stop_after);
}

void read_eval(Reader& r, EvalConfig& c) {
    r.field("n_pairs", c.n_pairs);
    r.field("window", c.window);
    r.field("seed", c.seed);
    r.field("labels", c.labels);
}

void read_phantom(Reader& r, PhantomConfig& c) {
    r.field("dims", c.dims);
    r.field("spacing", c.spacing);
    r.field("radii", c.radii);
    r.field("amplitude", c.amplitude);
    r.field("noise_sigma", c.noise_sigma);
    r.field("texture_amplitude", c.texture_amplitude);
    r.field("texture_wavelength", c.texture_wavelength);
}

void read_clahe(Reader& r, ClaheConfig& c) {
    r.number_or_inf("clip_limit", c.clip_limit);
    r.field("tiles", c.tiles);
    r.field("bins", c.bins);
    r.field("min_tile_extent", c.min_tile_extent);
}

template <class Fn>
void check(Errors& errors, const std::string& section, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        errors.push_back(section + ": " + e.what());
    }
}

[[noreturn]] void throw_errors(const Errors& errors) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

template <class T, class ReadFn>
T parse_section(const json& j, const char* section, ReadFn&& read_fn) {
    Errors errors;
    T c;
    {
        Reader r(j, "", errors);
        if (r.ok()) read_fn(r, c);
    }
    if (errors.empty()) check(errors, section, [&] { c.validate(); });
    if (!errors.empty()) throw_errors(errors);
    return c;
}

void validate_phantom(const PhantomConfig& c) {
    if (c.dims.x < 2 || c.dims.y < 2 || c.dims.z < 2 || c.dims.t < 1) throw ConfigError("dims must be >= 2 spatially and >= 1 in time");
    for (double s : c.spacing) {
        if (!(s > 0)) throw ConfigError("spacing must be > 0");
    }
    for (double r : c.radii) {
        if (!(r > 0)) throw ConfigError("radii must be > 0");
    }
    if (!(c.amplitude >= 0) || !(c.noise_sigma >= 0) || !(c.texture_amplitude >= 0) || !(c.texture_wavelength > 0)) {
        throw ConfigError("amplitude, noise and texture settings must be non-negative");
    }
}

void validate_clahe(const ClaheConfig& c) {
    if (!(c.clip_limit > 0)) throw ConfigError("clip_limit must be > 0");
    for (int t : c.tiles) {
        if (t < 1) throw ConfigError("tiles must be >= 1");
    }
    if (c.bins < 2) throw ConfigError("bins must be >= 2");
    if (c.min_tile_extent < 1) throw ConfigError("min_tile_extent must be >= 1");
}

}  // namespace

void RunConfig::validate() const {
    Errors errors;
    if (version != kRunConfigVersion) errors.push_back("version: expected " + std::to_string(kRunConfigVersion));
    check(errors, "phantom", [&] { validate_phantom(phantom); });
    check(errors, "clahe", [&] { validate_clahe(clahe); });
    check(errors, "model", [&] { model.validate(); });
    check(errors, "train", [&] { train.validate(); });
    check(errors, "eval", [&] { eval.validate(); });
    if (atlas.supersample < 1) errors.push_back("atlas.supersample: must be >= 1");
    if (!errors.empty()) throw_errors(errors);
}

json to_json(const PhantomConfig& c) {
    return {{"dims", {c.dims.x, c.dims.y, c.dims.z, c.dims.t}},
            {"spacing", c.spacing},
            {"radii", c.radii},
            {"amplitude", c.amplitude},
            {"noise_sigma", c.noise_sigma},
            {"texture_amplitude", c.texture_amplitude},
            {"texture_wavelength", c.texture_wavelength}};
}

json to_json(const ClaheConfig& c) {
    return {{"clip_limit", std::isinf(c.clip_limit) ? json(nullptr) : json(c.clip_limit)},
            {"tiles", c.tiles},
            {"bins", c.bins},
            {"min_tile_extent", c.min_tile_extent}};
}

json to_json(const HashGridConfig& c) {
    return {{"levels", c.levels},
            {"features_per_level", c.features_per_level},
            {"table_size_log2", c.table_size_log2},
            {"base_resolution", c.base_resolution},
            {"growth_factor", c.growth_factor},
            {"init_scale", c.init_scale}};
}

json to_json(const ModelConfig& c) {
    return {{"velocity_grid", to_json(c.velocity_grid)},
            {"static_grid", to_json(c.static_grid)},
            {"intensity_grid", to_json(c.intensity_grid)},
            {"latent_dim", c.latent_dim},
            {"hidden_width", c.hidden_width},
            {"hidden_layers", c.hidden_layers},
            {"decoder_hidden_width", c.decoder_hidden_width},
            {"use_svf", c.use_svf},
            {"euler_steps", c.euler_steps},
            {"squarings", c.squarings},
            {"use_intensity_field", c.use_intensity_field}};
}

json to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"spatial_batch", c.spatial_batch},
            {"temporal_batch", c.temporal_batch},
            {"learning_rate", c.learning_rate},
            {"final_learning_rate", c.final_learning_rate},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
            {"seed", c.seed},
            {"checkpoint_interval", c.checkpoint_interval},
            {"reg_points", c.reg_points},
            {"threads", c.threads},
            {"foreground_quantile", c.foreground_quantile},
            {"background_fraction", c.background_fraction},
            {"weights",
             {{"def_norm", c.weights.def_norm},
              {"div", c.weights.div},
              {"centrality", c.weights.centrality},
              {"jac", c.weights.jac},
              {"intensity", c.weights.intensity},
              {"tv", c.weights.tv}}},
            {"centrality_bins", c.centrality_bins},
            {"centrality_decay", c.centrality_decay},
            {"stop_after", c.stop_after}};
}

json to_json(const EvalConfig& c) {
    return {{"n_pairs", c.n_pairs}, {"window", c.window}, {"seed", c.seed}, {"labels", c.labels}};
}

json to_json(const RunConfig& c) {
    return {{"version", c.version},
            {"phantom", to_json(c.phantom)},
            {"clahe", to_json(c.clahe)},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"eval", to_json(c.eval)},
            {"atlas", {{"supersample", c.atlas.supersample}}}};
}

ModelConfig model_config_from_json(const json& j) { return parse_section<ModelConfig>(j, "model", read_model); }
TrainConfig train_config_from_json(const json& j) { return parse_section<TrainConfig>(j, "train", read_train); }
EvalConfig eval_config_from_json(const json& j) { return parse_section<EvalConfig>(j, "eval", read_eval); }

RunConfig run_config_from_json(const json& j) {
    Errors errors;
    RunConfig c;
    {
        Reader r(j, "", errors);
        if (r.ok()) {
            if (!j.contains("version")) errors.push_back("version: missing");
            r.field("version", c.version);
            r.object("phantom", [&](Reader& s) { read_phantom(s, c.phantom); });
            r.object("clahe", [&](Reader& s) { read_clahe(s, c.clahe); });
            r.object("model", [&](Reader& s) { read_model(s, c.model); });
            r.object("train", [&](Reader& s) { read_train(s, c.train); });
            r.object("eval", [&](Reader& s) { read_eval(s, c.eval); });
            r.object("atlas", [&](Reader& s) { s.field("supersample", c.atlas.supersample); });
        }
    }
    if (!errors.empty()) throw_errors(errors);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(c).dump(2) << '\n';
}

}  // namespace natlas
