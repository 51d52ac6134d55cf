#include "natlas/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "natlas/config.hpp"

namespace natlas {

void TrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (spatial_batch < 1 || temporal_batch < 1) throw ConfigError("batch sizes must be >= 1");
    if (!(learning_rate > 0) || !(final_learning_rate > 0)) throw ConfigError("learning rates must be > 0");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) throw ConfigError("Adam betas must be in [0,1)");
    if (!(adam.epsilon >= 0)) throw ConfigError("Adam epsilon must be >= 0");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(foreground_quantile >= 0 && foreground_quantile < 1)) throw ConfigError("foreground_quantile must be in [0,1)");
    if (!(background_fraction >= 0 && background_fraction <= 1)) throw ConfigError("background_fraction must be in [0,1]");
    weights.validate();
    CentralityState(centrality_bins, centrality_decay).validate();
}

AdamState AdamState::zeros_like(const FieldSet& fs) {
    AdamState s;
    const auto groups = fs.parameter_groups();
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        s.m[i].assign(groups[i].size(), 0.0);
        s.v[i].assign(groups[i].size(), 0.0);
    }
    return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::int64_t step, double lr, const AdamConfig& cfg) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        throw DataError("adam_update: shape mismatch");
    }
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double step_size = lr * std::sqrt(1.0 - std::pow(b2, double(step))) / (1.0 - std::pow(b1, double(step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        params[i] -= step_size * m[i] / (std::sqrt(v[i]) + cfg.epsilon);
    }
}

void adam_step(FieldSet& fs, const FieldGradients& grads, AdamState& state, double lr, const AdamConfig& cfg) {
    auto groups = fs.parameter_groups();
    state.step += 1;
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        adam_update(groups[i], grads.groups[i], state.m[i], state.v[i], state.step, lr, cfg);
    }
}

double cosine_learning_rate(const TrainConfig& cfg, int iteration) {
    if (cfg.iterations <= 0) return cfg.learning_rate;
    const double progress = std::clamp(double(iteration) / double(cfg.iterations), 0.0, 1.0);
    return cfg.final_learning_rate +
           0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

BatchSampler::BatchSampler(const Volume4D& volume, double foreground_quantile, double background_fraction)
    : dims_(volume.dims), background_fraction_(background_fraction) {
    const std::size_t n = volume.dims.spatial();
    std::vector<float> peak(n, 0.0f);
    for (int t = 0; t < volume.dims.t; ++t)
        for (std::size_t i = 0; i < n; ++i) peak[i] = std::max(peak[i], volume.data[std::size_t(t) * n + i]);
    std::vector<float> sorted = peak;
    const std::size_t q = std::min(n - 1, std::size_t(foreground_quantile * double(n)));
    std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(q), sorted.end());
    const float threshold = sorted[q];
    for (std::size_t i = 0; i < n; ++i) {
        if (peak[i] > threshold) foreground_.push_back(std::uint32_t(i));
    }
    if (foreground_.empty()) {
        for (std::size_t i = 0; i < n; ++i) foreground_.push_back(std::uint32_t(i));
    }
}

Batch BatchSampler::sample(Rng& rng, int spatial, int temporal) const {
    if (temporal > dims_.t) throw ConfigError("temporal batch larger than the number of frames");
    Batch b;
    b.points.reserve(std::size_t(spatial));
    const std::uint64_t n_all = dims_.spatial();
    for (int s = 0; s < spatial; ++s) {
        std::uint32_t idx;
        if (rng.uniform() < background_fraction_) {
            idx = std::uint32_t(rng.below(n_all));
        } else {
            idx = foreground_[rng.below(foreground_.size())];
        }
        const int i = int(idx % std::uint32_t(dims_.x));
        const int j = int((idx / std::uint32_t(dims_.x)) % std::uint32_t(dims_.y));
        const int k = int(idx / (std::uint32_t(dims_.x) * std::uint32_t(dims_.y)));
        Vec3 p{voxel_to_world(i + rng.uniform(-0.5, 0.5), dims_.x), voxel_to_world(j + rng.uniform(-0.5, 0.5), dims_.y),
               voxel_to_world(k + rng.uniform(-0.5, 0.5), dims_.z)};
        b.points.push_back(clamp_unit(p));
    }
    std::vector<int> frames(std::size_t(dims_.t));
    for (int t = 0; t < dims_.t; ++t) frames[std::size_t(t)] = t;
    for (int m = 0; m < temporal; ++m) {
        const auto r = std::size_t(m) + std::size_t(rng.below(std::uint64_t(dims_.t - m)));
        std::swap(frames[std::size_t(m)], frames[r]);
    }
    b.frames.assign(frames.begin(), frames.begin() + temporal);
    return b;
}

bool all_finite(const FieldSet& fs) {
    for (const auto& g : fs.parameter_groups()) {
        for (double x : g) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

TrainState init_training(const Volume4D& volume, const ModelConfig& model, const TrainConfig& train) {
    model.validate();
    train.validate();
    if (train.temporal_batch > volume.dims.t) throw ConfigError("temporal_batch exceeds the number of frames");
    TrainState s;
    s.model = model;
    s.train = train;
    s.data_dims = volume.dims;
    s.fields = FieldSet(model, train.seed);
    s.adam = AdamState::zeros_like(s.fields);
    s.centrality = CentralityState(train.centrality_bins, train.centrality_decay);
    s.rng = Rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
}

namespace {

void check_finite(const LossBreakdown& l, int iter) {
    const std::pair<const char*, double> terms[] = {{"rec", l.rec},   {"def_norm", l.def_norm},     {"div", l.div},
                                                    {"centrality", l.centrality}, {"jac", l.jac}, {"int", l.intensity},
                                                    {"tv", l.tv},     {"total", l.total}};
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("non-finite loss term '" + std::string(name) + "' at iteration " + std::to_string(iter));
        }
    }
}

}  // namespace

void run_training(TrainState& state, const Volume4D& volume, const TrainHooks& hooks) {
    const TrainConfig& cfg = state.train;
    if (!state.data_dims.same_space(volume.dims) || state.data_dims.t != volume.dims.t) {
        throw DataError("training volume does not match the state's data dims");
    }
    const BatchSampler sampler(volume, cfg.foreground_quantile, cfg.background_fraction);
    const int end = cfg.stop_after >= 0 ? std::min(cfg.iterations, cfg.stop_after) : cfg.iterations;
    FieldGradients grads = state.fields.make_gradients();
    const LossOptions options{cfg.reg_points, cfg.threads};

    while (state.iteration < end) {
        const auto start = std::chrono::steady_clock::now();
        const Batch batch = sampler.sample(state.rng, cfg.spatial_batch, cfg.temporal_batch);
        grads.zero();
        const auto res = evaluate_loss(state.fields, volume, batch, cfg.weights, state.centrality, options, &grads);
        check_finite(res.loss, state.iteration);
        const double lr = cosine_learning_rate(cfg, state.iteration);
        adam_step(state.fields, grads, state.adam, lr, cfg.adam);
        apply(state.centrality, res.centrality);
        state.iteration += 1;

        if (hooks.on_step) {
            LogRecord rec;
            rec.iter = state.iteration;
            rec.loss = res.loss;
            rec.learning_rate = lr;
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            hooks.on_step(rec);
        }
        if (cfg.checkpoint_interval > 0 && state.iteration % cfg.checkpoint_interval == 0) {
            if (!all_finite(state.fields)) throw std::runtime_error("non-finite parameter at iteration " + std::to_string(state.iteration));
            if (hooks.on_checkpoint) hooks.on_checkpoint(state);
        }
    }
    if (!all_finite(state.fields)) throw std::runtime_error("non-finite parameter after training");
    if (hooks.on_checkpoint) hooks.on_checkpoint(state);
}

TrainResult train(const Volume4D& volume, const ModelConfig& model, const TrainConfig& cfg) {
    TrainState state = init_training(volume, model, cfg);
    TrainResult out;
    TrainHooks hooks;
    hooks.on_step = [&](const LogRecord& r) { out.log.push_back(r); };
    run_training(state, volume, hooks);
    out.fields = std::move(state.fields);
    return out;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

class SectionWriter {
public:
    void add(const char tag[4], std::string payload) { sections_.emplace_back(std::string(tag, 4), std::move(payload)); }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write("NATC", 4);
        const std::uint32_t version = kCheckpointVersion, count = std::uint32_t(sections_.size());
        out.write(reinterpret_cast<const char*>(&version), 4);
        out.write(reinterpret_cast<const char*>(&count), 4);
        for (const auto& [tag, payload] : sections_) {
            const std::uint64_t len = payload.size();
            const std::uint32_t crc = std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), uInt(payload.size())));
            out.write(tag.data(), 4);
            out.write(reinterpret_cast<const char*>(&len), 8);
            out.write(payload.data(), std::streamsize(payload.size()));
            out.write(reinterpret_cast<const char*>(&crc), 4);
        }
        if (!out) throw std::runtime_error("write failed: " + path.string());
    }

private:
    std::vector<std::pair<std::string, std::string>> sections_;
};

void append_doubles(std::string& s, std::span<const double> v) {
    const std::uint64_t n = v.size();
    s.append(reinterpret_cast<const char*>(&n), 8);
    s.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class PayloadReader {
public:
    explicit PayloadReader(const std::string& s) : s_(s) {}
    std::vector<double> doubles() {
        std::uint64_t n;
        need(8);
        std::memcpy(&n, s_.data() + pos_, 8);
        pos_ += 8;
        if (n > (s_.size() - pos_) / sizeof(double)) throw FormatError("checkpoint array length exceeds section");
        std::vector<double> v(n);
        std::memcpy(v.data(), s_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > s_.size()) throw FormatError("checkpoint section truncated");
    }
    const std::string& s_;
    std::size_t pos_ = 0;
};

void copy_into(std::span<double> dst, const std::vector<double>& src, const char* what) {
    if (dst.size() != src.size()) throw FormatError(std::string("checkpoint parameter size mismatch in ") + what);
    std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    nlohmann::json meta;
    meta["model"] = to_json(state.model);
    meta["train"] = to_json(state.train);
    meta["data_dims"] = {state.data_dims.x, state.data_dims.y, state.data_dims.z, state.data_dims.t};
    meta["iteration"] = state.iteration;
    meta["adam_step"] = state.adam.step;

    SectionWriter w;
    w.add("META", meta.dump());
    std::string adam, cent;
    const auto groups = state.fields.parameter_groups();
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        std::string params;
        append_doubles(params, groups[i]);
        const char tag[4] = {'P', 'A', 'R', char('0' + i)};
        w.add(tag, std::move(params));
    }
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        append_doubles(adam, state.adam.m[i]);
        append_doubles(adam, state.adam.v[i]);
    }
    std::vector<double> flat;
    for (const auto& v : state.centrality.mean) flat.insert(flat.end(), v.begin(), v.end());
    append_doubles(cent, flat);
    w.add("ADAM", std::move(adam));
    w.add("CENT", std::move(cent));
    w.add("RNG_", state.rng.state());
    w.write(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < 12 || buf.compare(0, 4, "NATC") != 0) throw FormatError("not a NATC checkpoint: " + path.string());
    std::uint32_t version, count;
    std::memcpy(&version, buf.data() + 4, 4);
    std::memcpy(&count, buf.data() + 8, 4);
    if (version != kCheckpointVersion) throw FormatError("checkpoint version mismatch: " + std::to_string(version));

    std::map<std::string, std::string> sections;
    std::size_t pos = 12;
    for (std::uint32_t s = 0; s < count; ++s) {
        if (pos + 12 > buf.size()) throw ChecksumError("checkpoint truncated (section header)");
        const std::string tag = buf.substr(pos, 4);
        std::uint64_t len;
        std::memcpy(&len, buf.data() + pos + 4, 8);
        pos += 12;
        if (len > buf.size() || pos + len + 4 > buf.size()) throw ChecksumError("checkpoint truncated in section " + tag);
        std::string payload = buf.substr(pos, len);
        std::uint32_t crc;
        std::memcpy(&crc, buf.data() + pos + len, 4);
        pos += len + 4;
        if (crc != std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), uInt(payload.size())))) {
            throw ChecksumError("checkpoint checksum mismatch in section " + tag);
        }
        sections[tag] = std::move(payload);
    }
    for (const char* tag : {"META", "PAR0", "PAR1", "PAR2", "PAR3", "PAR4", "PAR5", "PAR6", "ADAM", "CENT", "RNG_"}) {
        if (!sections.count(tag)) throw FormatError(std::string("checkpoint missing section ") + tag);
    }

    const auto meta = nlohmann::json::parse(sections["META"]);
    TrainState s;
    s.model = model_config_from_json(meta.at("model"));
    s.train = train_config_from_json(meta.at("train"));
    const auto d = meta.at("data_dims");
    s.data_dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>(), d.at(3).get<int>()};
    s.iteration = meta.at("iteration").get<int>();
    s.fields = FieldSet(s.model, s.train.seed);
    auto groups = s.fields.parameter_groups();
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        PayloadReader pr(sections[std::string("PAR") + char('0' + i)]);
        copy_into(groups[i], pr.doubles(), kParameterGroupNames[i]);
    }

    s.adam = AdamState::zeros_like(s.fields);
    s.adam.step = meta.at("adam_step").get<std::int64_t>();
    PayloadReader ar(sections["ADAM"]);
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        copy_into(s.adam.m[i], ar.doubles(), "adam.m");
        copy_into(s.adam.v[i], ar.doubles(), "adam.v");
    }
    s.centrality = CentralityState(s.train.centrality_bins, s.train.centrality_decay);
    PayloadReader cr(sections["CENT"]);
    const auto flat = cr.doubles();
    if (flat.size() != s.centrality.mean.size() * 3) throw FormatError("checkpoint centrality size mismatch");
    for (std::size_t b = 0; b < s.centrality.mean.size(); ++b) s.centrality.mean[b] = {flat[3 * b], flat[3 * b + 1], flat[3 * b + 2]};
    s.rng.set_state(sections["RNG_"]);
    return s;
}

}  // namespace natlas
