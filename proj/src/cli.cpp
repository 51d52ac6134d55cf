#include "natlas/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <thread>

#include "natlas/atlas.hpp"
#include "natlas/clahe.hpp"
#include "natlas/config.hpp"
#include "natlas/evaluate.hpp"
#include "natlas/phantom.hpp"
#include "natlas/trainer.hpp"
#include "natlas/volume_io.hpp"

namespace natlas {

namespace fs = std::filesystem;

int resolve_threads(int flag, bool strict) {
    if (strict) return 1;
    if (flag > 0) return flag;
    if (const char* env = std::getenv("NATLAS_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return int(v);
    }
    return std::max(1, int(std::thread::hardware_concurrency()));
}

namespace {

struct Common {
    std::string config;
    int threads = 0;
    bool strict = false;
};

RunConfig base_config(const Common& c) { return c.config.empty() ? RunConfig{} : load_run_config(c.config); }

template <class T>
void override_if(const CLI::Option* opt, T& dst, const T& src) {
    if (opt->count() > 0) dst = src;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

nlohmann::json log_json(const LogRecord& r) {
    return {{"iter", r.iter},
            {"rec", r.loss.rec},
            {"def_norm", r.loss.def_norm},
            {"div", r.loss.div},
            {"centrality", r.loss.centrality},
            {"jac", r.loss.jac},
            {"int", r.loss.intensity},
            {"tv", r.loss.tv},
            {"total", r.loss.total},
            {"lr", r.learning_rate},
            {"wall_ms", r.wall_ms}};
}

void write_motion(const VectorSeries& m, const fs::path& path) {
    RawContainer c;
    c.dims = {m.dims.x, m.dims.y, m.dims.z, 3 * m.dims.t};
    c.spacing = m.spacing;
    const std::size_t n = m.dims.spatial();
    c.f32.resize(n * std::size_t(c.dims.t));
    for (int t = 0; t < m.dims.t; ++t)
        for (int a = 0; a < 3; ++a)
            for (std::size_t v = 0; v < n; ++v) c.f32[(std::size_t(3 * t + a)) * n + v] = float(m.data[std::size_t(t) * n + v][a]);
    write_raw(c, path);
}

Dims4 atlas_grid(const Dims4& data, int supersample) {
    auto up = [&](int n) { return (n - 1) * supersample + 1; };
    return {up(data.x), up(data.y), up(data.z), 1};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural-field atlas construction for 4D image series", "natlas"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config, "JSON run configuration (flags override its values)");
    app.add_option("--threads", common.threads, "Worker threads (default: NATLAS_THREADS, else all cores)");
    app.add_flag("--strict-determinism", common.strict, "Single-threaded, bit-reproducible mode");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic moving phantom (image, labels, motion)");
    std::string synth_out;
    std::uint64_t synth_seed = 0;
    int synth_size = 0, synth_frames = 0;
    double synth_amp = 0, synth_noise = 0;
    synth->add_option("-o,--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
    auto* o_size = synth->add_option("--size", synth_size, "Edge length of the cubic volume")->check(CLI::PositiveNumber);
    auto* o_frames = synth->add_option("--frames", synth_frames, "Number of frames")->check(CLI::PositiveNumber);
    auto* o_amp = synth->add_option("--amplitude", synth_amp, "Peak motion in voxels");
    auto* o_noise = synth->add_option("--noise", synth_noise, "Gaussian noise sigma");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Apply CLAHE to a volume");
    std::string pre_in, pre_out;
    double pre_clip = 0;
    int pre_tiles = 0, pre_bins = 0;
    pre->add_option("-i,--in", pre_in, "Input volume (.raw or .nii)")->required();
    pre->add_option("-o,--out", pre_out, "Output raw volume")->required();
    auto* o_clip = pre->add_option("--clip-limit", pre_clip, "Histogram clip limit (multiple of the mean bin count)");
    auto* o_tiles = pre->add_option("--tiles", pre_tiles, "Requested tiles per axis")->check(CLI::PositiveNumber);
    auto* o_bins = pre->add_option("--bins", pre_bins, "Histogram bins")->check(CLI::PositiveNumber);

    // train
    auto* tr = app.add_subcommand("train", "Fit the atlas model to a 4D series");
    std::string tr_data, tr_out, tr_resume;
    int tr_iters = 0, tr_stop = -1, tr_ckpt = 0, tr_progress = 100, tr_batch = 0;
    std::uint64_t tr_seed = 0;
    bool tr_no_svf = false, tr_no_int = false;
    tr->add_option("-d,--data", tr_data, "Input 4D volume (.raw or .nii)")->required();
    tr->add_option("-o,--out", tr_out, "Output directory")->required();
    tr->add_option("--resume", tr_resume, "Continue from a checkpoint");
    auto* o_iters = tr->add_option("--iterations", tr_iters, "Total iterations (sets the learning-rate schedule)");
    auto* o_stop = tr->add_option("--stop-after", tr_stop, "Stop at this iteration without changing the schedule");
    auto* o_tseed = tr->add_option("--seed", tr_seed, "Random seed");
    auto* o_ckpt = tr->add_option("--checkpoint-interval", tr_ckpt, "Write a checkpoint every N iterations");
    auto* o_batch = tr->add_option("--spatial-batch", tr_batch, "Spatial points per batch")->check(CLI::PositiveNumber);
    tr->add_option("--progress-interval", tr_progress, "Report progress on stderr every N iterations")->capture_default_str();
    tr->add_flag("--no-svf", tr_no_svf, "Use the registration field output directly as the displacement");
    tr->add_flag("--no-intensity-field", tr_no_int, "Disable the time-varying intensity field");

    // infer
    auto* inf = app.add_subcommand("infer", "Decode the atlas from a checkpoint");
    std::string inf_ckpt, inf_out;
    int inf_super = 0;
    bool inf_no_slices = false;
    inf->add_option("-c,--checkpoint", inf_ckpt, "Checkpoint file")->required();
    inf->add_option("-o,--out", inf_out, "Output atlas (.raw)")->required();
    auto* o_super = inf->add_option("--supersample", inf_super, "Atlas grid refinement factor")->check(CLI::PositiveNumber);
    inf->add_flag("--no-slices", inf_no_slices, "Skip the mid-plane PGM slices");

    // warp
    auto* wp = app.add_subcommand("warp", "Resample frames into atlas space");
    std::string wp_ckpt, wp_data, wp_out, wp_frame = "all";
    wp->add_option("-c,--checkpoint", wp_ckpt, "Checkpoint file")->required();
    wp->add_option("-d,--data", wp_data, "Input 4D volume (.raw or .nii)")->required();
    wp->add_option("-o,--out", wp_out, "Output raw volume")->required();
    wp->add_option("--frame", wp_frame, "Frame index, or 'all' for the stabilized series")->capture_default_str();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Pairwise LNCC / Dice and deformation statistics");
    std::string ev_ckpt, ev_data, ev_labels, ev_out;
    int ev_pairs = 0, ev_window = 0;
    std::uint64_t ev_seed = 0;
    ev->add_option("-c,--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("-d,--data", ev_data, "Input 4D volume (.raw or .nii)")->required();
    ev->add_option("-l,--labels", ev_labels, "Label volume aligned with the series");
    ev->add_option("-o,--out", ev_out, "Report JSON")->required();
    auto* o_pairs = ev->add_option("--pairs", ev_pairs, "Number of ordered frame pairs")->check(CLI::PositiveNumber);
    auto* o_window = ev->add_option("--window", ev_window, "LNCC window edge (odd)");
    auto* o_eseed = ev->add_option("--seed", ev_seed, "Pair sampling seed");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        RunConfig cfg = base_config(common);
        const int threads = resolve_threads(common.threads, common.strict);
        cfg.train.threads = threads;

        if (synth->parsed()) {
            if (o_size->count()) cfg.phantom.dims.x = cfg.phantom.dims.y = cfg.phantom.dims.z = synth_size;
            if (o_frames->count()) cfg.phantom.dims.t = synth_frames;
            override_if(o_amp, cfg.phantom.amplitude, synth_amp);
            override_if(o_noise, cfg.phantom.noise_sigma, synth_noise);
            cfg.validate();
            const fs::path dir(synth_out);
            ensure_dir(dir);
            const Phantom ph = synth_sequence(cfg.phantom, synth_seed);
            save_volume(ph.image, dir / "image.raw");
            save_labels(ph.labels, dir / "labels.raw");
            write_motion(ph.motion, dir / "motion.raw");
            save_run_config(cfg, dir / "config.json");
            err << "synth: wrote " << (dir / "image.raw").string() << '\n';
        } else if (pre->parsed()) {
            override_if(o_clip, cfg.clahe.clip_limit, pre_clip);
            if (o_tiles->count()) cfg.clahe.tiles = {pre_tiles, pre_tiles, pre_tiles};
            override_if(o_bins, cfg.clahe.bins, pre_bins);
            cfg.validate();
            const Volume4D in = load_volume(pre_in, format_from_path(pre_in));
            save_volume(clahe(in, cfg.clahe), pre_out);
        } else if (tr->parsed()) {
            const Volume4D data = load_volume(tr_data, format_from_path(tr_data));
            const fs::path dir(tr_out);
            TrainState state;
            if (!tr_resume.empty()) {
                state = load_checkpoint(tr_resume);
                state.train.threads = threads;
                state.train.stop_after = o_stop->count() ? tr_stop : -1;
                override_if(o_ckpt, state.train.checkpoint_interval, tr_ckpt);
                cfg.model = state.model;
                cfg.train = state.train;
            } else {
                override_if(o_iters, cfg.train.iterations, tr_iters);
                override_if(o_stop, cfg.train.stop_after, tr_stop);
                override_if(o_tseed, cfg.train.seed, tr_seed);
                override_if(o_ckpt, cfg.train.checkpoint_interval, tr_ckpt);
                override_if(o_batch, cfg.train.spatial_batch, tr_batch);
                if (tr_no_svf) cfg.model.use_svf = false;
                if (tr_no_int) cfg.model.use_intensity_field = false;
                cfg.validate();
                state = init_training(data, cfg.model, cfg.train);
            }
            ensure_dir(dir);
            save_run_config(cfg, dir / "config.json");
            std::ofstream log(dir / "train_log.jsonl", tr_resume.empty() ? std::ios::trunc : std::ios::app);
            if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());
            const auto ckpt = dir / "checkpoint.natc";
            TrainHooks hooks;
            hooks.on_step = [&](const LogRecord& r) {
                log << log_json(r).dump() << '\n';
                if (tr_progress > 0 && (r.iter % tr_progress == 0 || r.iter == state.train.iterations)) {
                    err << "iter " << r.iter << "/" << state.train.iterations << "  loss " << std::setprecision(5) << r.loss.total
                        << "  rec " << r.loss.rec << "  lr " << r.learning_rate << '\n';
                }
            };
            hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(s, ckpt); };
            run_training(state, data, hooks);
        } else if (inf->parsed()) {
            const TrainState state = load_checkpoint(inf_ckpt);
            const int super = o_super->count() ? inf_super : cfg.atlas.supersample;
            const Atlas atlas = infer_atlas(state.fields, atlas_grid(state.data_dims, super), state.data_dims.t, threads);
            export_atlas(atlas, inf_out, !inf_no_slices);
        } else if (wp->parsed()) {
            const TrainState state = load_checkpoint(wp_ckpt);
            const Volume4D data = load_volume(wp_data, format_from_path(wp_data));
            if (!data.dims.same_space(state.data_dims)) throw DataError("warp: data dims differ from the training data");
            const Dims4 grid{data.dims.x, data.dims.y, data.dims.z, 1};
            if (wp_frame == "all") {
                Volume4D series(data.dims, data.spacing);
                for (int t = 0; t < data.dims.t; ++t) series.set_frame(t, warp_image_to_atlas(state.fields, data, t, grid));
                save_volume(series, wp_out);
            } else {
                int t = -1;
                try {
                    t = std::stoi(wp_frame);
                } catch (const std::exception&) {
                    throw ConfigError("--frame must be an integer or 'all'");
                }
                if (t < 0 || t >= data.dims.t) throw ConfigError("--frame out of range");
                save_volume(warp_image_to_atlas(state.fields, data, t, grid), wp_out);
            }
        } else if (ev->parsed()) {
            override_if(o_pairs, cfg.eval.n_pairs, ev_pairs);
            override_if(o_window, cfg.eval.window, ev_window);
            override_if(o_eseed, cfg.eval.seed, ev_seed);
            cfg.validate();
            const TrainState state = load_checkpoint(ev_ckpt);
            const Volume4D data = load_volume(ev_data, format_from_path(ev_data));
            std::optional<LabelVolume4D> labels;
            if (!ev_labels.empty()) labels = load_labels(ev_labels, format_from_path(ev_labels));
            const EvalReport report = evaluate_pairs(state.fields, data, labels ? &*labels : nullptr, cfg.eval, threads);
            write_report(report, ev_out);
            err << "lncc " << report.lncc_mean << " (unaligned " << report.lncc_unaligned_mean << ")\n";
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace natlas
