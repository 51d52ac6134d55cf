#include "natlas/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "natlas/atlas.hpp"
#include "natlas/config.hpp"
#include "natlas/parallel.hpp"
#include "natlas/random.hpp"

namespace natlas {

void EvalConfig::validate() const {
    if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
    if (window < 3 || window % 2 == 0) throw ConfigError("LNCC window must be odd and >= 3");
    for (int l : labels) {
        if (l < 1 || l > 255) throw ConfigError("labels must be in [1,255]");
    }
}

namespace {

/// Summed-volume table with a zero border: S(i,j,k) = sum over [0,i) x [0,j) x [0,k).
class BoxSum {
public:
    BoxSum(const Dims4& d, const std::vector<double>& v) : nx_(d.x + 1), ny_(d.y + 1), s_(std::size_t(nx_) * ny_ * (d.z + 1), 0.0) {
        for (int k = 0; k < d.z; ++k)
            for (int j = 0; j < d.y; ++j)
                for (int i = 0; i < d.x; ++i) {
                    const double x = v[std::size_t(i) + std::size_t(d.x) * (std::size_t(j) + std::size_t(d.y) * k)];
                    at(i + 1, j + 1, k + 1) = x + at(i, j + 1, k + 1) + at(i + 1, j, k + 1) + at(i + 1, j + 1, k) -
                                              at(i, j, k + 1) - at(i, j + 1, k) - at(i + 1, j, k) + at(i, j, k);
                }
    }

    /// Sum over [lo, hi) per axis.
    double box(const std::array<int, 3>& lo, const std::array<int, 3>& hi) const {
        return at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) - at(hi[0], hi[1], lo[2]) +
               at(lo[0], lo[1], hi[2]) + at(lo[0], hi[1], lo[2]) + at(hi[0], lo[1], lo[2]) - at(lo[0], lo[1], lo[2]);
    }

private:
    double& at(int i, int j, int k) { return s_[std::size_t(i) + std::size_t(nx_) * (std::size_t(j) + std::size_t(ny_) * k)]; }
    double at(int i, int j, int k) const { return s_[std::size_t(i) + std::size_t(nx_) * (std::size_t(j) + std::size_t(ny_) * k)]; }

    int nx_, ny_;
    std::vector<double> s_;
};

constexpr double kLnccEps = 1e-8;
constexpr double kFlatVariance = 1e-12;

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

double lncc(const Volume4D& a, const Volume4D& b, int window, std::span<const std::uint8_t> mask) {
    if (!a.dims.same_space(b.dims)) throw DataError("lncc: dims mismatch");
    if (window < 1 || window % 2 == 0) throw DataError("lncc: window must be odd");
    const Dims4 d = a.dims;
    const std::size_t n = d.spatial();
    if (!mask.empty() && mask.size() != n) throw DataError("lncc: mask size mismatch");
    std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        va[i] = a.data[i];
        vb[i] = b.data[i];
        aa[i] = va[i] * va[i];
        bb[i] = vb[i] * vb[i];
        ab[i] = va[i] * vb[i];
    }
    const BoxSum sa(d, va), sb(d, vb), saa(d, aa), sbb(d, bb), sab(d, ab);
    const int r = window / 2;
    const std::array<int, 3> ext{d.x, d.y, d.z};
    double total = 0;
    std::size_t count = 0;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const std::size_t idx = std::size_t(i) + std::size_t(d.x) * (std::size_t(j) + std::size_t(d.y) * k);
                if (!mask.empty() && !mask[idx]) continue;
                const std::array<int, 3> c{i, j, k};
                std::array<int, 3> lo{}, hi{};
                for (int ax = 0; ax < 3; ++ax) {
                    lo[ax] = std::max(0, c[ax] - r);
                    hi[ax] = std::min(ext[ax], c[ax] + r + 1);
                }
                const double m = double(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
                const double sum_a = sa.box(lo, hi), sum_b = sb.box(lo, hi);
                const double var_a = std::max(0.0, saa.box(lo, hi) - sum_a * sum_a / m);
                const double var_b = std::max(0.0, sbb.box(lo, hi) - sum_b * sum_b / m);
                if (var_a / m <= kFlatVariance && var_b / m <= kFlatVariance) continue;
                const double cross = sab.box(lo, hi) - sum_a * sum_b / m;
                total += std::clamp(cross / (std::sqrt(var_a * var_b) + kLnccEps), -1.0, 1.0);
                ++count;
            }
    return count ? total / double(count) : 0.0;
}

std::optional<double> dice(const LabelVolume4D& a, const LabelVolume4D& b, int label) {
    if (!a.dims.same_space(b.dims)) throw DataError("dice: dims mismatch");
    const std::size_t n = a.dims.spatial();
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool ia = a.data[i] == label, ib = b.data[i] == label;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return std::nullopt;
    return 2.0 * double(both) / double(na + nb);
}

WeightedDice weighted_dice(const LabelVolume4D& predicted, const LabelVolume4D& reference, std::span<const int> labels) {
    if (!predicted.dims.same_space(reference.dims)) throw DataError("weighted_dice: dims mismatch");
    const std::size_t n = reference.dims.spatial();
    std::set<int> use(labels.begin(), labels.end());
    if (use.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            if (predicted.data[i]) use.insert(predicted.data[i]);
            if (reference.data[i]) use.insert(reference.data[i]);
        }
    }
    std::map<int, std::size_t> ref_count;
    for (std::size_t i = 0; i < n; ++i) ref_count[reference.data[i]]++;

    WeightedDice out;
    double weight_sum = 0, acc = 0;
    for (int l : use) {
        const auto d = dice(predicted, reference, l);
        if (!d) {
            std::cerr << "warning: label " << l << " absent from both volumes; skipped\n";
            continue;
        }
        out.per_label[l] = *d;
        const double w = double(ref_count[l]);
        acc += w * *d;
        weight_sum += w;
    }
    out.weighted = weight_sum > 0 ? acc / weight_sum : 0.0;
    return out;
}

std::vector<std::pair<int, int>> sample_pairs(int frames, int n_pairs, std::uint64_t seed) {
    std::vector<std::pair<int, int>> all;
    for (int i = 0; i < frames; ++i)
        for (int j = 0; j < frames; ++j)
            if (i != j) all.emplace_back(i, j);
    const std::size_t take = std::min(all.size(), std::size_t(std::max(n_pairs, 0)));
    Rng rng(seed);
    for (std::size_t m = 0; m < take; ++m) {
        const std::size_t r = m + std::size_t(rng.below(all.size() - m));
        std::swap(all[m], all[r]);
    }
    all.resize(take);
    return all;
}

EvalReport evaluate_pairs(const FieldSet& fs, const Volume4D& volume, const LabelVolume4D* labels, const EvalConfig& cfg,
                          int threads) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const Dims4 d = volume.dims;
    if (d.t < 2) throw DataError("evaluate_pairs needs at least two frames");
    if (labels && !(labels->dims == d)) throw DataError("evaluate_pairs: label volume does not match the image series");
    const Dims4 grid{d.x, d.y, d.z, 1};

    EvalReport report;
    report.config = cfg;
    const auto pairs = sample_pairs(d.t, cfg.n_pairs, cfg.seed);

    std::vector<char> need_fwd(std::size_t(d.t), 0), need_inv(std::size_t(d.t), 0);
    for (const auto& [i, j] : pairs) {
        need_inv[std::size_t(i)] = 1;
        need_fwd[std::size_t(j)] = 1;
    }
    std::vector<DenseDeformation> fwd(std::size_t(d.t)), inv(std::size_t(d.t));
    run_chunks(std::size_t(d.t), threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t t = b; t < e; ++t) {
            const double tw = time_to_world(int(t), d.t);
            if (need_fwd[t]) fwd[t] = model_deformation(fs, grid, tw, Direction::forward);
            if (need_inv[t]) inv[t] = model_deformation(fs, grid, tw, Direction::inverse);
        }
    });

    report.per_pair.resize(pairs.size());
    std::vector<std::map<int, double>> pair_labels(pairs.size());
    run_chunks(pairs.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            const auto [i, j] = pairs[p];
            const auto map = compose(inv[std::size_t(i)], fwd[std::size_t(j)]);
            const Volume4D warped = resample(volume, i, map);
            const Volume4D target = volume.frame(j);
            const Volume4D source = volume.frame(i);
            PairResult r;
            r.source = i;
            r.target = j;
            if (labels) {
                const LabelVolume4D target_labels = labels->frame(j);
                std::vector<std::uint8_t> mask(grid.spatial());
                for (std::size_t v = 0; v < mask.size(); ++v) mask[v] = target_labels.data[v] > 0;
                LabelVolume4D warped_labels(grid, labels->spacing);
                for (int k = 0; k < d.z; ++k)
                    for (int jj = 0; jj < d.y; ++jj)
                        for (int ii = 0; ii < d.x; ++ii) {
                            const Vec3 q = voxel_center(grid, ii, jj, k) + map.at(ii, jj, k);
                            warped_labels.at(ii, jj, k) = nearest_label(*labels, i, q);
                        }
                r.lncc = lncc(warped, target, cfg.window, mask);
                r.lncc_unaligned = lncc(source, target, cfg.window, mask);
                const auto wd = weighted_dice(warped_labels, target_labels, cfg.labels);
                r.wdice = wd.weighted;
                pair_labels[p] = wd.per_label;
                r.wdice_unaligned = weighted_dice(labels->frame(i), target_labels, cfg.labels).weighted;
            } else {
                r.lncc = lncc(warped, target, cfg.window);
                r.lncc_unaligned = lncc(source, target, cfg.window);
            }
            report.per_pair[p] = r;
        }
    });

    std::vector<double> l, lu, w, wu;
    for (const auto& r : report.per_pair) {
        l.push_back(r.lncc);
        lu.push_back(r.lncc_unaligned);
        if (r.wdice) w.push_back(*r.wdice);
        if (r.wdice_unaligned) wu.push_back(*r.wdice_unaligned);
    }
    report.lncc_mean = mean_of(l);
    report.lncc_sd = sd_of(l);
    report.lncc_unaligned_mean = mean_of(lu);
    report.lncc_unaligned_sd = sd_of(lu);
    if (!w.empty()) {
        report.wdice_mean = mean_of(w);
        report.wdice_sd = sd_of(w);
        report.wdice_unaligned_mean = mean_of(wu);
    }
    std::map<int, std::vector<double>> per_label;
    for (const auto& m : pair_labels)
        for (const auto& [lab, v] : m) per_label[lab].push_back(v);
    for (const auto& [lab, v] : per_label) report.per_label_dice[lab] = mean_of(v);
    report.deformation = deformation_stats(fs, grid, d.t, threads);
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

DeformationStats deformation_stats(std::span<const DenseDeformation> fields) {
    DeformationStats s;
    if (fields.empty()) return s;
    double u_sum = 0, det_sum = 0, fold_sum = 0;
    std::size_t count = 0;
    for (const auto& f : fields) {
        const Dims4 d = f.dims;
        for (int k = 1; k + 1 < d.z; ++k)
            for (int j = 1; j + 1 < d.y; ++j)
                for (int i = 1; i + 1 < d.x; ++i) {
                    u_sum += norm(f.at(i, j, k));
                    det_sum += determinant(jacobian_at(f, i, j, k));
                    ++count;
                }
        fold_sum += folding_ratio(f);
    }
    if (count) {
        s.u_norm = u_sum / double(count);
        s.det_j = det_sum / double(count);
    }
    s.fold_ratio = fold_sum / double(fields.size());
    return s;
}

DeformationStats deformation_stats(const FieldSet& fs, const Dims4& grid, int frames, int threads) {
    std::vector<DenseDeformation> fields(static_cast<std::size_t>(frames));
    run_chunks(std::size_t(frames), threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t t = b; t < e; ++t) {
            fields[t] = model_deformation(fs, {grid.x, grid.y, grid.z, 1}, time_to_world(int(t), frames), Direction::forward);
        }
    });
    return deformation_stats(fields);
}

double motion_recovery_error(const FieldSet& fs, const VectorSeries& motion, const LabelVolume4D& labels, int threads) {
    const Dims4 d = motion.dims;
    if (!(labels.dims == d)) throw DataError("motion_recovery_error: label volume does not match the motion series");
    const Dims4 grid{d.x, d.y, d.z, 1};
    const std::size_t n = d.spatial();
    const Vec3 scale{double(std::max(d.x - 1, 1)), double(std::max(d.y - 1, 1)), double(std::max(d.z - 1, 1))};

    std::vector<std::vector<Vec3>> diff(std::size_t(d.t), std::vector<Vec3>(n));
    run_chunks(std::size_t(d.t), threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t t = b; t < e; ++t) {
            const auto u = model_deformation(fs, grid, time_to_world(int(t), d.t), Direction::forward);
            for (std::size_t v = 0; v < n; ++v) {
                const Vec3& g = motion.data[t * n + v];
                for (int a = 0; a < 3; ++a) diff[t][v][a] = u.disp[v][a] * scale[a] - g[a];
            }
        }
    });
    std::vector<Vec3> mean(n, Vec3{0, 0, 0});
    for (const auto& f : diff)
        for (std::size_t v = 0; v < n; ++v) mean[v] = mean[v] + f[v];
    for (auto& m : mean) m = (1.0 / double(d.t)) * m;

    double total = 0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < std::size_t(d.t); ++t)
        for (std::size_t v = 0; v < n; ++v) {
            if (!labels.data[t * n + v]) continue;
            total += norm(diff[t][v] - mean[v]);
            ++count;
        }
    return count ? total / double(count) : 0.0;
}

// ---- report JSON ------------------------------------------------------------

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["config"] = to_json(r.config);
    j["per_pair"] = nlohmann::json::array();
    for (const auto& p : r.per_pair) {
        j["per_pair"].push_back({{"source", p.source},
                                 {"target", p.target},
                                 {"lncc", p.lncc},
                                 {"lncc_unaligned", p.lncc_unaligned},
                                 {"wdice", opt(p.wdice)},
                                 {"wdice_unaligned", opt(p.wdice_unaligned)}});
    }
    nlohmann::json per_label = nlohmann::json::object();
    for (const auto& [l, v] : r.per_label_dice) per_label[std::to_string(l)] = v;
    j["summary"] = {{"lncc_mean", r.lncc_mean},
                    {"lncc_sd", r.lncc_sd},
                    {"lncc_unaligned_mean", r.lncc_unaligned_mean},
                    {"lncc_unaligned_sd", r.lncc_unaligned_sd},
                    {"wdice_mean", opt(r.wdice_mean)},
                    {"wdice_sd", opt(r.wdice_sd)},
                    {"wdice_unaligned_mean", opt(r.wdice_unaligned_mean)},
                    {"per_label_dice", per_label},
                    {"u_norm", r.deformation.u_norm},
                    {"det_j", r.deformation.det_j},
                    {"fold_ratio", r.deformation.fold_ratio},
                    {"runtime_seconds", r.runtime_seconds}};
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    const auto errors = validate_report(j);
    if (!errors.empty()) throw FormatError("invalid report: " + errors.front());
    EvalReport r;
    r.config = eval_config_from_json(j.at("config"));
    for (const auto& p : j.at("per_pair")) {
        PairResult pr;
        pr.source = p.at("source").get<int>();
        pr.target = p.at("target").get<int>();
        pr.lncc = p.at("lncc").get<double>();
        pr.lncc_unaligned = p.at("lncc_unaligned").get<double>();
        pr.wdice = opt_from(p.at("wdice"));
        pr.wdice_unaligned = opt_from(p.at("wdice_unaligned"));
        r.per_pair.push_back(pr);
    }
    const auto& s = j.at("summary");
    r.lncc_mean = s.at("lncc_mean").get<double>();
    r.lncc_sd = s.at("lncc_sd").get<double>();
    r.lncc_unaligned_mean = s.at("lncc_unaligned_mean").get<double>();
    r.lncc_unaligned_sd = s.at("lncc_unaligned_sd").get<double>();
    r.wdice_mean = opt_from(s.at("wdice_mean"));
    r.wdice_sd = opt_from(s.at("wdice_sd"));
    r.wdice_unaligned_mean = opt_from(s.at("wdice_unaligned_mean"));
    for (const auto& [k, v] : s.at("per_label_dice").items()) r.per_label_dice[std::stoi(k)] = v.get<double>();
    r.deformation.u_norm = s.at("u_norm").get<double>();
    r.deformation.det_j = s.at("det_j").get<double>();
    r.deformation.fold_ratio = s.at("fold_ratio").get<double>();
    r.runtime_seconds = s.at("runtime_seconds").get<double>();
    return r;
}

std::vector<std::string> validate_report(const nlohmann::json& j) {
    std::vector<std::string> errors;
    auto need = [&](const nlohmann::json& obj, const std::string& path, const char* key, auto&& check, const char* what) {
        if (!obj.is_object() || !obj.contains(key)) {
            errors.push_back(path + key + ": missing");
        } else if (!check(obj.at(key))) {
            errors.push_back(path + key + ": expected " + what);
        }
    };
    const auto number = [](const nlohmann::json& v) { return v.is_number(); };
    const auto integer = [](const nlohmann::json& v) { return v.is_number_integer(); };
    const auto number_or_null = [](const nlohmann::json& v) { return v.is_number() || v.is_null(); };
    const auto object = [](const nlohmann::json& v) { return v.is_object(); };
    const auto array = [](const nlohmann::json& v) { return v.is_array(); };
    const auto unit = [](const nlohmann::json& v) { return v.is_number() && v.get<double>() >= -1.0 && v.get<double>() <= 1.0; };
    const auto prob = [](const nlohmann::json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; };
    const auto prob_or_null = [&](const nlohmann::json& v) { return v.is_null() || prob(v); };

    if (!j.is_object()) return {"report: expected an object"};
    need(j, "", "config", object, "object");
    need(j, "", "per_pair", array, "array");
    need(j, "", "summary", object, "object");
    if (j.contains("per_pair") && j["per_pair"].is_array()) {
        for (std::size_t i = 0; i < j["per_pair"].size(); ++i) {
            const auto& p = j["per_pair"][i];
            const std::string path = "per_pair[" + std::to_string(i) + "].";
            need(p, path, "source", integer, "integer");
            need(p, path, "target", integer, "integer");
            need(p, path, "lncc", unit, "number in [-1,1]");
            need(p, path, "lncc_unaligned", unit, "number in [-1,1]");
            need(p, path, "wdice", prob_or_null, "number in [0,1] or null");
            need(p, path, "wdice_unaligned", prob_or_null, "number in [0,1] or null");
        }
    }
    if (j.contains("summary") && j["summary"].is_object()) {
        const auto& s = j["summary"];
        const std::string path = "summary.";
        need(s, path, "lncc_mean", unit, "number in [-1,1]");
        need(s, path, "lncc_sd", number, "number");
        need(s, path, "lncc_unaligned_mean", unit, "number in [-1,1]");
        need(s, path, "lncc_unaligned_sd", number, "number");
        need(s, path, "wdice_mean", prob_or_null, "number in [0,1] or null");
        need(s, path, "wdice_sd", number_or_null, "number or null");
        need(s, path, "wdice_unaligned_mean", prob_or_null, "number in [0,1] or null");
        need(s, path, "per_label_dice", object, "object");
        need(s, path, "u_norm", number, "number");
        need(s, path, "det_j", number, "number");
        need(s, path, "fold_ratio", prob, "number in [0,1]");
        need(s, path, "runtime_seconds", number, "number");
    }
    return errors;
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report to " + path.string());
    out << to_json(r).dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace natlas
