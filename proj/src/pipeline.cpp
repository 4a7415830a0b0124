#include "hsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hsr/csv.hpp"
#include "hsr/ga_select.hpp"
#include "hsr/hypercube.hpp"
#include "hsr/segmentation.hpp"
#include "hsr/shap.hpp"
#include "hsr/synth.hpp"
#include "hsr/viz.hpp"

namespace hsr {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void note(const PipelineContext& ctx, const std::string& msg) {
    if (ctx.log) *ctx.log << msg << std::endl;
}

void require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) {
        throw Error("missing " + path.string() + "; run `hsr_cli " + producer + "` first");
    }
}

std::string scene_id(std::size_t i) {
    std::string n = std::to_string(i);
    return "s" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

struct Manifest {
    std::vector<std::string> ids;
    std::vector<double> attributes;
};

Manifest read_manifest(const PipelineContext& ctx) {
    const auto path = ctx.path("manifest.csv");
    require(path, "synth");
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"id", "attribute"}) {
        throw Error(path.string() + ": expected header 'id,attribute'");
    }
    Manifest m;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 2) throw Error(path.string() + ": malformed row " + std::to_string(i));
        m.ids.push_back(rows[i][0]);
        m.attributes.push_back(parse_number(rows[i][1]));
    }
    return m;
}

SceneConfig scene_config(const Config& cfg) {
    SceneConfig s;
    s.height = cfg.get_size("synth", "height", s.height);
    s.width = cfg.get_size("synth", "width", s.width);
    s.bands = cfg.get_size("synth", "bands", s.bands);
    s.wl_min = cfg.get_double("synth", "wl_min", s.wl_min);
    s.wl_max = cfg.get_double("synth", "wl_max", s.wl_max);
    s.endmembers = cfg.get_size("synth", "endmembers", s.endmembers);
    s.endmember_seed = static_cast<std::uint64_t>(cfg.get_int("synth", "endmember_seed",
                                                              static_cast<std::int64_t>(s.endmember_seed)));
    s.noise_sd = cfg.get_double("synth", "noise_sd", s.noise_sd);
    s.planted_depth = cfg.get_double("synth", "planted_depth", s.planted_depth);
    if (cfg.has("synth", "planted_bands")) {
        s.planted_bands.clear();
        for (double b : cfg.get_doubles("synth", "planted_bands", {})) s.planted_bands.push_back(static_cast<std::size_t>(b));
    }
    s.texture_max = cfg.get_double("synth", "texture_max", s.texture_max);
    s.mix_texture = cfg.get_double("synth", "mix_texture", s.mix_texture);
    s.pigment_strength = cfg.get_double("synth", "pigment_strength", s.pigment_strength);
    s.pigment_cutoff = cfg.get_double("synth", "pigment_cutoff", s.pigment_cutoff);
    s.falloff_max = cfg.get_double("synth", "falloff_max", s.falloff_max);
    s.background = cfg.get_double("synth", "background", s.background);
    s.validate();
    return s;
}

SplitAssignment read_split(const PipelineContext& ctx, const Manifest& m) {
    const auto path = ctx.path("split.csv");
    require(path, "extract-spectra");
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"id", "set"}) throw Error(path.string() + ": expected header 'id,set'");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.ids.size(); ++i) index[m.ids[i]] = i;
    SplitAssignment s;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto it = index.find(rows[r].at(0));
        if (it == index.end()) throw Error(path.string() + ": unknown id " + rows[r][0]);
        const std::string& set = rows[r].at(1);
        if (set == "train") s.train.push_back(it->second);
        else if (set == "validation") s.validation.push_back(it->second);
        else if (set == "test") s.test.push_back(it->second);
        else throw Error(path.string() + ": unknown set '" + set + "'");
    }
    return s;
}

fs::path bil_of(const PipelineContext& ctx, const std::string& dir, const std::string& id) {
    return bil_header_path(ctx.path(dir + "/" + id));
}

Hypercube load_reflectance(const PipelineContext& ctx, const std::string& id) {
    const auto p = bil_of(ctx, "reflectance", id);
    require(p, "calibrate");
    return read_bil(p);
}

Mask load_mask(const PipelineContext& ctx, const std::string& id) {
    const auto p = ctx.path("masks/" + id + ".pbm");
    require(p, "segment");
    return read_pbm(p);
}

RgbImage load_rgb(const PipelineContext& ctx, const std::string& id) {
    const auto p = ctx.path("rgb/" + id + ".ppm");
    require(p, "extract-spectra");
    return read_ppm(p);
}

std::vector<double> load_ga_wavelengths(const PipelineContext& ctx) {
    const auto p = ctx.path("ga/wavelengths.txt");
    require(p, "ga-select");
    return read_wavelength_list(p);
}

SpectraTable load_table(const PipelineContext& ctx, const std::string& rel, const std::string& producer) {
    const auto p = ctx.path(rel);
    require(p, producer);
    return read_table_csv(p);
}

std::vector<std::size_t> column_indices(const std::vector<double>& axis, const std::vector<double>& targets) {
    std::vector<std::size_t> out;
    for (double t : targets) out.push_back(band_index_nearest(axis, t));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::size_t plsr_max_lv(const PipelineContext& ctx) { return ctx.config.get_size("plsr", "max_lv", 10); }

fs::path model_dir(const PipelineContext& ctx, Architecture arch) { return ctx.path("models/" + architecture_slug(arch)); }

ReconNetwork load_network(const PipelineContext& ctx, Architecture arch, std::vector<double>* wavelengths) {
    const auto dir = model_dir(ctx, arch);
    require(dir / "params.txt", "train-recon --arch " + architecture_slug(arch));
    const ModelSpec spec = read_model_spec(dir / "spec.txt", wavelengths);
    ReconNetwork net(spec, 0);
    net.params().load(dir / "params.txt");
    return net;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

// ---- subcommands -------------------------------------------------------------

void cmd_synth(PipelineContext& ctx) {
    const SceneConfig sc = scene_config(ctx.config);
    const std::size_t n = ctx.config.get_size("synth", "scenes", 60);
    if (n == 0) throw Error("[synth] scenes must be positive");
    const std::uint64_t seed = ctx.seed("synth", 1);
    const auto scenes = generate_dataset(n, sc, seed);
    const References refs = make_references(sc.height, sc.width, sc.wavelengths(), derive_seed(seed, 0xFFFFFFFFULL));
    write_bil(refs.white, ctx.path("raw/white"));
    write_bil(refs.dark, ctx.path("raw/dark"));
    CsvWriter manifest(ctx.path("manifest.csv"));
    manifest.row({"id", "attribute"});
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = scene_id(i);
        write_bil(simulate_raw(scenes[i].cube, refs), ctx.path("raw/" + id));
        write_pbm(scenes[i].mask, ctx.path("truth/" + id + ".pbm"));
        manifest.row({id, format_number(scenes[i].attribute)});
    }
    note(ctx, "synth: " + std::to_string(n) + " scenes in " + ctx.path("raw").string());
}

void cmd_calibrate(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    require(bil_of(ctx, "raw", "white"), "synth");
    require(bil_of(ctx, "raw", "dark"), "synth");
    const Hypercube white = read_bil(bil_of(ctx, "raw", "white"));
    const Hypercube dark = read_bil(bil_of(ctx, "raw", "dark"));
    CalibrationOptions opt;
    opt.clamp_max = ctx.config.get_double("calibrate", "clamp_max", opt.clamp_max);
    CsvWriter log(ctx.path("calibration.csv"));
    log.row({"id", "clamped_low", "clamped_high"});
    for (const auto& id : m.ids) {
        require(bil_of(ctx, "raw", id), "synth");
        const Calibrated c = calibrate_reflectance(read_bil(bil_of(ctx, "raw", id)), white, dark, opt);
        write_bil(c.cube, ctx.path("reflectance/" + id));
        log.row({id, std::to_string(c.clamped_low), std::to_string(c.clamped_high)});
    }
    note(ctx, "calibrate: " + std::to_string(m.ids.size()) + " cubes");
}

double iou(const Mask& a, const Mask& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits().size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

void cmd_segment(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const double wl_a = ctx.config.get_double("segment", "band_a", 800.0);
    const double wl_b = ctx.config.get_double("segment", "band_b", 450.0);
    MaskOptions opt;
    const std::string thr = ctx.config.get_string("segment", "threshold", "otsu");
    if (thr != "otsu") opt.threshold = ctx.config.get_double("segment", "threshold", 0.0);
    opt.largest_component = ctx.config.get_bool("segment", "largest_component", true);
    CsvWriter log(ctx.path("segmentation.csv"));
    log.row({"id", "foreground", "truth_iou"});
    for (const auto& id : m.ids) {
        const Hypercube cube = load_reflectance(ctx, id);
        const Mask mask = band_difference_mask(cube, wl_a, wl_b, opt);
        if (mask.count() == 0) throw DegenerateMaskError("segment: empty mask for " + id + "; adjust [segment] settings");
        write_pbm(mask, ctx.path("masks/" + id + ".pbm"));
        const auto truth = ctx.path("truth/" + id + ".pbm");
        const std::string score = fs::exists(truth) ? format_fixed(iou(mask, read_pbm(truth)), 6) : "";
        log.row({id, std::to_string(mask.count()), score});
    }
    note(ctx, "segment: " + std::to_string(m.ids.size()) + " masks");
}

void cmd_extract_spectra(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const std::array<double, 3> ratios{ctx.config.get_double("split", "train", 0.6),
                                       ctx.config.get_double("split", "validation", 0.2),
                                       ctx.config.get_double("split", "test", 0.2)};
    const SplitAssignment split = random_split(m.ids.size(), ratios, ctx.seed("split", 1));
    std::vector<std::string> set_of(m.ids.size());
    for (auto i : split.train) set_of[i] = "train";
    for (auto i : split.validation) set_of[i] = "validation";
    for (auto i : split.test) set_of[i] = "test";
    CsvWriter sp(ctx.path("split.csv"));
    sp.row({"id", "set"});
    for (std::size_t i = 0; i < m.ids.size(); ++i) sp.row({m.ids[i], set_of[i]});

    const double gamma = ctx.config.get_double("rgb", "gamma", 1.4);
    SpectraTable gt, rgb;
    gt.ids = rgb.ids = m.ids;
    gt.y = rgb.y = Eigen::Map<const Eigen::VectorXd>(m.attributes.data(), static_cast<Eigen::Index>(m.attributes.size()));
    const RgbBands bands;
    rgb.wavelengths = {bands.blue_nm, bands.green_nm, bands.red_nm};
    rgb.X.resize(static_cast<Eigen::Index>(m.ids.size()), 3);
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
        const Hypercube cube = load_reflectance(ctx, m.ids[i]);
        const Mask mask = load_mask(ctx, m.ids[i]);
        const Spectrum s = mean_spectrum(cube, mask);
        if (i == 0) {
            gt.wavelengths = s.wavelengths;
            gt.X.resize(static_cast<Eigen::Index>(m.ids.size()), static_cast<Eigen::Index>(s.values.size()));
        }
        for (std::size_t b = 0; b < s.values.size(); ++b) gt.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = s.values[b];

        const RgbImage img = render_rgb(cube, gamma, bands);
        write_ppm(img, ctx.path("rgb/" + m.ids[i] + ".ppm"));
        double sum[3] = {0, 0, 0};
        for (std::size_t r = 0; r < img.height; ++r)
            for (std::size_t c = 0; c < img.width; ++c)
                if (mask.at(r, c))
                    for (std::size_t ch = 0; ch < 3; ++ch) sum[ch] += img.at(r, c, ch) / 255.0;
        const double cnt = static_cast<double>(mask.count());
        // columns ascend in wavelength: blue, green, red
        for (std::size_t j = 0; j < 3; ++j) rgb.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sum[2 - j] / cnt;
    }
    write_table_csv(gt, ctx.path("spectra/gt_full.csv"));
    write_table_csv(rgb, ctx.path("spectra/rgb.csv"));
    note(ctx, "extract-spectra: split " + std::to_string(split.train.size()) + "/" +
                  std::to_string(split.validation.size()) + "/" + std::to_string(split.test.size()));
}

void cmd_ga_select(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    const SpectraTable table = load_table(ctx, "spectra/gt_full.csv", "extract-spectra").rows(split.train);
    GaConfig g;
    g.population_size = ctx.config.get_size("ga", "population", g.population_size);
    g.generations = ctx.config.get_size("ga", "generations", g.generations);
    g.tournament_size = ctx.config.get_size("ga", "tournament", g.tournament_size);
    g.mutation_rate = ctx.config.get_double("ga", "mutation_rate", g.mutation_rate);
    g.elitism_rate = ctx.config.get_double("ga", "elitism_rate", g.elitism_rate);
    g.min_bands = ctx.config.get_size("ga", "min_bands", 7);
    g.max_bands = ctx.config.get_size("ga", "max_bands", 7);
    g.cv_folds = ctx.config.get_size("ga", "cv_folds", g.cv_folds);
    g.max_lv = ctx.config.get_size("ga", "max_lv", g.max_lv);
    g.seed = ctx.seed("ga", 1);
    const GaResult r = run_ga(table, g);
    write_ga_result(r, ctx.path("ga/history.csv"), ctx.path("ga/wavelengths.txt"));
    std::string wl;
    for (double w : r.selected_wavelengths) wl += (wl.empty() ? "" : " ") + format_number(w);
    note(ctx, "ga-select: " + wl + " nm, fitness " + format_number(r.best_fitness));
}

void cmd_fit_plsr(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    const SpectraTable full = load_table(ctx, "spectra/gt_full.csv", "extract-spectra");
    const SpectraTable ga = full.columns(column_indices(full.wavelengths, load_ga_wavelengths(ctx)));
    for (const auto& [name, table] : {std::pair<std::string, const SpectraTable&>{"full", full}, {"ga", ga}}) {
        PlsrModel model;
        const PlsrSummary s = fit_and_summarize(table, split, plsr_max_lv(ctx), &model);
        write_model(model, table.wavelengths, ctx.path("plsr/" + name + "_model.txt"));
        write_plsr_summary(s, ctx.path("plsr/" + name + "_metrics.csv"));
        note(ctx, "fit-plsr " + name + ": LV " + std::to_string(s.lv) + ", R2p " + format_fixed(s.r2p, 4));
    }
}

void cmd_shap(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    const auto model_path = ctx.path("plsr/ga_model.txt");
    require(model_path, "fit-plsr");
    std::vector<double> wl;
    const PlsrModel model = read_model(model_path, &wl);
    const SpectraTable full = load_table(ctx, "spectra/gt_full.csv", "extract-spectra");
    const SpectraTable t = full.columns(column_indices(full.wavelengths, wl));
    const ShapReport rep = mean_abs_shap(model, t.rows(split.train).X, t.rows(split.test).X, t.wavelengths);
    write_importance_csv(rep, ctx.path("shap/importance.csv"));
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& f : rep.ranking) {
        labels.push_back(format_number(f.wavelength) + " nm");
        values.push_back(f.mean_abs_shap);
    }
    bar_chart_svg(labels, values, ctx.path("shap/importance.svg"), "mean |SHAP|");
    note(ctx, "shap: top feature " + labels.front());
}

std::vector<ImagePair> load_pairs(const PipelineContext& ctx, const Manifest& m, const std::vector<std::size_t>& which,
                                  const std::vector<double>& wavelengths) {
    std::vector<ImagePair> out;
    for (auto i : which) {
        const Hypercube gt = select_bands(load_reflectance(ctx, m.ids[i]), wavelengths);
        out.push_back(make_image_pair(load_rgb(ctx, m.ids[i]), gt, load_mask(ctx, m.ids[i])));
    }
    return out;
}

void cmd_train_recon(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    const std::vector<double> wl = load_ga_wavelengths(ctx);
    const auto training = load_pairs(ctx, m, split.train, wl);
    const auto validation = load_pairs(ctx, m, split.validation, wl);
    for (Architecture arch : selected_architectures(ctx)) {
        const std::string slug = architecture_slug(arch);
        const ModelSpec spec = model_spec_from_config(ctx.config, arch, wl.size());
        const TrainConfig tc = train_config_from_config(ctx, arch);
        ReconNetwork net(spec, derive_seed(tc.seed, 1));
        note(ctx, "train-recon " + slug + ": " + std::to_string(net.params().scalar_count()) + " parameters, " +
                      std::to_string(tc.epochs) + " x " + std::to_string(tc.iterations_per_epoch) + " iterations");
        const TrainHistory h = train(net, training, validation, tc, [&](const EpochRecord& e) {
            note(ctx, "  " + slug + " epoch " + std::to_string(e.epoch) + " loss " + format_fixed(e.loss, 5) +
                          (e.val_mrae ? " val_mrae " + format_fixed(*e.val_mrae, 5) : ""));
        });
        const auto dir = model_dir(ctx, arch);
        fs::create_directories(dir);
        write_model_spec(spec, wl, dir / "spec.txt");
        net.params().save(dir / "params.txt");
        write_history_csv(h, dir / "history.csv");
        std::string sel = "best_epoch," + (h.best_epoch ? std::to_string(*h.best_epoch) : std::string()) + "\n";
        sel += "knee_epoch," + (h.knee_epoch ? std::to_string(*h.knee_epoch) : std::string()) + "\n";
        write_text(dir / "selection.csv", sel);
        // wall-clock lives apart from the deterministic artifacts
        write_text(ctx.path("timings/" + slug + ".txt"), format_fixed(h.seconds, 3) + "\n");
    }
}

void cmd_eval_recon(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    for (Architecture arch : selected_architectures(ctx)) {
        std::vector<double> wl;
        const ReconNetwork net = load_network(ctx, arch, &wl);
        const std::string slug = architecture_slug(arch);
        CsvWriter csv(ctx.path("recon/" + slug + "_metrics.csv"));
        csv.row({"set", "MRAE", "RMSE", "PSNR"});
        for (const auto& [set, idx] : {std::pair<std::string, const std::vector<std::size_t>&>{"validation", split.validation},
                                       {"test", split.test}}) {
            const ReconMetrics r = evaluate(net, load_pairs(ctx, m, idx, wl));
            csv.row({set, format_number(r.mrae), format_number(r.rmse), format_number(r.psnr)});
            note(ctx, "eval-recon " + slug + " " + set + ": MRAE " + format_fixed(r.mrae, 4) + " RMSE " +
                          format_fixed(r.rmse, 4) + " PSNR " + format_fixed(r.psnr, 2));
        }
    }
}

void cmd_recon_spectra(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    for (Architecture arch : selected_architectures(ctx)) {
        std::vector<double> wl;
        const ReconNetwork net = load_network(ctx, arch, &wl);
        SpectraTable t;
        t.ids = m.ids;
        t.wavelengths = wl;
        t.y = Eigen::Map<const Eigen::VectorXd>(m.attributes.data(), static_cast<Eigen::Index>(m.attributes.size()));
        t.X.resize(static_cast<Eigen::Index>(m.ids.size()), static_cast<Eigen::Index>(wl.size()));
        for (std::size_t i = 0; i < m.ids.size(); ++i) {
            const Hypercube rc = reconstruct(net, load_rgb(ctx, m.ids[i]), wl);
            const Spectrum s = mean_spectrum(rc, load_mask(ctx, m.ids[i]));
            for (std::size_t b = 0; b < wl.size(); ++b) t.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = s.values[b];
        }
        write_table_csv(t, ctx.path("spectra/recon_" + architecture_slug(arch) + ".csv"));
        note(ctx, "recon-spectra " + architecture_slug(arch) + ": " + std::to_string(m.ids.size()) + " spectra");
    }
}

void cmd_fit_plsr_recon(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    std::vector<std::pair<std::string, std::string>> jobs;
    for (Architecture arch : selected_architectures(ctx)) jobs.emplace_back(architecture_slug(arch), "recon-spectra");
    if (!ctx.arch) jobs.emplace_back("rgb", "extract-spectra");
    for (const auto& [name, producer] : jobs) {
        const std::string rel = name == "rgb" ? "spectra/rgb.csv" : "spectra/recon_" + name + ".csv";
        const SpectraTable t = load_table(ctx, rel, producer);
        PlsrModel model;
        const PlsrSummary s = fit_and_summarize(t, split, plsr_max_lv(ctx), &model);
        const std::string stem = name == "rgb" ? "plsr/rgb" : "plsr/recon_" + name;
        write_model(model, t.wavelengths, ctx.path(stem + "_model.txt"));
        write_plsr_summary(s, ctx.path(stem + "_metrics.csv"));
        note(ctx, "fit-plsr-recon " + name + ": LV " + std::to_string(s.lv) + ", R2p " + format_fixed(s.r2p, 4));
    }
}

ReconMetrics read_recon_metrics(const fs::path& path, const std::string& set) {
    for (const auto& row : read_csv(path)) {
        if (row.size() == 4 && row[0] == set) return {parse_number(row[1]), parse_number(row[2]), parse_number(row[3])};
    }
    throw Error(path.string() + ": no '" + set + "' row");
}

std::optional<Architecture> best_architecture(const PipelineContext& ctx) {
    std::optional<Architecture> best;
    double best_mrae = 0.0;
    for (Architecture arch : selected_architectures(ctx)) {
        const auto p = ctx.path("recon/" + architecture_slug(arch) + "_metrics.csv");
        if (!fs::exists(p)) continue;
        const double v = read_recon_metrics(p, "test").mrae;
        if (!best || v < best_mrae) {
            best = arch;
            best_mrae = v;
        }
    }
    return best;
}

void cmd_predict_map(PipelineContext& ctx) {
    const Manifest m = read_manifest(ctx);
    const SplitAssignment split = read_split(ctx, m);
    const auto model_path = ctx.path("plsr/ga_model.txt");
    require(model_path, "fit-plsr");
    std::vector<double> wl;
    const PlsrModel model = read_model(model_path, &wl);
    const auto arch = best_architecture(ctx);
    if (!arch) throw Error("missing recon/<arch>_metrics.csv; run `hsr_cli eval-recon` first");
    const ReconNetwork net = load_network(ctx, *arch, nullptr);
    const std::string slug = architecture_slug(*arch);

    std::vector<std::pair<std::string, AttributeMap>> maps;
    std::vector<double> all;
    for (auto i : split.test) {
        const std::string& id = m.ids[i];
        const Mask mask = load_mask(ctx, id);
        const Hypercube gt = select_bands(load_reflectance(ctx, id), wl);
        const Hypercube rc = reconstruct(net, load_rgb(ctx, id), gt.wavelengths());
        for (auto&& [tag, cube] : {std::pair<std::string, const Hypercube&>{"gt", gt}, {slug, rc}}) {
            AttributeMap map = prediction_map(cube, model, mask);
            const auto v = map.valid_values();
            all.insert(all.end(), v.begin(), v.end());
            maps.emplace_back(id + "_" + tag, std::move(map));
        }
    }
    // one scale for every map so GT and reconstruction are comparable
    AttributeMap pooled;
    for (double v : all) pooled.values.emplace_back(v);
    auto [lo, hi] = default_range(pooled);
    lo = ctx.config.get_double("map", "range_min", lo);
    hi = ctx.config.get_double("map", "range_max", hi);
    for (const auto& [name, map] : maps) {
        write_ppm(colorize(map, lo, hi), ctx.path("maps/" + name + ".ppm"));
        write_map_csv(map, ctx.path("maps/" + name + ".csv"));
    }
    write_text(ctx.path("maps/range.txt"), format_number(lo) + "," + format_number(hi) + "\n");
    note(ctx, "predict-map: " + std::to_string(maps.size()) + " maps, range " + format_fixed(lo, 2) + " to " +
                  format_fixed(hi, 2));
}

std::vector<std::string> summary_cells(const PlsrSummary& s) {
    return {std::to_string(s.lv),  format_number(s.r2c), format_number(s.rmsec), format_number(s.r2v),
            format_number(s.rmsev), format_number(s.r2p), format_number(s.rmsep), format_number(s.rpd)};
}

std::vector<std::string> header_with(const std::string& first) {
    std::vector<std::string> h{first};
    std::stringstream ss(kPlsrHeader);
    std::string c;
    while (std::getline(ss, c, ',')) h.push_back(c);
    return h;
}

void cmd_report(PipelineContext& ctx) {
    {
        CsvWriter t1(ctx.path("report/table1.csv"));
        t1.row(header_with("Features"));
        for (const auto& [label, stem] : {std::pair<std::string, std::string>{"Full", "full"}, {"Selected (GT)", "ga"}}) {
            const auto p = ctx.path("plsr/" + stem + "_metrics.csv");
            require(p, "fit-plsr");
            auto cells = summary_cells(read_plsr_summary(p));
            cells.insert(cells.begin(), label);
            t1.row(cells);
        }
    }
    CsvWriter t2(ctx.path("report/table2.csv"));
    t2.row({"Method", "MRAE_val", "RMSE_val", "MRAE_test", "RMSE_test", "PSNR_test"});
    CsvWriter t3(ctx.path("report/table3.csv"));
    t3.row(header_with("Method"));
    CsvWriter cost(ctx.path("report/cost.csv"));
    cost.row({"Method", "Params", "MACs_64", "MACs_512", "PSNR_test"});
    std::ostringstream summary;
    const std::vector<double> wl = load_ga_wavelengths(ctx);
    summary << "selected wavelengths (nm):";
    for (double w : wl) summary << ' ' << format_number(w);
    summary << '\n';
    for (Architecture arch : selected_architectures(ctx)) {
        const std::string slug = architecture_slug(arch);
        const std::string name = to_string(arch);
        const auto mp = ctx.path("recon/" + slug + "_metrics.csv");
        require(mp, "eval-recon");
        const ReconMetrics val = read_recon_metrics(mp, "validation"), test = read_recon_metrics(mp, "test");
        t2.row({name, format_number(val.mrae), format_number(val.rmse), format_number(test.mrae), format_number(test.rmse),
                format_number(test.psnr)});
        const auto pp = ctx.path("plsr/recon_" + slug + "_metrics.csv");
        require(pp, "fit-plsr-recon");
        const PlsrSummary s = read_plsr_summary(pp);
        auto cells = summary_cells(s);
        cells.insert(cells.begin(), name);
        t3.row(cells);
        require(model_dir(ctx, arch) / "spec.txt", "train-recon");
        const ModelSpec spec = read_model_spec(model_dir(ctx, arch) / "spec.txt");
        const Cost c64 = count_params_flops(spec, 64, 64), c512 = count_params_flops(spec, 512, 512);
        cost.row({name, std::to_string(c64.parameters), std::to_string(c64.macs), std::to_string(c512.macs),
                  format_number(test.psnr)});
        summary << name << ": test MRAE " << format_fixed(test.mrae, 4) << ", PSNR " << format_fixed(test.psnr, 2)
                << " dB, recon PLSR R2p " << format_fixed(s.r2p, 4) << ", params " << c64.parameters << '\n';
    }
    if (!ctx.arch) {
        const auto p = ctx.path("plsr/rgb_metrics.csv");
        require(p, "fit-plsr-recon");
        const PlsrSummary s = read_plsr_summary(p);
        auto cells = summary_cells(s);
        cells.insert(cells.begin(), "RGB");
        t3.row(cells);
        summary << "RGB: PLSR R2p " << format_fixed(s.r2p, 4) << '\n';
    }
    const PlsrSummary ga = read_plsr_summary(ctx.path("plsr/ga_metrics.csv"));
    summary << "GT selected-band PLSR R2p " << format_fixed(ga.r2p, 4) << '\n';
    write_text(ctx.path("report/summary.txt"), summary.str());
    note(ctx, "report: " + ctx.path("report").string());
}

using Command = void (*)(PipelineContext&);

const std::vector<std::pair<std::string, Command>>& command_table() {
    static const std::vector<std::pair<std::string, Command>> table{
        {"synth", cmd_synth},
        {"calibrate", cmd_calibrate},
        {"segment", cmd_segment},
        {"extract-spectra", cmd_extract_spectra},
        {"ga-select", cmd_ga_select},
        {"fit-plsr", cmd_fit_plsr},
        {"shap", cmd_shap},
        {"train-recon", cmd_train_recon},
        {"eval-recon", cmd_eval_recon},
        {"recon-spectra", cmd_recon_spectra},
        {"fit-plsr-recon", cmd_fit_plsr_recon},
        {"predict-map", cmd_predict_map},
        {"report", cmd_report},
    };
    return table;
}

}  // namespace

std::uint64_t PipelineContext::seed(const std::string& section, std::uint64_t fallback) const {
    if (seed_override) return derive_seed(*seed_override, fnv1a(section));
    const auto v = config.get_int(section, "seed", static_cast<std::int64_t>(fallback));
    if (v < 0) throw Error("config [" + section + "] seed must be >= 0");
    return static_cast<std::uint64_t>(v);
}

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& c : command_table()) out.push_back(c.first);
        return out;
    }();
    return names;
}

void run_subcommand(const std::string& name, PipelineContext& ctx) {
    for (const auto& [n, fn] : command_table()) {
        if (n == name) {
            fs::create_directories(ctx.out);
            fn(ctx);
            return;
        }
    }
    throw Error("unknown subcommand '" + name + "'");
}

std::string architecture_slug(Architecture arch) {
    switch (arch) {
        case Architecture::HscnnD: return "hscnn-d";
        case Architecture::Hrnet: return "hrnet";
        case Architecture::MstPlusPlus: return "mst-pp";
    }
    throw Error("unknown architecture");
}

std::vector<Architecture> selected_architectures(const PipelineContext& ctx) {
    if (ctx.arch) return {parse_architecture(*ctx.arch)};
    return {Architecture::HscnnD, Architecture::Hrnet, Architecture::MstPlusPlus};
}

namespace {

std::string config_section(Architecture arch) {
    switch (arch) {
        case Architecture::HscnnD: return "hscnnd";
        case Architecture::Hrnet: return "hrnet";
        case Architecture::MstPlusPlus: return "mstpp";
    }
    return "";
}

}  // namespace

ModelSpec model_spec_from_config(const Config& config, Architecture arch, std::size_t out_bands) {
    ModelSpec s = ModelSpec::toy(arch, out_bands);
    const std::string sec = config_section(arch);
    s.base_channels = config.get_size(sec, "channels", s.base_channels);
    s.depth = config.get_size(sec, "depth", s.depth);
    s.growth = config.get_size(sec, "growth", s.growth);
    s.heads = config.get_size(sec, "heads", s.heads);
    s.u_levels = config.get_size(sec, "u_levels", s.u_levels);
    s.validate();
    return s;
}

TrainConfig train_config_from_config(const PipelineContext& ctx, Architecture arch) {
    TrainConfig t = TrainConfig::for_architecture(arch);
    const std::string sec = config_section(arch);
    const Config& c = ctx.config;
    // per-architecture keys override [train]
    auto size = [&](const char* key, std::size_t v) { return c.get_size(sec, key, c.get_size("train", key, v)); };
    auto dbl = [&](const char* key, double v) { return c.get_double(sec, key, c.get_double("train", key, v)); };
    t.batch_size = size("batch", t.batch_size);
    t.patch_size = size("patch", t.patch_size);
    t.stride = size("stride", t.stride);
    t.epochs = size("epochs", t.epochs);
    t.iterations_per_epoch = size("iterations", t.iterations_per_epoch);
    t.learning_rate = dbl("lr", t.learning_rate);
    t.lr_decay = dbl("lr_decay", t.lr_decay);
    t.beta1 = dbl("beta1", t.beta1);
    t.beta2 = dbl("beta2", t.beta2);
    if (c.has(sec, "loss")) t.loss = parse_loss(c.get_string(sec, "loss", ""));
    t.seed = ctx.seed(sec, 1);
    t.validate();
    return t;
}

void write_model_spec(const ModelSpec& spec, const std::vector<double>& wavelengths, const fs::path& path) {
    std::ostringstream out;
    out << "architecture=" << to_string(spec.architecture) << '\n'
        << "channels=" << spec.base_channels << '\n'
        << "depth=" << spec.depth << '\n'
        << "growth=" << spec.growth << '\n'
        << "heads=" << spec.heads << '\n'
        << "u_levels=" << spec.u_levels << '\n'
        << "out_bands=" << spec.out_bands << '\n'
        << "wavelengths=";
    for (std::size_t i = 0; i < wavelengths.size(); ++i) out << (i ? "," : "") << format_number(wavelengths[i]);
    out << '\n';
    write_text(path, out.str());
}

ModelSpec read_model_spec(const fs::path& path, std::vector<double>* wavelengths) {
    const Config c = Config::load(path);
    ModelSpec s;
    const auto arch = c.raw("", "architecture");
    if (!arch) throw Error(path.string() + ": missing architecture");
    s.architecture = parse_architecture(*arch);
    s.base_channels = c.get_size("", "channels", s.base_channels);
    s.depth = c.get_size("", "depth", s.depth);
    s.growth = c.get_size("", "growth", s.growth);
    s.heads = c.get_size("", "heads", s.heads);
    s.u_levels = c.get_size("", "u_levels", s.u_levels);
    s.out_bands = c.get_size("", "out_bands", s.out_bands);
    s.validate();
    if (wavelengths) *wavelengths = c.get_doubles("", "wavelengths", {});
    if (wavelengths && wavelengths->size() != s.out_bands) throw Error(path.string() + ": wavelength count differs from out_bands");
    return s;
}

PlsrSummary fit_and_summarize(const SpectraTable& table, const SplitAssignment& split, std::size_t max_lv,
                              PlsrModel* model_out) {
    const SpectraTable train = table.rows(split.train);
    const SpectraTable val = table.rows(split.validation);
    const SpectraTable test = table.rows(split.test);
    if (train.samples() < 3) throw Error("PLSR needs at least 3 training samples");
    const std::size_t cap = std::min({max_lv, table.features(), train.samples() - 2});
    const LvSelection sel = select_lv_loocv(train, std::max<std::size_t>(cap, 1));
    const PlsrModel model = fit_plsr(train, sel.best_lv);
    PlsrSummary s;
    s.lv = sel.best_lv;
    const auto cal = regression_metrics(train.y, predict_plsr(model, train.X));
    s.r2c = cal.r2;
    s.rmsec = cal.rmse;
    if (val.samples() > 0) {
        const auto v = regression_metrics(val.y, predict_plsr(model, val.X));
        s.r2v = v.r2;
        s.rmsev = v.rmse;
    }
    if (test.samples() > 0) {
        const auto p = regression_metrics(test.y, predict_plsr(model, test.X));
        s.r2p = p.r2;
        s.rmsep = p.rmse;
        s.rpd = test.samples() > 1 ? rpd(test.y, p.rmse) : 0.0;
    }
    if (model_out) *model_out = model;
    return s;
}

void write_plsr_summary(const PlsrSummary& s, const fs::path& path) {
    CsvWriter csv(path);
    auto header = header_with("");
    header.erase(header.begin());
    csv.row(header);
    csv.row(summary_cells(s));
}

PlsrSummary read_plsr_summary(const fs::path& path) {
    const auto rows = read_csv(path);
    if (rows.size() != 2 || rows[1].size() != 8) throw Error(path.string() + ": expected a '" + kPlsrHeader + "' table");
    PlsrSummary s;
    s.lv = static_cast<std::size_t>(parse_number(rows[1][0]));
    s.r2c = parse_number(rows[1][1]);
    s.rmsec = parse_number(rows[1][2]);
    s.r2v = parse_number(rows[1][3]);
    s.rmsev = parse_number(rows[1][4]);
    s.r2p = parse_number(rows[1][5]);
    s.rmsep = parse_number(rows[1][6]);
    s.rpd = parse_number(rows[1][7]);
    return s;
}

}  // namespace hsr
