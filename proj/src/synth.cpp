#include "hsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace hsr {

std::vector<double> SceneConfig::wavelengths() const {
    std::vector<double> wl(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        wl[b] = wl_min + (wl_max - wl_min) * static_cast<double>(b) / static_cast<double>(bands - 1);
    }
    return wl;
}

void SceneConfig::validate() const {
    if (bands < 8) throw Error("scene config: at least 8 bands required");
    if (!(wl_max > wl_min)) throw Error("scene config: wavelength range is empty");
    if (endmembers < 2) throw Error("scene config: at least 2 endmembers required");
    if (noise_sd < 0.0) throw Error("scene config: noise sd must be >= 0");
    for (auto b : planted_bands)
        if (b >= bands) throw Error("scene config: planted band " + std::to_string(b) + " outside band range");
    if (!(axis_a_min > 0.0 && axis_a_min <= axis_a_max && axis_b_min > 0.0 && axis_b_min <= axis_b_max)) {
        throw Error("scene config: invalid ellipse axis ranges");
    }
    const double reach = std::max(axis_a_max, axis_b_max) + 4.0;
    if (2.0 * reach > static_cast<double>(std::min(height, width))) {
        throw Error("scene config: infeasible geometry, ellipse of semi-axis " + std::to_string(std::max(axis_a_max, axis_b_max)) +
                    " does not fit a " + std::to_string(height) + "x" + std::to_string(width) + " image");
    }
    if (!(abundance_min > 0.0 && abundance_min < abundance_max && abundance_max < 1.0)) {
        throw Error("scene config: abundance range must lie inside (0,1)");
    }
    if (texture_max < 0.0 || texture_max >= std::min(abundance_min, 1.0 - abundance_max)) {
        throw Error("scene config: texture amplitude would push abundances outside [0,1]");
    }
    if (mix_texture < 0.0 || mix_texture > (1.0 - abundance_max - texture_max) / static_cast<double>(endmembers - 1)) {
        throw Error("scene config: mixing texture would push abundances below 0");
    }
    if (pigment_strength < 0.0 || !(pigment_cutoff > wl_min)) throw Error("scene config: invalid pigment settings");
    if (falloff_max < 0.0 || falloff_max >= 1.0) throw Error("scene config: falloff must lie in [0,1)");
    if (!(attribute_min < attribute_max)) throw Error("scene config: empty attribute range");
}

std::vector<std::vector<double>> endmember_library(const SceneConfig& config) {
    config.validate();
    Rng rng(config.endmember_seed);
    std::uniform_real_distribution<double> center(config.pigment_cutoff + 40.0, config.wl_max - 20.0);
    std::uniform_real_distribution<double> width(30.0, 90.0);
    std::uniform_real_distribution<double> amp(-0.12, 0.15);
    std::uniform_int_distribution<int> count(2, 3);
    const auto wl = config.wavelengths();
    std::vector<std::vector<double>> lib(config.endmembers, std::vector<double>(config.bands));
    for (std::size_t k = 0; k < config.endmembers; ++k) {
        // smooth red-edge baseline shared by all endmembers; features only beyond the pigment cutoff
        for (std::size_t b = 0; b < config.bands; ++b) lib[k][b] = 0.15 + 0.40 / (1.0 + std::exp(-(wl[b] - 700.0) / 40.0));
        const int n = count(rng);
        for (int j = 0; j < n; ++j) {
            const double c = center(rng), w = width(rng), a = amp(rng);
            for (std::size_t b = 0; b < config.bands; ++b) {
                if (wl[b] < config.pigment_cutoff) continue;
                lib[k][b] += a * std::exp(-0.5 * std::pow((wl[b] - c) / w, 2));
            }
        }
    }
    for (auto p : config.planted_bands) {
        for (std::size_t b = 0; b < config.bands; ++b) {
            if (wl[b] < config.pigment_cutoff) continue;
            lib[0][b] -= config.planted_depth * std::exp(-0.5 * std::pow((wl[b] - wl[p]) / 15.0, 2));
        }
    }
    for (auto& e : lib)
        for (double& v : e) v = std::clamp(v, 0.02, 0.9);
    return lib;
}

double attribute_from_abundance(const SceneConfig& config, double abundance) {
    const double t = (abundance - config.abundance_min) / (config.abundance_max - config.abundance_min);
    return config.attribute_min + t * (config.attribute_max - config.attribute_min);
}

namespace {

using Field = std::vector<double>;

double masked_dot(const Field& a, const Field& b, const std::vector<std::size_t>& fg) {
    double s = 0.0;
    for (auto p : fg) s += a[p] * b[p];
    return s;
}

// Removes from `f` its projection onto span(basis) over the foreground pixels.
void orthogonalize(Field& f, const std::vector<Field>& basis, const std::vector<std::size_t>& fg) {
    std::vector<Field> ortho;
    for (const auto& v : basis) {
        Field u = v;
        for (const auto& q : ortho) {
            const double c = masked_dot(u, q, fg);
            for (auto p : fg) u[p] -= c * q[p];
        }
        const double n = std::sqrt(masked_dot(u, u, fg));
        if (n < 1e-12) continue;
        for (auto p : fg) u[p] /= n;
        ortho.push_back(std::move(u));
    }
    for (const auto& q : ortho) {
        const double c = masked_dot(f, q, fg);
        for (auto p : fg) f[p] -= c * q[p];
    }
}

void scale_to_amplitude(Field& f, double amplitude, const std::vector<std::size_t>& fg) {
    double peak = 0.0;
    for (auto p : fg) peak = std::max(peak, std::abs(f[p]));
    const double k = peak > 0.0 ? amplitude / peak : 0.0;
    for (auto p : fg) f[p] *= k;
}

Field wave_texture(std::size_t h, std::size_t w, Rng& rng) {
    std::uniform_real_distribution<double> freq(0.15, 0.6), angle(0.0, std::numbers::pi), phase(0.0, 2.0 * std::numbers::pi);
    Field f(h * w, 0.0);
    for (int j = 0; j < 3; ++j) {
        const double k = freq(rng), a = angle(rng), ph = phase(rng);
        const double kx = k * std::cos(a), ky = k * std::sin(a);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) f[r * w + c] += std::sin(kx * static_cast<double>(c) + ky * static_cast<double>(r) + ph);
    }
    return f;
}

}  // namespace

LabeledScene generate_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    const auto lib = endmember_library(config);
    const std::size_t h = config.height, w = config.width, bands = config.bands, k_end = config.endmembers;
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const double a = uniform(config.axis_a_min, config.axis_a_max);
    const double b = uniform(config.axis_b_min, config.axis_b_max);
    const double theta = uniform(0.0, std::numbers::pi);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0 + uniform(-3.0, 3.0);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0 + uniform(-3.0, 3.0);

    LabeledScene scene;
    scene.mask = Mask(h, w);
    Field rho2(h * w, 0.0);
    std::vector<std::size_t> fg;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
            const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / a;
            const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / b;
            rho2[r * w + c] = u * u + v * v;
            if (rho2[r * w + c] <= 1.0) {
                scene.mask.set(r, c, true);
                fg.push_back(r * w + c);
            }
        }
    }

    scene.abundance = uniform(config.abundance_min, config.abundance_max);
    scene.attribute = attribute_from_abundance(config, scene.abundance);

    // illumination falloff, normalized to unit mean over the object
    const double falloff = uniform(0.0, config.falloff_max);
    Field shade(h * w, 0.0);
    double shade_mean = 0.0;
    for (auto p : fg) shade_mean += shade[p] = 1.0 - falloff * rho2[p];
    shade_mean /= static_cast<double>(fg.size());
    for (auto p : fg) shade[p] /= shade_mean;
    const Field ones(h * w, 1.0);

    // abundance texture of endmember 0: zero mean and uncorrelated with shading
    Field tex0 = wave_texture(h, w, rng);
    orthogonalize(tex0, {ones, shade}, fg);
    scale_to_amplitude(tex0, uniform(0.2, 1.0) * config.texture_max, fg);

    // redistribution among the other endmembers, zero-sum and uncorrelated with shading
    std::vector<Field> others;
    for (std::size_t k = 0; k + 2 < k_end; ++k) {
        Field t = wave_texture(h, w, rng);
        orthogonalize(t, {shade}, fg);
        scale_to_amplitude(t, config.mix_texture / static_cast<double>(k_end - 2), fg);
        others.push_back(std::move(t));
    }

    // visible pigment of endmember 0, absorbing in proportion to its local abundance
    const auto wl = config.wavelengths();
    std::vector<double> pigment(bands, 0.0);
    for (std::size_t band = 0; band < bands; ++band) {
        if (wl[band] < config.pigment_cutoff) pigment[band] = config.pigment_strength * std::exp(-0.5 * std::pow((wl[band] - 570.0) / 50.0, 2));
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> data(h * w * bands);
    std::vector<double> abund(k_end);
    const double share = 1.0 / static_cast<double>(k_end - 1);
    for (std::size_t p = 0; p < h * w; ++p) {
        double* px = data.data() + p * bands;
        if (!scene.mask[p]) {
            for (std::size_t band = 0; band < bands; ++band) {
                const double n = config.noise_sd > 0.0 ? config.noise_sd * noise(rng) : 0.0;
                px[band] = std::max(0.0, config.background + n);
            }
            continue;
        }
        abund[0] = scene.abundance + tex0[p];
        for (std::size_t k = 1; k < k_end; ++k) {
            double extra = 0.0;
            if (k + 1 < k_end) extra = others[k - 1][p];
            else for (const auto& t : others) extra -= t[p];
            abund[k] = (1.0 - abund[0]) * share + extra;
        }
        for (std::size_t band = 0; band < bands; ++band) {
            double v = 0.0;
            for (std::size_t k = 0; k < k_end; ++k) v += abund[k] * lib[k][band];
            const double n = config.noise_sd > 0.0 ? config.noise_sd * noise(rng) : 0.0;
            if (pigment[band] > 0.0) v *= std::exp(-pigment[band] * abund[0]);
            px[band] = shade[p] * v + n;
        }
    }
    scene.cube = Hypercube(h, w, config.wavelengths(), std::move(data));
    return scene;
}

std::vector<LabeledScene> generate_dataset(std::size_t n, const SceneConfig& config, std::uint64_t seed) {
    if (n == 0) throw Error("dataset size must be >= 1");
    std::vector<LabeledScene> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(config, derive_seed(seed, i)));
    return out;
}

References make_references(std::size_t height, std::size_t width, const std::vector<double>& wavelengths,
                           std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    const std::size_t bands = wavelengths.size();
    std::vector<double> white(height * width * bands), dark(height * width * bands);
    for (std::size_t r = 0; r < height; ++r) {
        const double row_gain = 1.0 + jitter(rng);  // line-scan illumination ripple
        for (std::size_t c = 0; c < width; ++c) {
            for (std::size_t b = 0; b < bands; ++b) {
                const double x = static_cast<double>(b) / static_cast<double>(std::max<std::size_t>(1, bands - 1));
                const std::size_t i = (r * width + c) * bands + b;
                white[i] = static_cast<float>((1500.0 + 2500.0 * std::exp(-8.0 * (x - 0.45) * (x - 0.45))) * row_gain);
                dark[i] = static_cast<float>(90.0 + 20.0 * x);
            }
        }
    }
    return {Hypercube(height, width, wavelengths, std::move(white)), Hypercube(height, width, wavelengths, std::move(dark))};
}

Hypercube simulate_raw(const Hypercube& reflectance, const References& refs) {
    if (!reflectance.same_geometry(refs.white) || !reflectance.same_geometry(refs.dark)) {
        throw Error("simulate_raw: reference geometry differs from scene");
    }
    std::vector<double> raw(reflectance.data().size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double w = refs.white.data()[i], d = refs.dark.data()[i];
        raw[i] = static_cast<float>(d + reflectance.data()[i] * (w - d));
    }
    return Hypercube(reflectance.height(), reflectance.width(), reflectance.wavelengths(), std::move(raw));
}

SpectraTable planted_selection_table(const PlantedSelection& setup, std::uint64_t seed) {
    if (setup.informative.size() != setup.coefficients.size()) throw Error("planted selection: coefficient count mismatch");
    for (auto b : setup.informative)
        if (b >= setup.bands) throw Error("planted selection: informative band outside range");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SpectraTable t;
    t.X.resize(static_cast<Eigen::Index>(setup.samples), static_cast<Eigen::Index>(setup.bands));
    t.y.resize(static_cast<Eigen::Index>(setup.samples));
    for (std::size_t i = 0; i < setup.samples; ++i) {
        for (std::size_t j = 0; j < setup.bands; ++j) t.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = normal(rng);
        double y = setup.noise_sd * normal(rng);
        for (std::size_t k = 0; k < setup.informative.size(); ++k) {
            y += setup.coefficients[k] * t.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(setup.informative[k]));
        }
        t.y(static_cast<Eigen::Index>(i)) = y;
        t.ids.push_back("p" + std::to_string(i + 1));
    }
    for (std::size_t j = 0; j < setup.bands; ++j) t.wavelengths.push_back(400.0 + 30.0 * static_cast<double>(j));
    return t;
}

}  // namespace hsr
