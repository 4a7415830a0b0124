#pragma once

#include <cstdint>
#include <vector>

#include "hsr/chemometrics.hpp"
#include "hsr/hypercube.hpp"
#include "hsr/segmentation.hpp"

namespace hsr {

/// Geometry and spectral model of a synthetic scene.
///
/// Endmember 0 carries narrow absorption-like bumps at the planted bands and its
/// scene-mean abundance sets the attribute. The remaining endmembers share the
/// complement. Endmembers differ only beyond `pigment_cutoff`; below it endmember 0
/// acts through a pigment whose transmission exp(-strength * g(wl) * abundance) is
/// applied per pixel. Texture, illumination falloff and noise vary inside each object
/// but leave the shading-weighted mean abundances untouched, so beyond the cutoff the
/// mean foreground spectrum of a noiseless scene is affine in the attribute.
struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t bands = 31;
    double wl_min = 400.0;
    double wl_max = 1000.0;
    std::size_t endmembers = 3;
    std::uint64_t endmember_seed = 7;
    double noise_sd = 0.004;
    std::vector<std::size_t> planted_bands{17, 22, 27};
    double planted_depth = 0.22;

    double axis_a_min = 18.0, axis_a_max = 26.0;  // semi-axes in pixels
    double axis_b_min = 13.0, axis_b_max = 20.0;

    double abundance_min = 0.25, abundance_max = 0.75;  // scene-mean abundance of endmember 0
    double texture_max = 0.2;                           // per-pixel abundance texture amplitude
    double mix_texture = 0.02;                          // texture among the other endmembers
    double pigment_strength = 3.0;
    double pigment_cutoff = 690.0;                      // nm
    double falloff_max = 0.6;                           // illumination drop at the object rim
    double attribute_min = 10.0, attribute_max = 45.0;  // percent
    double background = 0.01;

    std::vector<double> wavelengths() const;
    void validate() const;
};

struct LabeledScene {
    Hypercube cube;
    Mask mask;
    double attribute = 0.0;
    double abundance = 0.0;  // scene-mean abundance of endmember 0
};

/// Endmember reflectance spectra, one row per endmember.
std::vector<std::vector<double>> endmember_library(const SceneConfig& config);

LabeledScene generate_scene(const SceneConfig& config, std::uint64_t seed);
/// Scene i uses derive_seed(seed, i).
std::vector<LabeledScene> generate_dataset(std::size_t n, const SceneConfig& config, std::uint64_t seed);

/// Attribute as an affine function of the scene-mean abundance.
double attribute_from_abundance(const SceneConfig& config, double abundance);

/// White and dark reference captures shared by a session of scenes.
struct References {
    Hypercube white, dark;
};
References make_references(std::size_t height, std::size_t width, const std::vector<double>& wavelengths,
                           std::uint64_t seed);
/// Raw counts dark + reflectance * (white - dark), rounded to float32.
Hypercube simulate_raw(const Hypercube& reflectance, const References& refs);

/// Wavelength-selection benchmark: `samples` rows of independent standard-normal
/// features, y = sum_k coeffs[k] * X[:, informative[k]] + N(0, noise_sd).
struct PlantedSelection {
    std::size_t samples = 60;
    std::size_t bands = 20;
    std::vector<std::size_t> informative{3, 9, 15};
    std::vector<double> coefficients{1.0, -0.8, 0.6};
    double noise_sd = 0.05;
};
SpectraTable planted_selection_table(const PlantedSelection& setup, std::uint64_t seed);

}  // namespace hsr
