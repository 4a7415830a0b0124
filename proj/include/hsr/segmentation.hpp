#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsr/hypercube.hpp"

namespace hsr {

/// Per-pixel foreground flag (true = ROI).
class Mask {
public:
    Mask() = default;
    Mask(std::size_t height, std::size_t width, bool fill = false)
        : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    bool at(std::size_t r, std::size_t c) const { return bits_[r * width_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { bits_[r * width_ + c] = v ? 1 : 0; }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    std::size_t count() const;
    bool matches(const Hypercube& cube) const { return height_ == cube.height() && width_ == cube.width(); }
    bool operator==(const Mask&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct Spectrum {
    std::vector<double> wavelengths;
    std::vector<double> values;
};

struct MaskOptions {
    /// Foreground iff band_a - band_b > threshold. Otsu's threshold on the difference image when unset.
    std::optional<double> threshold;
    /// Keep only the largest 4-connected foreground component.
    bool largest_component = false;
};

/// Difference image band(wl_a) - band(wl_b), row-major.
std::vector<double> band_difference(const Hypercube& cube, double wl_a, double wl_b);

/// Otsu threshold over a 256-bin histogram of `values`.
double otsu_threshold(const std::vector<double>& values);

Mask band_difference_mask(const Hypercube& cube, double wl_a, double wl_b, const MaskOptions& options = {});

Mask largest_component(const Mask& mask);

/// Background voxels zeroed, foreground unchanged.
Hypercube apply_mask(const Hypercube& cube, const Mask& mask);

/// Per-band mean over foreground pixels.
Spectrum mean_spectrum(const Hypercube& cube, const Mask& mask);

/// Elementwise mean of two spectra on the same axis.
Spectrum average_views(const Spectrum& a, const Spectrum& b);

/// Binary PBM (P4).
void write_pbm(const Mask& mask, const std::filesystem::path& path);
Mask read_pbm(const std::filesystem::path& path);

/// CSV with header "id,<wavelength>..." and one row per spectrum.
void write_spectra_csv(const std::vector<std::string>& ids, const std::vector<Spectrum>& spectra,
                       const std::filesystem::path& path);
std::vector<std::pair<std::string, Spectrum>> read_spectra_csv(const std::filesystem::path& path);

}  // namespace hsr
