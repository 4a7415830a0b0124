#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsr/common.hpp"

namespace hsr {

/// Height x width x bands reflectance volume stored in (line, sample, band) order.
class Hypercube {
public:
    Hypercube() = default;
    /// Zero-filled cube. Throws if the wavelength axis is not strictly increasing.
    Hypercube(std::size_t height, std::size_t width, std::vector<double> wavelengths);
    Hypercube(std::size_t height, std::size_t width, std::vector<double> wavelengths,
              std::vector<double> data);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t bands() const { return wavelengths_.size(); }
    std::size_t pixels() const { return height_ * width_; }
    bool empty() const { return data_.empty(); }

    const std::vector<double>& wavelengths() const { return wavelengths_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double at(std::size_t line, std::size_t sample, std::size_t band) const {
        return data_[(line * width_ + sample) * bands() + band];
    }
    double& at(std::size_t line, std::size_t sample, std::size_t band) {
        return data_[(line * width_ + sample) * bands() + band];
    }
    /// Contiguous spectrum of one pixel.
    std::span<const double> spectrum(std::size_t line, std::size_t sample) const {
        return {data_.data() + (line * width_ + sample) * bands(), bands()};
    }
    std::span<double> spectrum(std::size_t line, std::size_t sample) {
        return {data_.data() + (line * width_ + sample) * bands(), bands()};
    }

    bool same_geometry(const Hypercube& other) const;
    bool operator==(const Hypercube& other) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> wavelengths_;
    std::vector<double> data_;
};

/// Three 8-bit channels per pixel, row-major.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // size height*width*3

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

    std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
    std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * 3 + ch]; }
    bool operator==(const RgbImage&) const = default;
};

struct CalibrationOptions {
    double clamp_max = 2.0;
};

struct Calibrated {
    Hypercube cube;
    std::size_t clamped_low = 0;   // voxels raised to 0
    std::size_t clamped_high = 0;  // voxels lowered to clamp_max
};

/// (raw - dark) / (white - dark), clamped to [0, clamp_max].
Calibrated calibrate_reflectance(const Hypercube& raw, const Hypercube& white, const Hypercube& dark,
                                 const CalibrationOptions& options = {});

/// Reads an ENVI-style header plus its band-interleaved-by-line float32 payload.
Hypercube read_bil(const std::filesystem::path& header_path);

/// Writes `<stem>.hdr` and `<stem>.bil`. `path` may name either file or the bare stem.
void write_bil(const Hypercube& cube, const std::filesystem::path& path);

/// Paths of the header and payload that write_bil produces for `path`.
std::filesystem::path bil_header_path(const std::filesystem::path& path);
std::filesystem::path bil_data_path(const std::filesystem::path& path);

/// Index of the band nearest `target_nm`; ties go to the lower index.
std::size_t band_index_nearest(std::span<const double> wavelengths, double target_nm);
inline std::size_t band_index_nearest(const Hypercube& cube, double target_nm) {
    return band_index_nearest(cube.wavelengths(), target_nm);
}

/// Copies the bands nearest each target, ordered by ascending wavelength.
Hypercube select_bands(const Hypercube& cube, std::span<const double> targets_nm);

struct RgbBands {
    double red_nm = 599.0;
    double green_nm = 549.0;
    double blue_nm = 449.0;
};

/// Gamma-encoded 8-bit rendering: round(255 * clamp(v,0,1)^(1/gamma)) per channel.
RgbImage render_rgb(const Hypercube& cube, double gamma = 1.4, const RgbBands& bands = {});

/// The 8-bit encoding used by render_rgb for a single reflectance value.
std::uint8_t encode_channel(double value, double gamma);

}  // namespace hsr
