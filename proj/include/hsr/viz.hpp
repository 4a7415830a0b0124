#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsr/chemometrics.hpp"
#include "hsr/hypercube.hpp"
#include "hsr/segmentation.hpp"

namespace hsr {

/// Per-pixel attribute values; background pixels are invalid and hold no value.
struct AttributeMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::optional<double>> values;  // row-major

    std::size_t valid_count() const;
    std::vector<double> valid_values() const;
};

AttributeMap prediction_map(const Hypercube& cube, const PlsrModel& model, const Mask& mask);

using Color = std::array<std::uint8_t, 3>;

/// Blue, cyan, green, yellow, red at t = 0, 0.25, 0.5, 0.75, 1.
inline constexpr std::array<Color, 5> kRampAnchors{{{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};

/// Ramp color at t in [0,1] (clamped). Channels are linearly interpolated and rounded half away from zero.
Color ramp_color(double t);

RgbImage colorize(const AttributeMap& map, double lo, double hi);

/// Value at the given percentile (0..100) by linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);
/// 1st to 99th percentile of the valid values; widened by 1 around a constant map.
std::pair<double, double> default_range(const AttributeMap& map);

void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

void write_map_csv(const AttributeMap& map, const std::filesystem::path& path);

/// Horizontal bar chart, bars in the given order, longest bar kBarMaxWidth units.
inline constexpr double kBarMaxWidth = 400.0;
void bar_chart_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                   const std::filesystem::path& path, const std::string& title = "");

}  // namespace hsr
