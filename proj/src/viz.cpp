#include "hsr/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hsr/csv.hpp"

namespace hsr {

std::size_t AttributeMap::valid_count() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](const auto& v) { return v.has_value(); }));
}

std::vector<double> AttributeMap::valid_values() const {
    std::vector<double> out;
    for (const auto& v : values)
        if (v) out.push_back(*v);
    return out;
}

AttributeMap prediction_map(const Hypercube& cube, const PlsrModel& model, const Mask& mask) {
    if (cube.bands() != model.width()) {
        throw Error("prediction map: cube has " + std::to_string(cube.bands()) + " bands, model expects " +
                    std::to_string(model.width()));
    }
    if (!mask.matches(cube)) throw Error("prediction map: mask size differs from cube");
    if (mask.count() == 0) throw DegenerateMaskError("prediction map: mask has no foreground pixels");
    AttributeMap map;
    map.height = cube.height();
    map.width = cube.width();
    map.values.assign(cube.pixels(), std::nullopt);
    for (std::size_t r = 0; r < cube.height(); ++r) {
        for (std::size_t c = 0; c < cube.width(); ++c) {
            if (!mask.at(r, c)) continue;
            const auto s = cube.spectrum(r, c);
            const Eigen::Map<const Eigen::VectorXd> x(s.data(), static_cast<Eigen::Index>(s.size()));
            map.values[r * cube.width() + c] = predict_plsr(model, Eigen::VectorXd(x));
        }
    }
    return map;
}

Color ramp_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * static_cast<double>(kRampAnchors.size() - 1);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(pos), kRampAnchors.size() - 2);
    const double f = pos - static_cast<double>(i);
    Color out{};
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const double a = kRampAnchors[i][ch], b = kRampAnchors[i + 1][ch];
        out[ch] = static_cast<std::uint8_t>(std::lround(a + f * (b - a)));
    }
    return out;
}

RgbImage colorize(const AttributeMap& map, double lo, double hi) {
    if (!(lo < hi)) throw Error("colorize: range low must be below high");
    RgbImage img(map.height, map.width);
    for (std::size_t p = 0; p < map.values.size(); ++p) {
        if (!map.values[p]) continue;
        const Color c = ramp_color((*map.values[p] - lo) / (hi - lo));
        for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[p * 3 + ch] = c[ch];
    }
    return img;
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw Error("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= values.size()) return values.back();
    return values[i] + (pos - static_cast<double>(i)) * (values[i + 1] - values[i]);
}

std::pair<double, double> default_range(const AttributeMap& map) {
    const auto v = map.valid_values();
    double lo = percentile(v, 1.0), hi = percentile(v, 99.0);
    if (!(lo < hi)) {
        lo -= 1.0;
        hi += 1.0;
    }
    return {lo, hi};
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
    if (image.pixels.size() != image.height * image.width * 3) throw Error("write_ppm: pixel buffer size mismatch");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw Error("failed writing " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || !in) throw Error(path.string() + ": not an 8-bit binary PPM");
    in.get();
    RgbImage img(h, w);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw Error(path.string() + ": truncated pixel data");
    return img;
}

void write_map_csv(const AttributeMap& map, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"row", "col", "value"});
    for (std::size_t r = 0; r < map.height; ++r) {
        for (std::size_t c = 0; c < map.width; ++c) {
            const auto& v = map.values[r * map.width + c];
            if (v) csv.row({std::to_string(r), std::to_string(c), format_number(*v)});
        }
    }
}

void bar_chart_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                   const std::filesystem::path& path, const std::string& title) {
    if (values.empty()) throw Error("bar chart: no values");
    if (labels.size() != values.size()) throw Error("bar chart: label and value counts differ");
    double vmax = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) throw Error("bar chart: values must be finite and non-negative");
        vmax = std::max(vmax, v);
    }
    const double left = 120.0, top = title.empty() ? 10.0 : 34.0, bar_h = 18.0, gap = 6.0;
    const double width = left + kBarMaxWidth + 110.0;
    const double height = top + static_cast<double>(values.size()) * (bar_h + gap) + 10.0;

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << format_number(width) << "\" height=\""
        << format_number(height) << "\">\n";
    if (!title.empty()) {
        svg << "<text x=\"" << format_number(left) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title
            << "</text>\n";
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double y = top + static_cast<double>(i) * (bar_h + gap);
        const double len = vmax > 0.0 ? kBarMaxWidth * values[i] / vmax : 0.0;
        svg << "<text x=\"" << format_number(left - 6.0) << "\" y=\"" << format_number(y + 13.0)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << labels[i] << "</text>\n";
        svg << "<rect class=\"bar\" x=\"" << format_number(left) << "\" y=\"" << format_number(y) << "\" width=\""
            << format_number(len) << "\" height=\"" << format_number(bar_h) << "\" fill=\"#3b6fb6\"/>\n";
        svg << "<text x=\"" << format_number(left + len + 4.0) << "\" y=\"" << format_number(y + 13.0)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_fixed(values[i], 4) << "</text>\n";
    }
    svg << "</svg>\n";

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << svg.str();
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace hsr
