#include "hsr/hypercube.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace hsr {

namespace {

void check_axis(const std::vector<double>& wavelengths) {
    for (std::size_t i = 1; i < wavelengths.size(); ++i) {
        if (!(wavelengths[i] > wavelengths[i - 1])) {
            throw Error("wavelength axis must be strictly increasing (index " + std::to_string(i) + ")");
        }
    }
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

// Parses "key = value" lines; brace-delimited values may span lines.
std::map<std::string, std::string> parse_header(std::istream& in) {
    std::map<std::string, std::string> fields;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = lower(trim(line.substr(0, eq)));
        std::string value = trim(line.substr(eq + 1));
        if (!value.empty() && value.front() == '{') {
            while (value.find('}') == std::string::npos && std::getline(in, line)) value += " " + trim(line);
            if (value.find('}') == std::string::npos) throw Error("unterminated brace list for header key '" + key + "'");
            value = value.substr(1, value.find('}') - 1);
        }
        fields[key] = trim(value);
    }
    return fields;
}

std::size_t header_count(const std::map<std::string, std::string>& fields, const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error("BIL header is missing '" + key + "'");
    try {
        std::size_t pos = 0;
        long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size() || v <= 0) throw Error("");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw Error("BIL header field '" + key + "' is not a positive integer: '" + it->second + "'");
    }
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

std::filesystem::path stem_of(const std::filesystem::path& path) {
    auto ext = path.extension();
    if (ext == ".hdr" || ext == ".bil") return std::filesystem::path(path).replace_extension();
    return path;
}

static_assert(std::endian::native == std::endian::little, "BIL payload I/O assumes a little-endian host");

}  // namespace

Hypercube::Hypercube(std::size_t height, std::size_t width, std::vector<double> wavelengths)
    : height_(height), width_(width), wavelengths_(std::move(wavelengths)) {
    check_axis(wavelengths_);
    data_.assign(height_ * width_ * wavelengths_.size(), 0.0);
}

Hypercube::Hypercube(std::size_t height, std::size_t width, std::vector<double> wavelengths,
                     std::vector<double> data)
    : height_(height), width_(width), wavelengths_(std::move(wavelengths)), data_(std::move(data)) {
    check_axis(wavelengths_);
    if (data_.size() != height_ * width_ * wavelengths_.size()) {
        throw Error("cube data length " + std::to_string(data_.size()) + " != " + std::to_string(height_) + "x" +
                    std::to_string(width_) + "x" + std::to_string(wavelengths_.size()));
    }
}

bool Hypercube::same_geometry(const Hypercube& other) const {
    return height_ == other.height_ && width_ == other.width_ && wavelengths_ == other.wavelengths_;
}

Calibrated calibrate_reflectance(const Hypercube& raw, const Hypercube& white, const Hypercube& dark,
                                 const CalibrationOptions& options) {
    if (!raw.same_geometry(white) || !raw.same_geometry(dark)) {
        throw Error("calibration cubes differ in dimensions or wavelength axes");
    }
    Calibrated result{Hypercube(raw.height(), raw.width(), raw.wavelengths()), 0, 0};
    const std::size_t bands = raw.bands();
    for (std::size_t r = 0; r < raw.height(); ++r) {
        for (std::size_t c = 0; c < raw.width(); ++c) {
            for (std::size_t b = 0; b < bands; ++b) {
                const double denom = white.at(r, c, b) - dark.at(r, c, b);
                if (denom == 0.0) {
                    throw Error("white == dark at voxel (line " + std::to_string(r) + ", sample " + std::to_string(c) +
                                ", band " + std::to_string(b) + ")");
                }
                double v = (raw.at(r, c, b) - dark.at(r, c, b)) / denom;
                if (!std::isfinite(v)) {
                    throw Error("non-finite reflectance at voxel (line " + std::to_string(r) + ", sample " +
                                std::to_string(c) + ", band " + std::to_string(b) + ")");
                }
                if (v < 0.0) {
                    v = 0.0;
                    ++result.clamped_low;
                } else if (v > options.clamp_max) {
                    v = options.clamp_max;
                    ++result.clamped_high;
                }
                result.cube.at(r, c, b) = v;
            }
        }
    }
    return result;
}

std::filesystem::path bil_header_path(const std::filesystem::path& path) {
    return std::filesystem::path(stem_of(path)).concat(".hdr");
}

std::filesystem::path bil_data_path(const std::filesystem::path& path) {
    return std::filesystem::path(stem_of(path)).concat(".bil");
}

Hypercube read_bil(const std::filesystem::path& header_path) {
    std::ifstream hdr(header_path);
    if (!hdr) throw Error("cannot open BIL header " + header_path.string());
    const auto fields = parse_header(hdr);

    const std::size_t samples = header_count(fields, "samples");
    const std::size_t lines = header_count(fields, "lines");
    const std::size_t bands = header_count(fields, "bands");

    auto interleave = fields.find("interleave");
    if (interleave == fields.end()) throw Error("BIL header is missing 'interleave'");
    if (lower(interleave->second) != "bil") throw Error("unsupported interleave '" + interleave->second + "' (only bil)");
    if (header_count(fields, "data type") != 4) throw Error("unsupported data type (only 4 = float32)");
    if (auto bo = fields.find("byte order"); bo != fields.end() && trim(bo->second) != "0") {
        throw Error("unsupported byte order (only 0 = little-endian)");
    }
    auto wl = fields.find("wavelength");
    if (wl == fields.end()) throw Error("BIL header is missing 'wavelength'");
    std::vector<double> wavelengths = parse_list(wl->second);
    if (wavelengths.size() != bands) {
        throw Error("header declares " + std::to_string(bands) + " bands but lists " +
                    std::to_string(wavelengths.size()) + " wavelengths");
    }

    const auto data_path = bil_data_path(header_path);
    std::ifstream bin(data_path, std::ios::binary);
    if (!bin) throw Error("cannot open BIL payload " + data_path.string());
    const std::size_t count = samples * lines * bands;
    std::vector<float> raw(count);
    bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(bin.gcount()) != count * sizeof(float)) {
        throw Error("truncated BIL payload " + data_path.string() + ": expected " + std::to_string(count * 4) +
                    " bytes, got " + std::to_string(bin.gcount()));
    }

    Hypercube cube(lines, samples, std::move(wavelengths));
    std::size_t i = 0;
    for (std::size_t r = 0; r < lines; ++r)
        for (std::size_t b = 0; b < bands; ++b)
            for (std::size_t c = 0; c < samples; ++c) cube.at(r, c, b) = raw[i++];
    return cube;
}

void write_bil(const Hypercube& cube, const std::filesystem::path& path) {
    const auto hdr_path = bil_header_path(path);
    const auto data_path = bil_data_path(path);
    if (hdr_path.has_parent_path()) std::filesystem::create_directories(hdr_path.parent_path());

    std::ofstream hdr(hdr_path);
    if (!hdr) throw Error("cannot write BIL header " + hdr_path.string());
    hdr << "ENVI\n";
    hdr << "samples = " << cube.width() << "\n";
    hdr << "lines = " << cube.height() << "\n";
    hdr << "bands = " << cube.bands() << "\n";
    hdr << "header offset = 0\n";
    hdr << "data type = 4\n";
    hdr << "interleave = bil\n";
    hdr << "byte order = 0\n";
    hdr << "wavelength = {";
    hdr.precision(17);
    for (std::size_t b = 0; b < cube.bands(); ++b) hdr << (b ? ", " : "") << cube.wavelengths()[b];
    hdr << "}\n";
    if (!hdr) throw Error("failed writing BIL header " + hdr_path.string());

    std::vector<float> raw;
    raw.reserve(cube.data().size());
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t b = 0; b < cube.bands(); ++b)
            for (std::size_t c = 0; c < cube.width(); ++c) raw.push_back(static_cast<float>(cube.at(r, c, b)));
    std::ofstream bin(data_path, std::ios::binary);
    if (!bin) throw Error("cannot write BIL payload " + data_path.string());
    bin.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!bin) throw Error("failed writing BIL payload " + data_path.string());
}

std::size_t band_index_nearest(std::span<const double> wavelengths, double target_nm) {
    if (wavelengths.empty()) throw Error("band lookup on an empty wavelength axis");
    std::size_t best = 0;
    double best_dist = std::abs(wavelengths[0] - target_nm);
    for (std::size_t i = 1; i < wavelengths.size(); ++i) {
        const double d = std::abs(wavelengths[i] - target_nm);
        if (d < best_dist) {
            best = i;
            best_dist = d;
        }
    }
    return best;
}

Hypercube select_bands(const Hypercube& cube, std::span<const double> targets_nm) {
    if (targets_nm.empty()) throw Error("select_bands needs at least one target wavelength");
    std::vector<std::size_t> idx;
    for (double t : targets_nm) {
        const std::size_t i = band_index_nearest(cube, t);
        if (std::find(idx.begin(), idx.end(), i) != idx.end()) {
            throw Error("targets resolve to the same source band " + std::to_string(i) + " (" +
                        std::to_string(cube.wavelengths()[i]) + " nm)");
        }
        idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end());
    std::vector<double> wl;
    for (auto i : idx) wl.push_back(cube.wavelengths()[i]);
    Hypercube out(cube.height(), cube.width(), std::move(wl));
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t c = 0; c < cube.width(); ++c)
            for (std::size_t k = 0; k < idx.size(); ++k) out.at(r, c, k) = cube.at(r, c, idx[k]);
    return out;
}

std::uint8_t encode_channel(double value, double gamma) {
    const double v = std::clamp(value, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * std::pow(v, 1.0 / gamma)));
}

RgbImage render_rgb(const Hypercube& cube, double gamma, const RgbBands& bands) {
    if (!(gamma > 0.0)) throw Error("gamma must be positive");
    if (cube.bands() == 0) throw Error("render_rgb on a cube with no bands");
    const auto& wl = cube.wavelengths();
    const double lo = std::min({bands.red_nm, bands.green_nm, bands.blue_nm});
    const double hi = std::max({bands.red_nm, bands.green_nm, bands.blue_nm});
    if (wl.front() > lo || wl.back() < hi) {
        throw Error("wavelength range too narrow for RGB rendering: need coverage of " + std::to_string(lo) + "-" +
                    std::to_string(hi) + " nm");
    }
    const std::size_t idx[3] = {band_index_nearest(cube, bands.red_nm), band_index_nearest(cube, bands.green_nm),
                                band_index_nearest(cube, bands.blue_nm)};
    RgbImage img(cube.height(), cube.width());
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t c = 0; c < cube.width(); ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = encode_channel(cube.at(r, c, idx[ch]), gamma);
    return img;
}

}  // namespace hsr
