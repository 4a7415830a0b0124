#include "hsr/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hsr/csv.hpp"

namespace hsr {

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<double> band_difference(const Hypercube& cube, double wl_a, double wl_b) {
    const std::size_t a = band_index_nearest(cube, wl_a);
    const std::size_t b = band_index_nearest(cube, wl_b);
    std::vector<double> diff(cube.pixels());
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t c = 0; c < cube.width(); ++c) diff[r * cube.width() + c] = cube.at(r, c, a) - cube.at(r, c, b);
    return diff;
}

double otsu_threshold(const std::vector<double>& values) {
    if (values.empty()) throw Error("otsu_threshold on an empty image");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi == lo) return lo;
    constexpr std::size_t kBins = 256;
    const double width = (hi - lo) / kBins;
    std::array<double, kBins> hist{};
    for (double v : values) {
        auto bin = static_cast<std::size_t>((v - lo) / width);
        hist[std::min(bin, kBins - 1)] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (std::size_t i = 0; i < kBins; ++i) sum_all += static_cast<double>(i) * hist[i];

    double weight_bg = 0.0, sum_bg = 0.0, best_var = -1.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < kBins; ++i) {
        weight_bg += hist[i];
        if (weight_bg == 0.0) continue;
        const double weight_fg = total - weight_bg;
        if (weight_fg == 0.0) break;
        sum_bg += static_cast<double>(i) * hist[i];
        const double mean_bg = sum_bg / weight_bg;
        const double mean_fg = (sum_all - sum_bg) / weight_fg;
        const double between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if (between > best_var) {
            best_var = between;
            best = i;
        }
    }
    // upper edge of the last background bin
    return lo + width * static_cast<double>(best + 1);
}

Mask band_difference_mask(const Hypercube& cube, double wl_a, double wl_b, const MaskOptions& options) {
    const auto diff = band_difference(cube, wl_a, wl_b);
    const double threshold = options.threshold ? *options.threshold : otsu_threshold(diff);
    Mask mask(cube.height(), cube.width());
    for (std::size_t i = 0; i < diff.size(); ++i) {
        if (diff[i] > threshold) mask.set(i / cube.width(), i % cube.width(), true);
    }
    if (options.largest_component) mask = largest_component(mask);
    if (mask.count() == 0) {
        throw DegenerateMaskError("band-difference mask is empty at threshold " + std::to_string(threshold));
    }
    return mask;
}

Mask largest_component(const Mask& mask) {
    const std::size_t h = mask.height(), w = mask.width();
    std::vector<int> label(h * w, -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask[start] || label[start] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::size_t size = 0;
        stack.push_back(start);
        label[start] = id;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++size;
            const std::size_t r = p / w, c = p % w;
            auto visit = [&](std::size_t q) {
                if (mask[q] && label[q] < 0) {
                    label[q] = id;
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - w);
            if (r + 1 < h) visit(p + w);
            if (c > 0) visit(p - 1);
            if (c + 1 < w) visit(p + 1);
        }
        sizes.push_back(size);
    }
    Mask out(h, w);
    if (sizes.empty()) return out;
    const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t p = 0; p < h * w; ++p)
        if (label[p] == keep) out.set(p / w, p % w, true);
    return out;
}

Hypercube apply_mask(const Hypercube& cube, const Mask& mask) {
    if (!mask.matches(cube)) throw Error("mask dimensions do not match cube");
    Hypercube out = cube;
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t c = 0; c < cube.width(); ++c)
            if (!mask.at(r, c))
                for (double& v : out.spectrum(r, c)) v = 0.0;
    return out;
}

Spectrum mean_spectrum(const Hypercube& cube, const Mask& mask) {
    if (!mask.matches(cube)) throw Error("mask dimensions do not match cube");
    const std::size_t n = mask.count();
    if (n == 0) throw DegenerateMaskError("mean_spectrum over an empty mask");
    Spectrum s{cube.wavelengths(), std::vector<double>(cube.bands(), 0.0)};
    for (std::size_t r = 0; r < cube.height(); ++r)
        for (std::size_t c = 0; c < cube.width(); ++c) {
            if (!mask.at(r, c)) continue;
            const auto px = cube.spectrum(r, c);
            for (std::size_t b = 0; b < px.size(); ++b) s.values[b] += px[b];
        }
    for (double& v : s.values) v /= static_cast<double>(n);
    return s;
}

Spectrum average_views(const Spectrum& a, const Spectrum& b) {
    if (a.wavelengths != b.wavelengths || a.values.size() != b.values.size()) {
        throw Error("average_views: spectra are on different wavelength axes");
    }
    Spectrum out{a.wavelengths, std::vector<double>(a.values.size())};
    for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = 0.5 * (a.values[i] + b.values[i]);
    return out;
}

void write_pbm(const Mask& mask, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write PBM " + path.string());
    out << "P4\n" << mask.width() << " " << mask.height() << "\n";
    const std::size_t row_bytes = (mask.width() + 7) / 8;
    std::vector<unsigned char> row(row_bytes);
    for (std::size_t r = 0; r < mask.height(); ++r) {
        std::fill(row.begin(), row.end(), 0);
        for (std::size_t c = 0; c < mask.width(); ++c)
            if (mask.at(r, c)) row[c / 8] |= static_cast<unsigned char>(0x80u >> (c % 8));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_bytes));
    }
    if (!out) throw Error("failed writing PBM " + path.string());
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

Mask read_pbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open PBM " + path.string());
    if (next_token(in) != "P4") throw Error("not a binary PBM (P4): " + path.string());
    const std::size_t w = std::stoul(next_token(in));
    const std::size_t h = std::stoul(next_token(in));
    Mask mask(h, w);
    const std::size_t row_bytes = (w + 7) / 8;
    std::vector<unsigned char> row(row_bytes);
    for (std::size_t r = 0; r < h; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_bytes));
        if (static_cast<std::size_t>(in.gcount()) != row_bytes) throw Error("truncated PBM " + path.string());
        for (std::size_t c = 0; c < w; ++c) mask.set(r, c, (row[c / 8] >> (7 - c % 8)) & 1u);
    }
    return mask;
}

void write_spectra_csv(const std::vector<std::string>& ids, const std::vector<Spectrum>& spectra,
                       const std::filesystem::path& path) {
    if (ids.size() != spectra.size()) throw Error("write_spectra_csv: id/spectrum count mismatch");
    CsvWriter csv(path);
    std::vector<std::string> header{"id"};
    if (!spectra.empty())
        for (double wl : spectra.front().wavelengths) header.push_back(format_number(wl));
    csv.row(header);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!spectra.empty() && spectra[i].wavelengths != spectra.front().wavelengths) {
            throw Error("write_spectra_csv: spectra on different axes");
        }
        std::vector<std::string> cells{ids[i]};
        for (double v : spectra[i].values) cells.push_back(format_number(v));
        csv.row(cells);
    }
}

std::vector<std::pair<std::string, Spectrum>> read_spectra_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].empty() || rows[0][0] != "id") throw Error("spectra CSV lacks an 'id' header: " + path.string());
    std::vector<double> wl;
    for (std::size_t i = 1; i < rows[0].size(); ++i) wl.push_back(parse_number(rows[0][i]));
    std::vector<std::pair<std::string, Spectrum>> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw Error("spectra CSV row " + std::to_string(r) + " has wrong width");
        Spectrum s{wl, {}};
        for (std::size_t i = 1; i < rows[r].size(); ++i) s.values.push_back(parse_number(rows[r][i]));
        out.emplace_back(rows[r][0], std::move(s));
    }
    return out;
}

}  // namespace hsr
