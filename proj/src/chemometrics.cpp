#include "hsr/chemometrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hsr/csv.hpp"

namespace hsr {

void SpectraTable::validate() const {
    if (ids.size() != static_cast<std::size_t>(X.rows()) || static_cast<std::size_t>(y.size()) != ids.size()) {
        throw Error("spectra table: id/row/y counts differ");
    }
    if (wavelengths.size() != static_cast<std::size_t>(X.cols())) {
        throw Error("spectra table: wavelength count differs from column count");
    }
    if (!X.allFinite() || !y.allFinite()) throw Error("spectra table contains non-finite values");
}

SpectraTable SpectraTable::rows(const std::vector<std::size_t>& index) const {
    SpectraTable out;
    out.wavelengths = wavelengths;
    out.X.resize(static_cast<Eigen::Index>(index.size()), X.cols());
    out.y.resize(static_cast<Eigen::Index>(index.size()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(index[i]);
        out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
        out.y(static_cast<Eigen::Index>(i)) = y(r);
        out.ids.push_back(ids[index[i]]);
    }
    return out;
}

SpectraTable SpectraTable::columns(const std::vector<std::size_t>& index) const {
    SpectraTable out;
    out.ids = ids;
    out.y = y;
    out.X.resize(X.rows(), static_cast<Eigen::Index>(index.size()));
    for (std::size_t j = 0; j < index.size(); ++j) {
        out.X.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(index[j]));
        out.wavelengths.push_back(wavelengths[index[j]]);
    }
    return out;
}

void write_table_csv(const SpectraTable& table, const std::filesystem::path& path) {
    table.validate();
    CsvWriter csv(path);
    std::vector<std::string> header{"id", "y"};
    for (double wl : table.wavelengths) header.push_back(format_number(wl));
    csv.row(header);
    for (Eigen::Index i = 0; i < table.X.rows(); ++i) {
        std::vector<std::string> cells{table.ids[static_cast<std::size_t>(i)], format_number(table.y(i))};
        for (Eigen::Index j = 0; j < table.X.cols(); ++j) cells.push_back(format_number(table.X(i, j)));
        csv.row(cells);
    }
}

SpectraTable read_table_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() < 3 || rows[0][0] != "id" || rows[0][1] != "y") {
        throw Error("spectra table CSV must start with header 'id,y,<wavelengths>': " + path.string());
    }
    SpectraTable t;
    for (std::size_t i = 2; i < rows[0].size(); ++i) t.wavelengths.push_back(parse_number(rows[0][i]));
    const auto n = static_cast<Eigen::Index>(rows.size() - 1);
    const auto b = static_cast<Eigen::Index>(t.wavelengths.size());
    t.X.resize(n, b);
    t.y.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r + 1)];
        if (row.size() != rows[0].size()) throw Error(path.string() + ": row " + std::to_string(r + 1) + " has wrong width");
        t.ids.push_back(row[0]);
        t.y(r) = parse_number(row[1]);
        for (Eigen::Index j = 0; j < b; ++j) t.X(r, j) = parse_number(row[static_cast<std::size_t>(j + 2)]);
    }
    t.validate();
    return t;
}

double dry_matter_percent(double w_dry, double w_total) {
    if (!(w_total > 0.0) || w_dry < 0.0 || w_dry > w_total) {
        throw Error("dry matter requires 0 <= w_dry <= w_total and w_total > 0");
    }
    return 100.0 * w_dry / w_total;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
    for (double r : ratios)
        if (r < 0.0) throw Error("split ratios must be non-negative");
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    return sizes;
}

SplitAssignment random_split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
    if (n < 3) throw Error("random_split needs at least 3 items");
    const auto sizes = split_sizes(n, ratios);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    SplitAssignment s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                        perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

namespace {

struct Components {
    Eigen::MatrixXd W, P, T;
    Eigen::VectorXd q;
    std::size_t count = 0;
};

constexpr double kVanish = 1e-12;

Components nipals(Eigen::MatrixXd X, Eigen::VectorXd y, std::size_t n_lv, const PlsrOptions& opt) {
    const Eigen::Index n = X.rows(), b = X.cols();
    Components c;
    c.W.resize(b, static_cast<Eigen::Index>(n_lv));
    c.P.resize(b, static_cast<Eigen::Index>(n_lv));
    c.T.resize(n, static_cast<Eigen::Index>(n_lv));
    c.q.resize(static_cast<Eigen::Index>(n_lv));
    const double initial = (X.transpose() * y).norm();

    for (std::size_t a = 0; a < n_lv; ++a) {
        Eigen::VectorXd u = y;
        Eigen::VectorXd w, t, t_old;
        double q = 0.0;
        bool vanished = false;
        for (int it = 0; it < opt.max_inner_iterations; ++it) {
            w = X.transpose() * u;
            const double wn = w.norm();
            if (wn < kVanish || wn < kVanish * initial) {
                vanished = true;
                break;
            }
            w /= wn;
            t = X * w;
            const double tt = t.squaredNorm();
            if (tt < kVanish * kVanish) {
                vanished = true;
                break;
            }
            q = y.dot(t) / tt;
            if (q == 0.0) {
                vanished = true;
                break;
            }
            u = y / q;
            if (it > 0 && (t - t_old).norm() <= opt.tolerance * t.norm()) break;
            t_old = t;
        }
        if (vanished) break;
        const double tt = t.squaredNorm();
        Eigen::VectorXd p = X.transpose() * t / tt;
        X -= t * p.transpose();
        y -= q * t;
        const auto col = static_cast<Eigen::Index>(a);
        c.W.col(col) = w;
        c.P.col(col) = p;
        c.T.col(col) = t;
        c.q(col) = q;
        c.count = a + 1;
    }
    const auto k = static_cast<Eigen::Index>(c.count);
    c.W.conservativeResize(b, k);
    c.P.conservativeResize(b, k);
    c.T.conservativeResize(n, k);
    c.q.conservativeResize(k);
    return c;
}

// Regression vector in the centered/scaled space using the first k components.
Eigen::VectorXd prefix_coefficients(const Components& c, std::size_t k) {
    k = std::min(k, c.count);
    if (k == 0) return Eigen::VectorXd::Zero(c.W.rows());
    const auto kk = static_cast<Eigen::Index>(k);
    const Eigen::MatrixXd W = c.W.leftCols(kk);
    const Eigen::MatrixXd PtW = c.P.leftCols(kk).transpose() * W;
    return W * PtW.partialPivLu().solve(c.q.head(kk));
}

struct Prepared {
    Eigen::MatrixXd Xc;
    Eigen::VectorXd yc;
    Eigen::VectorXd mean, scale;
    double y_mean;
};

Prepared prepare(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool autoscale) {
    Prepared p;
    p.mean = X.colwise().mean().transpose();
    p.scale = Eigen::VectorXd::Ones(X.cols());
    p.Xc = X.rowwise() - p.mean.transpose();
    if (autoscale && X.rows() > 1) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double sd = std::sqrt(p.Xc.col(j).squaredNorm() / static_cast<double>(X.rows() - 1));
            if (sd > 0.0) p.scale(j) = sd;
        }
        p.Xc = p.Xc.array().rowwise() / p.scale.transpose().array();
    }
    p.y_mean = y.mean();
    p.yc = y.array() - p.y_mean;
    return p;
}

}  // namespace

PlsrModel fit_plsr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_lv, const PlsrOptions& options) {
    const auto n = static_cast<std::size_t>(X.rows());
    const auto b = static_cast<std::size_t>(X.cols());
    if (static_cast<std::size_t>(y.size()) != n) throw Error("fit_plsr: X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
    if (n < 2) throw Error("fit_plsr needs at least 2 samples");
    if (n_lv < 1 || n_lv > std::min(n - 1, b)) {
        throw Error("fit_plsr: n_lv=" + std::to_string(n_lv) + " outside [1, min(N-1, B)=" +
                    std::to_string(std::min(n - 1, b)) + "]");
    }
    const Prepared prep = prepare(X, y, options.autoscale);
    const Components c = nipals(prep.Xc, prep.yc, n_lv, options);

    PlsrModel m;
    m.x_mean = prep.mean;
    m.x_scale = prep.scale;
    m.y_mean = prep.y_mean;
    m.n_lv = n_lv;
    m.achieved_lv = c.count;
    m.coefficients = prefix_coefficients(c, c.count).array() / prep.scale.array();
    m.weights = c.W;
    m.loadings = c.P;
    m.y_loadings = c.q;
    m.scores = c.T;
    return m;
}

PlsrModel fit_plsr(const SpectraTable& table, std::size_t n_lv, const PlsrOptions& options) {
    table.validate();
    return fit_plsr(table.X, table.y, n_lv, options);
}

Eigen::VectorXd predict_plsr(const PlsrModel& model, const Eigen::MatrixXd& X) {
    if (static_cast<std::size_t>(X.cols()) != model.width()) {
        throw Error("predict_plsr: X has " + std::to_string(X.cols()) + " columns, model expects " +
                    std::to_string(model.width()));
    }
    return ((X.rowwise() - model.x_mean.transpose()) * model.coefficients).array() + model.y_mean;
}

double predict_plsr(const PlsrModel& model, const Eigen::VectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != model.width()) throw Error("predict_plsr: width mismatch");
    return model.y_mean + (x - model.x_mean).dot(model.coefficients);
}

Eigen::MatrixXd cross_val_predictions(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t max_lv,
                                      std::size_t folds, const PlsrOptions& options) {
    const Eigen::Index n = X.rows();
    if (folds < 2 || folds > static_cast<std::size_t>(n)) throw Error("cross-validation folds out of range");
    Eigen::MatrixXd pred(n, static_cast<Eigen::Index>(max_lv));
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, held;
        for (Eigen::Index i = 0; i < n; ++i) (static_cast<std::size_t>(i) % folds == f ? held : train).push_back(i);
        const Eigen::MatrixXd Xt = X(train, Eigen::all);
        const Eigen::VectorXd yt = y(train);
        const Prepared prep = prepare(Xt, yt, options.autoscale);
        const std::size_t usable = std::min<std::size_t>(max_lv, std::min<std::size_t>(train.size() - 1, static_cast<std::size_t>(X.cols())));
        const Components c = nipals(prep.Xc, prep.yc, usable, options);
        const Eigen::MatrixXd Xh = (X(held, Eigen::all).rowwise() - prep.mean.transpose()).array().rowwise() /
                                   prep.scale.transpose().array();
        for (std::size_t k = 1; k <= max_lv; ++k) {
            const Eigen::VectorXd beta = prefix_coefficients(c, k);
            const Eigen::VectorXd yh = (Xh * beta).array() + prep.y_mean;
            for (std::size_t h = 0; h < held.size(); ++h) pred(held[h], static_cast<Eigen::Index>(k - 1)) = yh(static_cast<Eigen::Index>(h));
        }
    }
    return pred;
}

LvSelection select_lv_loocv(const SpectraTable& table, std::size_t max_lv, const PlsrOptions& options) {
    table.validate();
    const std::size_t n = table.samples();
    if (n < 3) throw Error("LOOCV needs at least 3 samples");
    if (max_lv < 1 || max_lv > std::min(n - 1, table.features())) {
        throw Error("select_lv_loocv: max_lv=" + std::to_string(max_lv) + " outside [1, " +
                    std::to_string(std::min(n - 1, table.features())) + "]");
    }
    const Eigen::MatrixXd pred = cross_val_predictions(table.X, table.y, max_lv, n, options);
    LvSelection sel;
    sel.folds = n;
    for (std::size_t k = 0; k < max_lv; ++k) {
        const double mse = (pred.col(static_cast<Eigen::Index>(k)) - table.y).squaredNorm() / static_cast<double>(n);
        sel.rmsecv.push_back(std::sqrt(mse));
    }
    const double best = *std::min_element(sel.rmsecv.begin(), sel.rmsecv.end());
    for (std::size_t k = 0; k < max_lv; ++k) {
        if (sel.rmsecv[k] <= best + 1e-12) {
            sel.best_lv = k + 1;
            break;
        }
    }
    return sel;
}

RegressionMetrics regression_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
    if (y.size() != y_hat.size() || y.size() < 2) throw Error("regression_metrics needs equal-length vectors of size >= 2");
    const double ss_res = (y - y_hat).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    if (ss_tot == 0.0) throw Error("regression_metrics: reference values have zero variance, R2 undefined");
    return {1.0 - ss_res / ss_tot, std::sqrt(ss_res / static_cast<double>(y.size()))};
}

double sample_sd(const Eigen::VectorXd& v) {
    if (v.size() < 2) throw Error("sample standard deviation needs at least 2 values");
    return std::sqrt((v.array() - v.mean()).matrix().squaredNorm() / static_cast<double>(v.size() - 1));
}

double rpd(const Eigen::VectorXd& y_test, double rmsep) {
    if (!(rmsep > 0.0)) throw Error("rpd: RMSEP must be positive");
    return sample_sd(y_test) / rmsep;
}

namespace {

std::string join(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v(i));
    return s;
}

Eigen::VectorXd split_vector(const std::string& text) {
    std::vector<double> vals;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) vals.push_back(parse_number(item));
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

void write_model(const PlsrModel& model, const std::vector<double>& wavelengths, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model " + path.string());
    Eigen::VectorXd wl = Eigen::Map<const Eigen::VectorXd>(wavelengths.data(), static_cast<Eigen::Index>(wavelengths.size()));
    out << "type=plsr\n";
    out << "n_lv=" << model.n_lv << "\n";
    out << "achieved_lv=" << model.achieved_lv << "\n";
    out << "y_mean=" << format_number(model.y_mean) << "\n";
    out << "wavelengths=" << join(wl) << "\n";
    out << "x_mean=" << join(model.x_mean) << "\n";
    out << "x_scale=" << join(model.x_scale) << "\n";
    out << "coefficients=" << join(model.coefficients) << "\n";
    out << "y_loadings=" << join(model.y_loadings) << "\n";
    if (!out) throw Error("failed writing model " + path.string());
}

PlsrModel read_model(const std::filesystem::path& path, std::vector<double>* wavelengths) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"n_lv", "achieved_lv", "y_mean", "x_mean", "x_scale", "coefficients"})
        if (!kv.count(key)) throw Error("model file " + path.string() + " lacks '" + key + "'");
    PlsrModel m;
    m.n_lv = std::stoul(kv["n_lv"]);
    m.achieved_lv = std::stoul(kv["achieved_lv"]);
    m.y_mean = parse_number(kv["y_mean"]);
    m.x_mean = split_vector(kv["x_mean"]);
    m.x_scale = split_vector(kv["x_scale"]);
    m.coefficients = split_vector(kv["coefficients"]);
    if (kv.count("y_loadings") && !kv["y_loadings"].empty()) m.y_loadings = split_vector(kv["y_loadings"]);
    if (m.x_mean.size() != m.coefficients.size()) throw Error("model file " + path.string() + " has inconsistent widths");
    if (wavelengths) {
        const Eigen::VectorXd wl = split_vector(kv["wavelengths"]);
        wavelengths->assign(wl.data(), wl.data() + wl.size());
    }
    return m;
}

}  // namespace hsr
