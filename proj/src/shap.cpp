#include "hsr/shap.hpp"

#include <algorithm>

#include "hsr/csv.hpp"

namespace hsr {

namespace {

Eigen::VectorXd background_mean(const PlsrModel& model, const Eigen::MatrixXd& background) {
    if (background.rows() == 0) throw Error("SHAP background is empty");
    if (static_cast<std::size_t>(background.cols()) != model.width()) throw Error("SHAP background width differs from model");
    return background.colwise().mean().transpose();
}

}  // namespace

Eigen::VectorXd linear_shap(const PlsrModel& model, const Eigen::MatrixXd& background, const Eigen::VectorXd& x) {
    const Eigen::VectorXd mu = background_mean(model, background);
    if (static_cast<std::size_t>(x.size()) != model.width()) throw Error("SHAP instance width differs from model");
    return model.coefficients.array() * (x - mu).array();
}

ShapReport mean_abs_shap(const PlsrModel& model, const Eigen::MatrixXd& background, const Eigen::MatrixXd& eval_set,
                         const std::vector<double>& wavelengths) {
    if (eval_set.rows() == 0) throw Error("SHAP evaluation set is empty");
    if (static_cast<std::size_t>(eval_set.cols()) != model.width()) throw Error("SHAP evaluation width differs from model");
    if (wavelengths.size() != model.width()) throw Error("SHAP wavelength count differs from model");
    const Eigen::VectorXd mu = background_mean(model, background);

    ShapReport report;
    report.wavelengths = wavelengths;
    report.base_value = predict_plsr(model, mu);
    report.phi = (eval_set.rowwise() - mu.transpose()).array().rowwise() * model.coefficients.transpose().array();

    const Eigen::VectorXd importance = report.phi.cwiseAbs().colwise().mean().transpose();
    for (std::size_t j = 0; j < model.width(); ++j) {
        report.ranking.push_back({wavelengths[j], j, importance(static_cast<Eigen::Index>(j))});
    }
    std::sort(report.ranking.begin(), report.ranking.end(), [](const FeatureImportance& a, const FeatureImportance& b) {
        if (a.mean_abs_shap != b.mean_abs_shap) return a.mean_abs_shap > b.mean_abs_shap;
        return a.wavelength < b.wavelength;
    });
    return report;
}

void write_importance_csv(const ShapReport& report, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"rank", "wavelength_nm", "mean_abs_shap"});
    for (std::size_t i = 0; i < report.ranking.size(); ++i) {
        csv.row({std::to_string(i + 1), format_number(report.ranking[i].wavelength),
                 format_number(report.ranking[i].mean_abs_shap)});
    }
}

}  // namespace hsr
