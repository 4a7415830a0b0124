#pragma once

#include <filesystem>
#include <vector>

#include "hsr/chemometrics.hpp"

namespace hsr {

struct FeatureImportance {
    double wavelength = 0.0;
    std::size_t feature = 0;
    double mean_abs_shap = 0.0;
};

struct ShapReport {
    std::vector<double> wavelengths;
    Eigen::MatrixXd phi;  // instances x features
    double base_value = 0.0;
    std::vector<FeatureImportance> ranking;  // descending importance
};

/// Exact interventional Shapley values of the affine model: coef_j * (x_j - mean(background_j)).
Eigen::VectorXd linear_shap(const PlsrModel& model, const Eigen::MatrixXd& background, const Eigen::VectorXd& x);

/// Attributions for every row of `eval_set` and the mean-|phi| ranking (ties by wavelength ascending).
ShapReport mean_abs_shap(const PlsrModel& model, const Eigen::MatrixXd& background, const Eigen::MatrixXd& eval_set,
                         const std::vector<double>& wavelengths);

void write_importance_csv(const ShapReport& report, const std::filesystem::path& path);

}  // namespace hsr
