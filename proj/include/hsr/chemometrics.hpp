#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hsr/common.hpp"

namespace hsr {

/// N samples x B wavelengths with one reference value per sample.
struct SpectraTable {
    std::vector<std::string> ids;
    Eigen::MatrixXd X;  // N x B
    Eigen::VectorXd y;  // N
    std::vector<double> wavelengths;

    std::size_t samples() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t features() const { return static_cast<std::size_t>(X.cols()); }

    /// Throws unless counts agree and every value is finite.
    void validate() const;
    SpectraTable rows(const std::vector<std::size_t>& index) const;
    SpectraTable columns(const std::vector<std::size_t>& index) const;
};

void write_table_csv(const SpectraTable& table, const std::filesystem::path& path);
SpectraTable read_table_csv(const std::filesystem::path& path);

struct PlsrOptions {
    bool autoscale = false;
    double tolerance = 1e-10;
    int max_inner_iterations = 500;
};

struct PlsrModel {
    Eigen::VectorXd x_mean;
    Eigen::VectorXd x_scale;       // ones unless autoscaled
    double y_mean = 0.0;
    Eigen::VectorXd coefficients;  // in original X units
    std::size_t n_lv = 0;          // requested
    std::size_t achieved_lv = 0;   // < n_lv when a component vanished

    Eigen::MatrixXd weights;   // B x achieved
    Eigen::MatrixXd loadings;  // B x achieved
    Eigen::VectorXd y_loadings;
    Eigen::MatrixXd scores;    // N x achieved

    std::size_t width() const { return static_cast<std::size_t>(x_mean.size()); }
};

/// Percentage dry matter, 100 * w_dry / w_total.
double dry_matter_percent(double w_dry, double w_total);

struct SplitAssignment {
    std::vector<std::size_t> train, validation, test;
};

/// Largest-remainder sizes for `n` items under `ratios`.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Shuffled partition of 0..n-1 into train/validation/test.
SplitAssignment random_split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);

/// PLS1 fit by NIPALS with X and y deflation.
PlsrModel fit_plsr(const SpectraTable& table, std::size_t n_lv, const PlsrOptions& options = {});
PlsrModel fit_plsr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_lv,
                   const PlsrOptions& options = {});

Eigen::VectorXd predict_plsr(const PlsrModel& model, const Eigen::MatrixXd& X);
double predict_plsr(const PlsrModel& model, const Eigen::VectorXd& x);

struct LvSelection {
    std::size_t best_lv = 0;
    std::vector<double> rmsecv;  // index k holds RMSECV for k+1 LVs
    std::size_t folds = 0;
};

/// Leave-one-out RMSECV for 1..max_lv latent variables; ties go to fewer LVs.
LvSelection select_lv_loocv(const SpectraTable& table, std::size_t max_lv, const PlsrOptions& options = {});

/// Cross-validated predictions for every LV count 1..max_lv using `folds` contiguous-modulo folds.
/// Column k holds predictions with k+1 LVs. folds == N gives leave-one-out.
Eigen::MatrixXd cross_val_predictions(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t max_lv,
                                      std::size_t folds, const PlsrOptions& options = {});

struct RegressionMetrics {
    double r2 = 0.0;
    double rmse = 0.0;
};

RegressionMetrics regression_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat);

/// Sample standard deviation of y_test over RMSEP.
double rpd(const Eigen::VectorXd& y_test, double rmsep);

double sample_sd(const Eigen::VectorXd& v);

void write_model(const PlsrModel& model, const std::vector<double>& wavelengths, const std::filesystem::path& path);
PlsrModel read_model(const std::filesystem::path& path, std::vector<double>* wavelengths = nullptr);

}  // namespace hsr
