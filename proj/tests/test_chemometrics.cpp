#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hsr/chemometrics.hpp"

using namespace hsr;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index b, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd X(n, b);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < b; ++j) X(i, j) = g(rng);
    return X;
}

// Ordinary least squares with intercept through the normal equations.
Eigen::VectorXd ols_predictions(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Eigen::MatrixXd A(X.rows(), X.cols() + 1);
    A.col(0).setOnes();
    A.rightCols(X.cols()) = X;
    const Eigen::VectorXd beta = (A.transpose() * A).ldlt().solve(A.transpose() * y);
    return A * beta;
}

SpectraTable make_table(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    SpectraTable t;
    t.X = X;
    t.y = y;
    for (Eigen::Index i = 0; i < X.rows(); ++i) t.ids.push_back("r" + std::to_string(i));
    for (Eigen::Index j = 0; j < X.cols(); ++j) t.wavelengths.push_back(400.0 + 10.0 * static_cast<double>(j));
    return t;
}

}  // namespace

TEST_CASE("dry matter") {
    CHECK(dry_matter_percent(50, 50) == 100.0);
    CHECK(dry_matter_percent(0, 50) == 0.0);
    CHECK(dry_matter_percent(30, 120) == 25.0);
    CHECK_THROWS_AS(dry_matter_percent(60, 50), Error);
    CHECK_THROWS_AS(dry_matter_percent(1, 0), Error);
}

TEST_CASE("split sizes and assignment") {
    CHECK(split_sizes(141, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{85, 28, 28});
    CHECK(split_sizes(10, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{6, 2, 2});
    CHECK(split_sizes(60, {0.6, 0.2, 0.2}) == std::array<std::size_t, 3>{36, 12, 12});
    CHECK_THROWS_AS(split_sizes(10, {0.5, 0.2, 0.2}), Error);

    const auto a = random_split(141, {0.6, 0.2, 0.2}, 9);
    const auto b = random_split(141, {0.6, 0.2, 0.2}, 9);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);
    std::vector<int> seen(141, 0);
    for (const auto* part : {&a.train, &a.validation, &a.test})
        for (auto i : *part) ++seen[i];
    for (int s : seen) CHECK(s == 1);
    const auto c = random_split(141, {0.6, 0.2, 0.2}, 10);
    CHECK(c.train != a.train);
}

TEST_CASE("full-rank PLSR equals least squares") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::MatrixXd X = random_matrix(20, 8, 100 + seed);
        const Eigen::VectorXd y = random_matrix(20, 1, 200 + seed).col(0);
        const PlsrModel m = fit_plsr(X, y, 8);
        CHECK(m.achieved_lv == 8);
        const Eigen::VectorXd p = predict_plsr(m, X);
        const Eigen::VectorXd o = ols_predictions(X, y);
        CHECK((p - o).norm() / o.norm() < 1e-8);
    }
}

TEST_CASE("single feature slope equals simple regression") {
    const Eigen::MatrixXd X = random_matrix(15, 1, 5);
    Eigen::VectorXd y = 2.5 * X.col(0) + random_matrix(15, 1, 6).col(0) * 0.3;
    const PlsrModel m = fit_plsr(X, y, 1);
    const Eigen::ArrayXd xc = X.col(0).array() - X.col(0).mean();
    const Eigen::ArrayXd yc = y.array() - y.mean();
    CHECK(m.coefficients(0) == doctest::Approx((xc * yc).sum() / (xc * xc).sum()).epsilon(1e-12));
}

TEST_CASE("degenerate responses") {
    const Eigen::MatrixXd X = random_matrix(10, 4, 7);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 3.5);
    const PlsrModel m = fit_plsr(X, y, 2);
    CHECK(m.coefficients.cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd p = predict_plsr(m, random_matrix(3, 4, 8));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(p(i) == doctest::Approx(3.5));
}

TEST_CASE("prediction properties") {
    const Eigen::MatrixXd X = random_matrix(25, 6, 11);
    const Eigen::VectorXd beta = (Eigen::VectorXd(6) << 1.0, -2.0, 0.5, 0.0, 3.0, -1.0).finished();
    const Eigen::VectorXd y = (X * beta).array() + 4.0;
    const PlsrModel m = fit_plsr(X, y, 6);
    CHECK(predict_plsr(m, Eigen::VectorXd(m.x_mean)) == doctest::Approx(m.y_mean).epsilon(1e-12));
    const Eigen::VectorXd p = predict_plsr(m, X);
    CHECK((p - y).cwiseAbs().maxCoeff() < 1e-8);
    Eigen::MatrixXd dup(2, 6);
    dup.row(0) = X.row(3);
    dup.row(1) = X.row(3);
    const Eigen::VectorXd pd = predict_plsr(m, dup);
    CHECK(pd(0) == pd(1));
    CHECK_THROWS_AS(predict_plsr(m, Eigen::MatrixXd(2, 5)), Error);
}

TEST_CASE("LOOCV on a planted one-factor model") {
    // one latent factor drives both X and y
    const Eigen::VectorXd t = random_matrix(20, 1, 21).col(0);
    const Eigen::VectorXd p = random_matrix(8, 1, 22).col(0);
    const Eigen::MatrixXd X = (t * p.transpose()).rowwise() + random_matrix(1, 8, 23).row(0);
    const Eigen::VectorXd y = (3.0 * t).array() + 1.5;
    const LvSelection s = select_lv_loocv(make_table(X, y), 8);
    CHECK(s.best_lv == 1);
    CHECK(s.rmsecv[0] < 1e-6);
    CHECK(s.folds == 20);
    CHECK(s.rmsecv.size() == 8);
}

TEST_CASE("LOOCV matches a refit-per-sample oracle") {
    const Eigen::MatrixXd X = random_matrix(12, 5, 31);
    const Eigen::VectorXd y = X.col(1) - 0.5 * X.col(3) + 0.2 * random_matrix(12, 1, 32).col(0);
    const LvSelection s = select_lv_loocv(make_table(X, y), 4);
    for (std::size_t lv = 1; lv <= 4; ++lv) {
        double sse = 0;
        for (Eigen::Index i = 0; i < 12; ++i) {
            std::vector<Eigen::Index> keep;
            for (Eigen::Index j = 0; j < 12; ++j)
                if (j != i) keep.push_back(j);
            const PlsrModel m = fit_plsr(Eigen::MatrixXd(X(keep, Eigen::all)), Eigen::VectorXd(y(keep)), lv);
            const double e = predict_plsr(m, Eigen::VectorXd(X.row(i).transpose())) - y(i);
            sse += e * e;
        }
        CHECK(s.rmsecv[lv - 1] == doctest::Approx(std::sqrt(sse / 12.0)).epsilon(1e-10));
    }
}

TEST_CASE("regression metrics and RPD") {
    const Eigen::VectorXd y = (Eigen::VectorXd(3) << 1, 2, 3).finished();
    const auto perfect = regression_metrics(y, y);
    CHECK(perfect.r2 == 1.0);
    CHECK(perfect.rmse == 0.0);
    CHECK(regression_metrics(y, Eigen::VectorXd::Constant(3, 2.0)).r2 == doctest::Approx(0.0));
    CHECK(regression_metrics(y, (Eigen::VectorXd(3) << 1, 2, 4).finished()).rmse ==
          doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-15));

    const double a = 7.01 / std::sqrt(2.0);
    const Eigen::VectorXd two = (Eigen::VectorXd(2) << -a, a).finished();
    CHECK(sample_sd(two) == doctest::Approx(7.01).epsilon(1e-14));
    CHECK(rpd(two, 1.96) == doctest::Approx(7.01 / 1.96).epsilon(1e-12));
    CHECK(rpd(two, 1.96) == doctest::Approx(3.577).epsilon(1e-3));
    CHECK(rpd(Eigen::VectorXd::Constant(4, 2.0), 1.0) == 0.0);
    const Eigen::VectorXd sd2 = (Eigen::VectorXd(2) << 0.0, 2.0 * std::sqrt(2.0)).finished();
    CHECK(rpd(sd2, 1.0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("table and model files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "hsr_test_chemometrics";
    const Eigen::MatrixXd X = random_matrix(6, 3, 41);
    const Eigen::VectorXd y = random_matrix(6, 1, 42).col(0);
    const SpectraTable t = make_table(X, y);
    write_table_csv(t, dir / "t.csv");
    const SpectraTable back = read_table_csv(dir / "t.csv");
    CHECK(back.ids == t.ids);
    CHECK(back.X == t.X);
    CHECK(back.y == t.y);
    CHECK(back.wavelengths == t.wavelengths);

    const PlsrModel m = fit_plsr(t, 2);
    write_model(m, t.wavelengths, dir / "m.txt");
    std::vector<double> wl;
    const PlsrModel mb = read_model(dir / "m.txt", &wl);
    CHECK(wl == t.wavelengths);
    CHECK(predict_plsr(mb, X) == predict_plsr(m, X));
}
