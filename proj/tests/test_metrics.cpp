#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <sdeassim/csv.hpp>
#include <sdeassim/metrics.hpp>

using namespace sdeassim;

TEST_CASE("endpoint functionals", "[metrics]") {
    Vec x(3);
    x << 3.0, 0.0, 4.0;
    CHECK(phi_norm(x) == 5.0);
    CHECK(phi_norm_sq(x) == 25.0);
}

TEST_CASE("relative weak error", "[metrics]") {
    CHECK(weak_error(1.1, 1.0) == Catch::Approx(0.1).margin(1e-15));
    CHECK(weak_error(0.8, -1.0) == Catch::Approx(1.8).margin(1e-15));
    CHECK(weak_error(2.0, 2.0) == 0.0);
    CHECK_THROWS(weak_error(1.0, 0.0));
}

TEST_CASE("order fit recovers an exact power law", "[metrics]") {
    std::vector<std::pair<double, double>> pts;
    for (const double h : {0.2, 0.1, 0.05, 0.025}) pts.emplace_back(h, 3.0 * h);
    const auto fit = fit_weak_order(pts);
    CHECK(fit.slope == Catch::Approx(1.0).margin(1e-12));
    CHECK(std::exp(fit.intercept) == Catch::Approx(3.0).margin(1e-10));
    CHECK(fit.points_used == 4);
    CHECK(fit.points_dropped == 0);

    // quadratic law
    std::vector<std::pair<double, double>> sq;
    for (const double h : {0.2, 0.1, 0.05}) sq.emplace_back(h, 0.7 * h * h);
    CHECK(fit_weak_order(sq).slope == Catch::Approx(2.0).margin(1e-10));
}

TEST_CASE("order fit drops unusable points and validates input", "[metrics]") {
    std::vector<std::pair<double, double>> pts = {
        {0.2, 0.4}, {0.1, 0.2}, {0.05, 0.1}, {0.025, 0.0}};
    const auto fit = fit_weak_order(pts);
    CHECK(fit.points_used == 3);
    CHECK(fit.points_dropped == 1);
    CHECK(fit.slope == Catch::Approx(1.0).margin(1e-10));

    CHECK_THROWS(fit_weak_order({{0.1, 1.0}, {0.05, 0.5}}));          // too few points
    CHECK_THROWS(fit_weak_order({{-0.1, 1.0}, {0.05, 0.5}, {0.02, 0.2}}));
    CHECK_THROWS(fit_weak_order({{0.1, 1.0}, {0.1, 0.5}, {0.1, 0.2}}));  // degenerate h
}

TEST_CASE("normalized tracking error", "[metrics]") {
    Mat truth(2, 2), est(2, 2);
    truth << 1.0, 0.0, 0.0, 2.0;
    est << 0.0, 0.0, 0.0, 0.0;
    CHECK(nmse(truth, truth) == 0.0);
    CHECK(nmse(truth, est) == 1.0);
    est << 1.0, 1.0, 0.0, 2.0;
    CHECK(nmse(truth, est) == Catch::Approx(1.0 / 5.0).margin(1e-15));
    CHECK_THROWS(nmse(truth, Mat::Zero(2, 3)));
    CHECK_THROWS(nmse(Mat::Zero(2, 2), Mat::Zero(2, 2)));
}

TEST_CASE("completion percentages", "[metrics]") {
    CHECK(completion_rate(0, 10) == 0.0);
    CHECK(completion_rate(10, 10) == 100.0);
    CHECK(completion_rate(19, 20) == 95.0);
    CHECK_THROWS(completion_rate(1, 0));
    CHECK_THROWS(completion_rate(11, 10));
    CHECK_THROWS(completion_rate(-1, 10));
}

TEST_CASE("numbers round-trip through the row format", "[metrics]") {
    CHECK(format_g17(0.1) == "0.10000000000000001");
    CHECK(format_g17(1.0) == "1");
    CHECK(format_g17(-2.5) == "-2.5");

    MetricRow row;
    row.experiment = "weak-error";
    row.scheme = "spc";
    row.h = 0.05;
    row.sigma = 0.5;
    row.metric = "phi";
    row.value = 1.0 / 3.0;
    const auto line = to_csv_line(row);
    CHECK(line.find("weak-error") == 0);
    CHECK(line.find("0.33333333333333331") != std::string::npos);
    CHECK(line.find("spc") != std::string::npos);

    std::vector<MetricRow> rows = {row};
    const auto text = rows_to_csv(rows);
    CHECK(text.find(kCsvHeader) == 0);
    CHECK(text.back() == '\n');
}
