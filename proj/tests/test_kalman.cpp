#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <sdeassim/kalman.hpp>

using namespace sdeassim;

namespace {

ObservationEvent scalar_event(std::int64_t step, double y) {
    ObservationEvent ev;
    ev.step = step;
    ev.op = ObservationOperator{{0}};
    ev.y = Vec::Constant(1, y);
    return ev;
}

}  // namespace

TEST_CASE("interval transition kernels", "[kalman]") {
    const auto t = ou_transition(1.0, 0.5, 0.1);
    CHECK(t.factor == Catch::Approx(0.90483741803595957316).epsilon(1e-15));
    CHECK(t.process_var == Catch::Approx(0.022658655865252267666).epsilon(1e-14));

    const auto z = ou_transition(0.0, 0.5, 0.4);
    CHECK(z.factor == 1.0);
    CHECK(z.process_var == Catch::Approx(0.1).epsilon(1e-15));
    CHECK_THROWS(ou_transition(1.0, 0.5, 0.0));

    // one Euler step over the whole interval
    const auto e1 = ou_euler_transition(2.0, 0.5, 0.1, 0.1);
    CHECK(e1.factor == Catch::Approx(0.8).epsilon(1e-15));
    CHECK(e1.process_var == Catch::Approx(0.025).epsilon(1e-15));

    // two steps: a = (1-th)^2, q = s^2 h (1 + (1-th)^2)
    const auto e2 = ou_euler_transition(2.0, 0.5, 0.1, 0.05);
    CHECK(e2.factor == Catch::Approx(0.81).epsilon(1e-14));
    CHECK(e2.process_var == Catch::Approx(0.25 * 0.05 * (1.0 + 0.81)).epsilon(1e-14));

    // fine-step Euler kernel approaches the exact kernel
    const auto ef = ou_euler_transition(1.0, 0.5, 0.1, 1e-5);
    const auto ex = ou_transition(1.0, 0.5, 0.1);
    CHECK(std::fabs(ef.factor - ex.factor) < 1e-5);
    CHECK(std::fabs(ef.process_var - ex.process_var) < 1e-5);
    CHECK_THROWS(ou_euler_transition(1.0, 0.5, 0.1, 0.03));
}

TEST_CASE("two-step scalar recursion matches the frozen fixture", "[kalman]") {
    // theta 1, sigma 0.5, interval 0.1, sigma_y 0.5, prior N(1, 0.5),
    // observations 0.9 and 0.7; reference values computed independently at
    // 50-digit precision
    const auto t = ou_transition(1.0, 0.5, 0.1);
    const Mat a = Mat::Constant(1, 1, t.factor);
    const Mat q = Mat::Constant(1, 1, t.process_var);
    const std::vector<ObservationEvent> obs = {scalar_event(1, 0.9), scalar_event(2, 0.7)};
    const auto res = exact_kalman(a, q, obs, 0.5, Vec::Constant(1, 1.0), Mat::Constant(1, 1, 0.5));

    REQUIRE(res.means.size() == 2);
    CHECK(res.means[0][0] == Catch::Approx(0.90177318459692208541).epsilon(1e-14));
    CHECK(res.covs[0](0, 0) == Catch::Approx(0.15836100044792034857).epsilon(1e-13));
    CHECK(res.means[1][0] == Catch::Approx(0.77205703324804742064).epsilon(1e-14));
    CHECK(res.covs[1](0, 0) == Catch::Approx(0.094648582511730010059).epsilon(1e-13));
}

TEST_CASE("noise-free full observation pins the mean to the data", "[kalman]") {
    const Mat a = Mat::Identity(2, 2) * 0.9;
    const Mat q = Mat::Identity(2, 2) * 0.05;
    ObservationEvent ev;
    ev.step = 1;
    ev.op = ObservationOperator{{0, 1}};
    ev.y = Vec(2);
    ev.y << 0.3, -0.8;
    const auto res = exact_kalman(a, q, {ev}, 0.0, Vec::Constant(2, 1.0), Mat::Identity(2, 2));
    CHECK(res.means[0][0] == Catch::Approx(0.3).margin(1e-12));
    CHECK(res.means[0][1] == Catch::Approx(-0.8).margin(1e-12));
    CHECK(res.covs[0].norm() < 1e-10);
}

TEST_CASE("a diffuse prior defers to the observation", "[kalman]") {
    const Mat a = Mat::Identity(1, 1);
    const Mat q = Mat::Constant(1, 1, 0.01);
    const auto res = exact_kalman(a, q, {scalar_event(1, 2.5)}, 1.0, Vec::Constant(1, -40.0),
                                  Mat::Constant(1, 1, 1e10));
    CHECK(res.means[0][0] == Catch::Approx(2.5).margin(1e-6));
}

TEST_CASE("gain convention with and without the observation covariance", "[kalman]") {
    // transition identity, process noise builds the forecast variance to 1
    const Mat a = Mat::Identity(1, 1);
    const Mat q = Mat::Constant(1, 1, 1.0);
    const Vec m0 = Vec::Zero(1);
    const Mat p0 = Mat::Zero(1, 1);
    const auto obs = std::vector<ObservationEvent>{scalar_event(1, 2.0)};

    KalmanOptions with, without;
    with.obs_cov_in_gain = true;
    without.obs_cov_in_gain = false;

    // forecast variance 1, r = 1: gain 1/2 vs 1
    const auto rw = exact_kalman(a, q, obs, 1.0, m0, p0, with);
    CHECK(rw.means[0][0] == Catch::Approx(1.0).margin(1e-12));
    const auto ro = exact_kalman(a, q, obs, 1.0, m0, p0, without);
    CHECK(ro.means[0][0] == Catch::Approx(2.0).margin(1e-12));

    // the covariance update still accounts for the true observation noise:
    // with gain 1 the posterior variance is r = 1 (Joseph form)
    CHECK(ro.covs[0](0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(rw.covs[0](0, 0) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("partial observation leaves uncorrelated coordinates alone", "[kalman]") {
    const Mat a = Mat::Identity(2, 2) * 0.95;
    Mat q = Mat::Zero(2, 2);
    q(0, 0) = 0.1;
    q(1, 1) = 0.2;
    ObservationEvent ev;
    ev.step = 1;
    ev.op = ObservationOperator{{1}};
    ev.y = Vec::Constant(1, 5.0);
    Mat p0 = Mat::Zero(2, 2);
    p0(0, 0) = 0.3;
    p0(1, 1) = 0.4;
    Vec m0(2);
    m0 << 1.0, 2.0;
    const auto res = exact_kalman(a, q, {ev}, 0.5, m0, p0);
    // coordinate 0 keeps its forecast mean
    CHECK(res.means[0][0] == Catch::Approx(0.95).margin(1e-12));
    CHECK(res.means[0][1] > 1.9);  // pulled toward the observation
    CHECK(res.covs[0](0, 1) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("posterior covariance stays symmetric positive definite", "[kalman]") {
    const Mat a = Mat::Identity(3, 3) * 0.9;
    const Mat q = Mat::Identity(3, 3) * 0.1;
    std::vector<ObservationEvent> obs;
    for (int k = 1; k <= 5; ++k) {
        ObservationEvent ev;
        ev.step = k;
        ev.op = ObservationOperator{{0, 2}};
        ev.y = Vec::Constant(2, 0.5 * k);
        obs.push_back(ev);
    }
    const auto res = exact_kalman(a, q, obs, 0.3, Vec::Zero(3), Mat::Identity(3, 3));
    for (const auto& p : res.covs) {
        CHECK((p - p.transpose()).norm() < 1e-14);
        const Eigen::SelfAdjointEigenSolver<Mat> es(p);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("shape validation", "[kalman]") {
    const Mat a = Mat::Identity(2, 2);
    const Mat q = Mat::Identity(2, 2);
    const Vec m0 = Vec::Zero(2);
    const Mat p0 = Mat::Identity(2, 2);
    CHECK_THROWS(exact_kalman(Mat::Identity(3, 3), q, {}, 1.0, m0, p0));
    CHECK_THROWS(exact_kalman(a, Mat::Identity(3, 3), {}, 1.0, m0, p0));
    CHECK_THROWS(exact_kalman(a, q, {}, 1.0, m0, Mat::Identity(3, 3)));
}
