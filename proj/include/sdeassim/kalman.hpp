#pragma once

// Exact Kalman recursion for linear-Gaussian systems, used as an oracle for
// the ensemble filters.  Dynamics between observation times are given by a
// transition matrix and process covariance per interval.  The gain can
// optionally exclude the observation covariance, matching ensemble updates
// whose gain is built from the forecast covariance alone; the posterior
// covariance always uses the Joseph form with the true observation
// covariance, so it reflects what such a filter actually does.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "observation.hpp"

namespace sdeassim {

struct KalmanOptions {
    bool obs_cov_in_gain = true;
};

struct KalmanResult {
    std::vector<Vec> means;  // posterior mean after each observation
    std::vector<Mat> covs;
};

inline KalmanResult exact_kalman(const Mat& transition, const Mat& process_cov,
                                 const std::vector<ObservationEvent>& obs, double sigma_y,
                                 const Vec& m0, const Mat& p0,
                                 const KalmanOptions& options = {}) {
    const Eigen::Index d = m0.size();
    if (transition.rows() != d || transition.cols() != d)
        throw std::invalid_argument("exact_kalman: transition shape mismatch");
    if (process_cov.rows() != d || process_cov.cols() != d)
        throw std::invalid_argument("exact_kalman: process covariance shape mismatch");
    if (p0.rows() != d || p0.cols() != d)
        throw std::invalid_argument("exact_kalman: prior covariance shape mismatch");

    const double r = sigma_y * sigma_y;
    KalmanResult res;
    res.means.reserve(obs.size());
    res.covs.reserve(obs.size());

    Vec m = m0;
    Mat p = p0;
    const Mat eye = Mat::Identity(d, d);
    for (const auto& ev : obs) {
        m = transition * m;
        p = transition * p * transition.transpose() + process_cov;

        const Mat a = ev.op.dense(static_cast<int>(d));
        const Eigen::Index dy = a.rows();
        Mat s = a * p * a.transpose();
        if (options.obs_cov_in_gain) s += r * Mat::Identity(dy, dy);
        const Mat g = (s.ldlt().solve(a * p)).transpose();  // P A^T S^{-1}

        m += g * (ev.y - a * m);
        const Mat iga = eye - g * a;
        p = iga * p * iga.transpose() + r * g * g.transpose();
        p = 0.5 * (p + p.transpose());

        res.means.push_back(m);
        res.covs.push_back(p);
    }
    return res;
}

struct OuTransition {
    double factor;       // per-coordinate mean factor over one interval
    double process_var;  // per-coordinate process variance over one interval
};

// exact transition kernel of the OU process over an interval of length delta
inline OuTransition ou_transition(double theta, double sigma, double delta) {
    if (delta <= 0.0) throw std::invalid_argument("ou_transition: delta must be positive");
    const double a = std::exp(-theta * delta);
    double q;
    if (theta == 0.0) {
        q = sigma * sigma * delta;
    } else {
        q = sigma * sigma * (-std::expm1(-2.0 * theta * delta)) / (2.0 * theta);
    }
    return {a, q};
}

// transition kernel of the Euler-discretized OU chain over one interval of
// length delta walked with n = delta/h inner steps
inline OuTransition ou_euler_transition(double theta, double sigma, double delta, double h) {
    const auto n = static_cast<std::int64_t>(delta / h + 0.5);
    if (n < 1 || std::fabs(static_cast<double>(n) * h - delta) > 1e-9 * delta)
        throw std::invalid_argument("ou_euler_transition: h must divide delta");
    const double a1 = 1.0 - theta * h;
    double a = 1.0, q = 0.0;
    const double inc = sigma * sigma * h;
    for (std::int64_t k = 0; k < n; ++k) {
        q = a1 * a1 * q + inc;
        a *= a1;
    }
    return {a, q};
}

}  // namespace sdeassim
