#pragma once

// Scalar summaries used by the experiment drivers: relative weak error of a
// Monte Carlo functional against a reference, least-squares order fit,
// normalized mean squared tracking error, and completion percentages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace sdeassim {

inline double phi_norm(const Vec& x) { return x.norm(); }
inline double phi_norm_sq(const Vec& x) { return x.squaredNorm(); }

// relative deviation of a Monte Carlo average from its reference value
inline double weak_error(double avg_h, double avg_ref) {
    if (avg_ref == 0.0) throw std::invalid_argument("weak_error: reference average is zero");
    return std::fabs(avg_ref - avg_h) / std::fabs(avg_ref);
}

struct OrderFit {
    double slope = 0.0;
    double intercept = 0.0;
    int points_used = 0;
    int points_dropped = 0;  // non-positive errors excluded from the log fit
};

// least-squares slope of log(error) against log(h)
inline OrderFit fit_weak_order(const std::vector<std::pair<double, double>>& h_and_error) {
    std::vector<double> lx, ly;
    int dropped = 0;
    for (const auto& [h, err] : h_and_error) {
        if (!(h > 0.0)) throw std::invalid_argument("fit_weak_order: step sizes must be positive");
        if (err > 0.0 && std::isfinite(err)) {
            lx.push_back(std::log(h));
            ly.push_back(std::log(err));
        } else {
            ++dropped;
        }
    }
    const auto n = static_cast<int>(lx.size());
    if (n < 3) throw std::invalid_argument("fit_weak_order: need at least three usable points");
    const auto [lo, hi] = std::minmax_element(lx.begin(), lx.end());
    if (*lo == *hi) throw std::invalid_argument("fit_weak_order: degenerate step sizes");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw std::invalid_argument("fit_weak_order: degenerate step sizes");
    OrderFit fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    fit.points_used = n;
    fit.points_dropped = dropped;
    return fit;
}

// sum_k ||truth_k - estimate_k||^2 / sum_k ||truth_k||^2, column per time
inline double nmse(const Mat& truth, const Mat& estimate) {
    if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
        throw std::invalid_argument("nmse: shape mismatch");
    const double denom = truth.squaredNorm();
    if (denom == 0.0) throw std::invalid_argument("nmse: reference trajectory is zero");
    return (truth - estimate).squaredNorm() / denom;
}

inline double completion_rate(std::int64_t completed, std::int64_t total) {
    if (total < 1) throw std::invalid_argument("completion_rate: total must be positive");
    if (completed < 0 || completed > total)
        throw std::invalid_argument("completion_rate: completed out of range");
    return 100.0 * static_cast<double>(completed) / static_cast<double>(total);
}

}  // namespace sdeassim
