#pragma once

// Partial, noisy observation of the state: at each observation time a fresh
// random subset of d_y coordinates is observed in independent Gaussian noise
// of standard deviation sigma_y.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace sdeassim {

struct ObservationOperator {
    std::vector<int> indices;  // strictly increasing coordinate indices

    [[nodiscard]] int d_y() const { return static_cast<int>(indices.size()); }

    [[nodiscard]] Vec apply(const Vec& x) const {
        Vec y(d_y());
        for (int r = 0; r < d_y(); ++r) y[r] = x[indices[r]];
        return y;
    }

    [[nodiscard]] Mat dense(int d_x) const {
        Mat a = Mat::Zero(d_y(), d_x);
        for (int r = 0; r < d_y(); ++r) a(r, indices[r]) = 1.0;
        return a;
    }
};

// d_y distinct indices drawn uniformly from {0, ..., d_x-1}, returned sorted
inline ObservationOperator draw_observation_indices(SeededRng& rng, int d_x, int d_y) {
    if (d_y < 1 || d_y > d_x)
        throw std::invalid_argument("draw_observation_indices: need 1 <= d_y <= d_x");
    std::vector<int> pool(d_x);
    std::iota(pool.begin(), pool.end(), 0);
    for (int r = 0; r < d_y; ++r) {
        const auto j = r + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(d_x - r)));
        std::swap(pool[r], pool[j]);
    }
    std::vector<int> idx(pool.begin(), pool.begin() + d_y);
    std::sort(idx.begin(), idx.end());
    return ObservationOperator{std::move(idx)};
}

struct ObservationEvent {
    std::int64_t step = 0;  // outer grid step index n_k
    ObservationOperator op;
    Vec y;
};

inline Vec synthesize_observation(SeededRng& rng, const ObservationOperator& op,
                                  const Vec& x_truth, double sigma_y) {
    Vec y = op.apply(x_truth);
    for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += sigma_y * rng.gaussian();
    return y;
}

}  // namespace sdeassim
