#pragma once

// Shared vocabulary for block-structured SDE integration: state types, time
// grid, explosion bookkeeping, stream purposes, and the block-model interface
// consumed by the integration schemes and filters.
//
// A model describes dX = f(X, t) dt + S(X, t) dW with block-diagonal S:
// the state of dimension d_x splits into q contiguous blocks of size
// m_x = d_x / q, and diffusion_block(i, ...) yields the m_x x m_x diagonal
// block acting on the increments of block i.

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>

#include "rng.hpp"

namespace sdeassim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kDefaultExplosionBound = 1e10;

// named stream purposes for derive_rng / derive_member_rng
enum Stream : std::uint64_t {
    kStreamSpinUp = 1,
    kStreamTruthWiener = 2,
    kStreamObsIndices = 3,
    kStreamObsNoise = 4,
    kStreamEnsembleInit = 5,
    kStreamPathWiener = 6,
    kStreamMemberWiener = 7,
    kStreamMemberUpdate = 8,
};

struct TimeGrid {
    double t0 = 0.0;
    double t_end = 1.0;
    std::int64_t n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double t_end_, std::int64_t n)
        : t0(t0_), t_end(t_end_), n_steps(n) {
        if (n_steps < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
        if (!(t_end > t0)) throw std::invalid_argument("TimeGrid: t_end must exceed t0");
    }

    [[nodiscard]] double h() const { return (t_end - t0) / static_cast<double>(n_steps); }
    [[nodiscard]] double time_at(std::int64_t k) const { return t0 + static_cast<double>(k) * h(); }
};

enum class RunStatus { Completed, Exploded };

struct RunOutcome {
    RunStatus status = RunStatus::Completed;
    std::int64_t exploded_step = -1;  // outer step index at which the bound was violated
    Vec final_state;
};

// true iff the state has left the admissible region: any non-finite entry or
// any entry with |x_i| strictly greater than bound
inline bool check_state(const Vec& x, double bound = kDefaultExplosionBound) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (!std::isfinite(v) || std::fabs(v) > bound) return true;
    }
    return false;
}

template <class M>
concept BlockModel = requires(const M& m, const Vec& x, double t, Vec& out, double* buf, int i) {
    { m.dim() } -> std::convertible_to<int>;
    { m.blocks() } -> std::convertible_to<int>;
    { m.block_dim() } -> std::convertible_to<int>;
    m.drift(x, t, out);
    m.drift_block(i, x, t, buf);
    m.diffusion_block(i, x, t, buf);
};

// Type-erased block model for ad-hoc dynamics (tests, custom systems).  The
// per-block drift evaluator is optional; without one, drift_block falls back
// to evaluating the full drift and slicing, which is correct but costs
// O(d_x) per block.
class BlockSde {
public:
    using DriftFn = std::function<void(const Vec&, double, Vec&)>;
    using BlockFn = std::function<void(int, const Vec&, double, double*)>;

    BlockSde(int d_x, int q, DriftFn drift, BlockFn diffusion_block, BlockFn drift_block = {})
        : d_x_(d_x), q_(q), m_x_(q > 0 ? d_x / q : 0),
          drift_(std::move(drift)), diffusion_block_(std::move(diffusion_block)),
          drift_block_(std::move(drift_block)) {
        if (d_x_ < 1) throw std::invalid_argument("BlockSde: d_x must be positive");
        if (q_ < 1) throw std::invalid_argument("BlockSde: q must be positive");
        if (d_x_ % q_ != 0) throw std::invalid_argument("BlockSde: q must divide d_x");
        if (!drift_) throw std::invalid_argument("BlockSde: drift function required");
        if (!diffusion_block_) throw std::invalid_argument("BlockSde: diffusion function required");
    }

    [[nodiscard]] int dim() const { return d_x_; }
    [[nodiscard]] int blocks() const { return q_; }
    [[nodiscard]] int block_dim() const { return m_x_; }

    void drift(const Vec& x, double t, Vec& out) const { drift_(x, t, out); }

    void drift_block(int i, const Vec& x, double t, double* out) const {
        if (drift_block_) {
            drift_block_(i, x, t, out);
            return;
        }
        thread_local Vec scratch;
        scratch.resize(d_x_);
        drift_(x, t, scratch);
        for (int r = 0; r < m_x_; ++r) out[r] = scratch[static_cast<Eigen::Index>(i) * m_x_ + r];
    }

    void diffusion_block(int i, const Vec& x, double t, double* out) const {
        diffusion_block_(i, x, t, out);
    }

private:
    int d_x_, q_, m_x_;
    DriftFn drift_;
    BlockFn diffusion_block_;
    BlockFn drift_block_;
};

static_assert(BlockModel<BlockSde>);

inline void wiener_increments(SeededRng& rng, double h, Vec& out) {
    if (h < 0.0) throw std::invalid_argument("wiener_increments: h must be nonnegative");
    const double s = std::sqrt(h);
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = s * rng.gaussian();
}

}  // namespace sdeassim
