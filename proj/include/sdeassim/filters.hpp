#pragma once

// Ensemble Kalman filters over block-structured SDE models.
//
// enkf_run: stochastic (perturbed-observation) EnKF.  Members are propagated
// between observation times with the chosen scheme; the update gain is built
// from ensemble covariances of the noiseless predicted observations.  By
// default the observation covariance is NOT added to the innovation
// covariance (add_obs_cov switches the standard convention on); observation
// noise always enters through fresh per-member innovation perturbations.
//
// senkf_seq_run / senkf_em_run: sequential-update variant.  Members are
// propagated to one step before the observation time; the final step is then
// interleaved with the update.  Observed coordinates are visited in
// ascending block order; before processing an observed block, every block up
// to it is generated for that final step, and each partial update acts on
// the state prefix up to the observed block.  The two variants differ in how
// the final-step blocks are generated: the `seq` variant corrects a
// predictor state that progressively absorbs updated and generated blocks,
// while the `em` variant takes plain Euler-Maruyama blocks evaluated at the
// pre-step state.  Blocks past the last observed one are generated after the
// final partial update.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "observation.hpp"
#include "schemes.hpp"

namespace sdeassim {

inline constexpr double kJitterScale = 1e-9;

struct EnsembleStats {
    Vec mean;
    Mat cov;  // divisor M-1
};

inline EnsembleStats ensemble_stats(const Mat& members) {
    const Eigen::Index m = members.cols();
    if (m < 2) throw std::invalid_argument("ensemble_stats: need at least two members");
    EnsembleStats s;
    s.mean = members.rowwise().mean();
    const Mat centered = members.colwise() - s.mean;
    s.cov = centered * centered.transpose() / static_cast<double>(m - 1);
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    return s;
}

struct FilterOptions {
    bool add_obs_cov = false;  // include sigma_y^2 I in the innovation covariance
    bool jitter = true;
    double bound = kDefaultExplosionBound;
    bool store_cov = false;
};

enum class FilterStatus { Completed, Exploded, FailedUpdate };

struct FilterEstimate {
    FilterStatus status = FilterStatus::Completed;
    int failed_at = -1;  // observation index of the failure, -1 if none
    Mat means;           // one column per observation time (posterior mean)
    std::vector<Mat> covs;
    double max_jitter = 0.0;
};

// identifies the replicate whose member streams a filter run should use
struct StreamSet {
    std::uint64_t master_seed = 0;
    std::uint64_t run_id = 0;

    [[nodiscard]] SeededRng member_wiener(std::uint64_t member) const {
        return derive_member_rng(master_seed, run_id, kStreamMemberWiener, member);
    }
    [[nodiscard]] SeededRng member_update(std::uint64_t member) const {
        return derive_member_rng(master_seed, run_id, kStreamMemberUpdate, member);
    }
};

// Perturbed-observation update, in place.  Each member consumes d_y draws
// from its own update stream, whether or not the gain is zero, so stream
// positions do not depend on the data.  Returns false if the gain solve
// produced a non-finite result.
inline bool kalman_update(Mat& members, const ObservationEvent& ev, double sigma_y,
                          std::span<SeededRng> update_rngs, const FilterOptions& opts,
                          double* jitter_used = nullptr) {
    const Eigen::Index m = members.cols();
    const Eigen::Index dy = ev.op.d_y();
    if (static_cast<Eigen::Index>(update_rngs.size()) != m)
        throw std::invalid_argument("kalman_update: one update stream per member required");

    Mat y_pred(dy, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index r = 0; r < dy; ++r) y_pred(r, i) = members(ev.op.indices[r], i);

    const Vec y_mean = y_pred.rowwise().mean();
    const Mat yc = y_pred.colwise() - y_mean;
    const Vec x_mean = members.rowwise().mean();
    const Mat xc = members.colwise() - x_mean;
    const double scale = 1.0 / static_cast<double>(m - 1);

    Mat cy = yc * yc.transpose() * scale;
    if (opts.add_obs_cov) cy.diagonal().array() += sigma_y * sigma_y;

    Mat perturb(dy, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index r = 0; r < dy; ++r) perturb(r, i) = update_rngs[i].gaussian();

    Mat gain;
    const double tr = cy.trace();
    if (jitter_used) *jitter_used = 0.0;
    if (tr == 0.0) {
        gain = Mat::Zero(members.rows(), dy);  // no observed spread: no information
    } else {
        if (opts.jitter) {
            const double lambda = kJitterScale * tr / static_cast<double>(dy);
            cy.diagonal().array() += lambda;
            if (jitter_used) *jitter_used = lambda;
        }
        const Mat cxy = xc * yc.transpose() * scale;
        const auto ldlt = cy.ldlt();
        if (ldlt.info() != Eigen::Success) return false;
        gain = ldlt.solve(cxy.transpose()).transpose();
        if (!gain.allFinite()) return false;
    }

    Mat innovation = (-y_pred).colwise() + ev.y;
    innovation += sigma_y * perturb;
    members += gain * innovation;
    return members.allFinite();
}

namespace detail {

template <BlockModel M>
bool propagate_member(const M& model, const SchemeSpec& scheme, Vec& x, double t_start,
                      double h, std::int64_t n_steps, SeededRng& rng, double bound,
                      Vec& v, Vec& xnew, Vec& xhat) {
    for (std::int64_t s = 0; s < n_steps; ++s) {
        const double t = t_start + static_cast<double>(s) * h;
        wiener_increments(rng, h, v);
        if (scheme.kind == SchemeKind::SequentialPcEuler) {
            spc_predictor(model, x, t, h, xhat);
            spc_corrector(model, x, t, xhat, t + h, h, v, xnew);
        } else {
            em_step(model, x, t, h, v, xnew);
        }
        x.swap(xnew);
        if (check_state(x, bound)) return false;
    }
    return true;
}

}  // namespace detail

template <BlockModel M>
FilterEstimate enkf_run(const M& model, const SchemeSpec& scheme, Mat members,
                        const std::vector<ObservationEvent>& obs, const TimeGrid& grid,
                        double sigma_y, const StreamSet& streams,
                        const FilterOptions& opts = {}) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    const Eigen::Index m = members.cols();
    if (members.rows() != d) throw std::invalid_argument("enkf_run: ensemble dimension mismatch");
    if (m < 2) throw std::invalid_argument("enkf_run: need at least two members");

    std::vector<SeededRng> wiener_rngs, update_rngs;
    wiener_rngs.reserve(m);
    update_rngs.reserve(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        wiener_rngs.push_back(streams.member_wiener(static_cast<std::uint64_t>(i)));
        update_rngs.push_back(streams.member_update(static_cast<std::uint64_t>(i)));
    }

    FilterEstimate est;
    est.means.resize(d, static_cast<Eigen::Index>(obs.size()));
    const double h = grid.h();
    Vec v(d), xnew(d), xhat(d), x(d);

    std::int64_t prev_step = 0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const auto& ev = obs[k];
        if (ev.step <= prev_step && !(k == 0 && ev.step == prev_step))
            throw std::invalid_argument("enkf_run: observation steps must be increasing");
        const std::int64_t n_prop = ev.step - prev_step;
        const double t_start = grid.time_at(prev_step);
        for (Eigen::Index i = 0; i < m; ++i) {
            x = members.col(i);
            if (!detail::propagate_member(model, scheme, x, t_start, h, n_prop, wiener_rngs[i],
                                          opts.bound, v, xnew, xhat)) {
                est.status = FilterStatus::Exploded;
                est.failed_at = static_cast<int>(k);
                est.means.conservativeResize(d, static_cast<Eigen::Index>(k));
                return est;
            }
            members.col(i) = x;
        }
        double jit = 0.0;
        if (!kalman_update(members, ev, sigma_y, update_rngs, opts, &jit)) {
            est.status = FilterStatus::FailedUpdate;
            est.failed_at = static_cast<int>(k);
            est.means.conservativeResize(d, static_cast<Eigen::Index>(k));
            return est;
        }
        if (jit > est.max_jitter) est.max_jitter = jit;
        est.means.col(static_cast<Eigen::Index>(k)) = members.rowwise().mean();
        if (opts.store_cov) est.covs.push_back(ensemble_stats(members).cov);
        prev_step = ev.step;
    }
    return est;
}

namespace detail {

// observed blocks in ascending order with their within-block offsets
struct ObsBlockGroup {
    int block;
    std::vector<int> offsets;  // within-block coordinate offsets
    std::vector<int> obs_rows;  // rows of the observation vector
};

inline std::vector<ObsBlockGroup> group_observed_blocks(const ObservationOperator& op, int m_x) {
    std::vector<ObsBlockGroup> groups;
    for (int r = 0; r < op.d_y(); ++r) {
        const int c = op.indices[r];
        const int b = c / m_x;
        if (groups.empty() || groups.back().block != b) groups.push_back({b, {}, {}});
        groups.back().offsets.push_back(c % m_x);
        groups.back().obs_rows.push_back(r);
    }
    return groups;
}

}  // namespace detail

template <BlockModel M>
FilterEstimate senkf_run(const M& model, Mat members, const std::vector<ObservationEvent>& obs,
                         const TimeGrid& grid, double sigma_y, const StreamSet& streams,
                         bool seq_prediction, const FilterOptions& opts = {}) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    const Eigen::Index m = members.cols();
    const int q = model.blocks();
    const int mx = model.block_dim();
    if (members.rows() != d) throw std::invalid_argument("senkf_run: ensemble dimension mismatch");
    if (m < 2) throw std::invalid_argument("senkf_run: need at least two members");

    std::vector<SeededRng> wiener_rngs, update_rngs;
    wiener_rngs.reserve(m);
    update_rngs.reserve(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        wiener_rngs.push_back(streams.member_wiener(static_cast<std::uint64_t>(i)));
        update_rngs.push_back(streams.member_update(static_cast<std::uint64_t>(i)));
    }

    const SchemeSpec prop_scheme = seq_prediction ? SchemeSpec::spc() : SchemeSpec::em();
    const double h = grid.h();

    FilterEstimate est;
    est.means.resize(d, static_cast<Eigen::Index>(obs.size()));

    Mat prev(d, m);      // member states one step before the observation time
    Mat incr(d, m);      // Wiener increments for the final step
    Mat work(d, m);      // working states during the interleaved step
    Vec v(d), xnew(d), xhat(d), x(d);
    std::vector<double> fbuf(static_cast<std::size_t>(mx));
    std::vector<double> sbuf(static_cast<std::size_t>(mx) * mx);

    auto fail = [&](FilterStatus st, std::size_t k) {
        est.status = st;
        est.failed_at = static_cast<int>(k);
        est.means.conservativeResize(d, static_cast<Eigen::Index>(k));
        return est;
    };

    std::int64_t prev_step = 0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const auto& ev = obs[k];
        if (ev.step - prev_step < 1)
            throw std::invalid_argument("senkf_run: observation steps must advance by >= 1");
        const std::int64_t n_prop = ev.step - prev_step - 1;
        const double t_start = grid.time_at(prev_step);
        const double t_prev = grid.time_at(ev.step - 1);
        const double t_next = grid.time_at(ev.step);

        for (Eigen::Index i = 0; i < m; ++i) {
            x = members.col(i);
            if (!detail::propagate_member(model, prop_scheme, x, t_start, h, n_prop,
                                          wiener_rngs[i], opts.bound, v, xnew, xhat))
                return fail(FilterStatus::Exploded, k);
            prev.col(i) = x;
            wiener_increments(wiener_rngs[i], h, v);
            incr.col(i) = v;
            if (seq_prediction) {
                spc_predictor(model, x, t_prev, h, xhat);
                work.col(i) = xhat;
            } else {
                work.col(i) = x;  // placeholder; blocks are generated on demand
            }
        }

        const auto groups = detail::group_observed_blocks(ev.op, mx);
        int next_block = 0;

        // generate final-step values for blocks [next_block, upto]
        auto generate_blocks = [&](int upto) {
            for (int b = next_block; b <= upto; ++b) {
                const Eigen::Index off = static_cast<Eigen::Index>(b) * mx;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const auto& base = prev.col(i);
                    if (seq_prediction) {
                        model.drift_block(b, work.col(i), t_next, fbuf.data());
                    } else {
                        model.drift_block(b, base, t_prev, fbuf.data());
                    }
                    model.diffusion_block(b, base, t_prev, sbuf.data());
                    for (int r = 0; r < mx; ++r) {
                        double acc = 0.0;
                        for (int c = 0; c < mx; ++c) acc += sbuf[r + c * mx] * incr(off + c, i);
                        work(off + r, i) = base[off + r] + h * fbuf[r] + acc;
                    }
                }
            }
            next_block = upto + 1;
        };

        bool update_failed = false;
        for (const auto& g : groups) {
            generate_blocks(g.block);
            const int my = static_cast<int>(g.offsets.size());
            const Eigen::Index p = static_cast<Eigen::Index>(g.block + 1) * mx;  // prefix length

            Mat y_pred(my, m);
            for (Eigen::Index i = 0; i < m; ++i)
                for (int r = 0; r < my; ++r)
                    y_pred(r, i) = work(static_cast<Eigen::Index>(g.block) * mx + g.offsets[r], i);

            const Vec y_mean = y_pred.rowwise().mean();
            const Mat yc = y_pred.colwise() - y_mean;
            const double scale = 1.0 / static_cast<double>(m - 1);
            Mat cy = yc * yc.transpose() * scale;
            if (opts.add_obs_cov) cy.diagonal().array() += sigma_y * sigma_y;

            Mat perturb(my, m);
            for (Eigen::Index i = 0; i < m; ++i) {
                for (int r = 0; r < my; ++r) perturb(r, i) = update_rngs[i].gaussian();
            }

            const double tr = cy.trace();
            if (tr != 0.0) {
                if (opts.jitter) {
                    const double lambda = kJitterScale * tr / static_cast<double>(my);
                    cy.diagonal().array() += lambda;
                    if (lambda > est.max_jitter) est.max_jitter = lambda;
                }
                const Vec prefix_mean = work.topRows(p).rowwise().mean();
                const Mat pc = work.topRows(p).colwise() - prefix_mean;
                const Mat cxy = pc * yc.transpose() * scale;  // p x my
                const auto ldlt = cy.ldlt();
                if (ldlt.info() != Eigen::Success) {
                    update_failed = true;
                    break;
                }
                const Mat gain = ldlt.solve(cxy.transpose()).transpose();
                if (!gain.allFinite()) {
                    update_failed = true;
                    break;
                }
                Vec y_obs(my);
                for (int r = 0; r < my; ++r) y_obs[r] = ev.y[g.obs_rows[r]];
                Mat innovation = (-y_pred).colwise() + y_obs;
                innovation += sigma_y * perturb;
                work.topRows(p) += gain * innovation;
                if (!work.topRows(p).allFinite()) {
                    update_failed = true;
                    break;
                }
            }
        }
        if (update_failed) return fail(FilterStatus::FailedUpdate, k);
        generate_blocks(q - 1);  // blocks past the last observed one

        for (Eigen::Index i = 0; i < m; ++i) {
            if (check_state(work.col(i), opts.bound)) return fail(FilterStatus::Exploded, k);
        }
        members = work;
        est.means.col(static_cast<Eigen::Index>(k)) = members.rowwise().mean();
        if (opts.store_cov) est.covs.push_back(ensemble_stats(members).cov);
        prev_step = ev.step;
    }
    return est;
}

template <BlockModel M>
FilterEstimate senkf_seq_run(const M& model, Mat members, const std::vector<ObservationEvent>& obs,
                             const TimeGrid& grid, double sigma_y, const StreamSet& streams,
                             const FilterOptions& opts = {}) {
    return senkf_run(model, std::move(members), obs, grid, sigma_y, streams, true, opts);
}

template <BlockModel M>
FilterEstimate senkf_em_run(const M& model, Mat members, const std::vector<ObservationEvent>& obs,
                            const TimeGrid& grid, double sigma_y, const StreamSet& streams,
                            const FilterOptions& opts = {}) {
    return senkf_run(model, std::move(members), obs, grid, sigma_y, streams, false, opts);
}

}  // namespace sdeassim
