#pragma once

// Time-stepping schemes for block-structured SDEs.
//
// em_step is the standard Euler-Maruyama update.  The sequential
// predictor-corrector update first advances the whole state with a
// deterministic (noise-free) Euler predictor, then corrects the blocks in
// ascending order: the corrector for block i evaluates its drift at the end
// time on a mixed state whose blocks < i already hold corrected values and
// whose blocks >= i still hold predictor values.  Diffusion is always
// evaluated at the previous state and time, and multiplies Wiener increments
// of variance h directly.
//
// integrate drives either scheme across a TimeGrid; SchemeKind::Reference
// sub-steps each grid interval with Euler-Maruyama at an inner step h_o.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace sdeassim {

enum class SchemeKind { EulerMaruyama, SequentialPcEuler, Reference };

struct SchemeSpec {
    SchemeKind kind = SchemeKind::EulerMaruyama;
    double h_o = 0.0;  // inner step for Reference

    static SchemeSpec em() { return {SchemeKind::EulerMaruyama, 0.0}; }
    static SchemeSpec spc() { return {SchemeKind::SequentialPcEuler, 0.0}; }
    static SchemeSpec reference(double h_o) { return {SchemeKind::Reference, h_o}; }
};

namespace detail {
inline constexpr int kMaxBlockDim = 64;
}

// x_{n+1} = x_n + h f(x_n, t_n) + S(x_n, t_n) v, with v the Wiener increments
template <BlockModel M>
void em_step(const M& model, const Vec& x, double t, double h, const Vec& v, Vec& out) {
    const int q = model.blocks();
    const int m = model.block_dim();
    model.drift(x, t, out);
    if (m == 1) {
        double s;
        for (int i = 0; i < q; ++i) {
            model.diffusion_block(i, x, t, &s);
            out[i] = x[i] + h * out[i] + s * v[i];
        }
        return;
    }
    double sbuf[detail::kMaxBlockDim * detail::kMaxBlockDim];
    if (m > detail::kMaxBlockDim) throw std::invalid_argument("em_step: block dimension too large");
    for (int i = 0; i < q; ++i) {
        model.diffusion_block(i, x, t, sbuf);
        const Eigen::Index off = static_cast<Eigen::Index>(i) * m;
        for (int r = 0; r < m; ++r) {
            double acc = 0.0;
            for (int c = 0; c < m; ++c) acc += sbuf[r + c * m] * v[off + c];
            out[off + r] = x[off + r] + h * out[off + r] + acc;
        }
    }
}

// noise-free Euler predictor
template <BlockModel M>
void spc_predictor(const M& model, const Vec& x, double t, double h, Vec& out) {
    model.drift(x, t, out);
    out = x + h * out;
}

// sequential corrector; out must not alias x_prev or x_hat
template <BlockModel M>
void spc_corrector(const M& model, const Vec& x_prev, double t_prev, const Vec& x_hat,
                   double t_next, double h, const Vec& v, Vec& out) {
    const int q = model.blocks();
    const int m = model.block_dim();
    out = x_hat;  // mixed state: corrected blocks overwrite predictor values in order
    if (m == 1) {
        double f, s;
        for (int i = 0; i < q; ++i) {
            model.drift_block(i, out, t_next, &f);
            model.diffusion_block(i, x_prev, t_prev, &s);
            out[i] = x_prev[i] + h * f + s * v[i];
        }
        return;
    }
    double fbuf[detail::kMaxBlockDim];
    double sbuf[detail::kMaxBlockDim * detail::kMaxBlockDim];
    double val[detail::kMaxBlockDim];
    if (m > detail::kMaxBlockDim)
        throw std::invalid_argument("spc_corrector: block dimension too large");
    for (int i = 0; i < q; ++i) {
        model.drift_block(i, out, t_next, fbuf);
        model.diffusion_block(i, x_prev, t_prev, sbuf);
        const Eigen::Index off = static_cast<Eigen::Index>(i) * m;
        for (int r = 0; r < m; ++r) {
            double acc = 0.0;
            for (int c = 0; c < m; ++c) acc += sbuf[r + c * m] * v[off + c];
            val[r] = x_prev[off + r] + h * fbuf[r] + acc;
        }
        for (int r = 0; r < m; ++r) out[off + r] = val[r];
    }
}

struct IntegrateOptions {
    double bound = kDefaultExplosionBound;
    std::int64_t sample_every = 0;  // record state every k-th outer step (0 = none)
};

struct IntegrateResult {
    RunStatus status = RunStatus::Completed;
    std::int64_t exploded_step = -1;
    Vec final_state;
    std::vector<std::int64_t> sample_steps;
    Mat samples;  // one column per recorded step
};

namespace detail {

// number of inner steps per outer interval; h must be an integer multiple of h_o
inline std::int64_t substep_count(double h, double h_o) {
    if (!(h_o > 0.0)) throw std::invalid_argument("integrate: Reference scheme needs h_o > 0");
    const double ratio = h / h_o;
    const auto k = static_cast<std::int64_t>(ratio + 0.5);
    if (k < 1 || std::fabs(static_cast<double>(k) * h_o - h) > 1e-9 * h)
        throw std::invalid_argument("integrate: h_o must divide the grid step");
    return k;
}

}  // namespace detail

template <BlockModel M>
IntegrateResult integrate(const M& model, const SchemeSpec& scheme, const Vec& x0,
                          const TimeGrid& grid, SeededRng& rng,
                          const IntegrateOptions& opts = {}) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    if (x0.size() != d) throw std::invalid_argument("integrate: x0 has wrong dimension");

    IntegrateResult res;
    const std::int64_t n_samples =
        opts.sample_every > 0 ? grid.n_steps / opts.sample_every : 0;
    if (n_samples > 0) {
        res.samples.resize(d, n_samples);
        res.sample_steps.reserve(n_samples);
    }

    const double h = grid.h();
    const std::int64_t n_sub =
        scheme.kind == SchemeKind::Reference ? detail::substep_count(h, scheme.h_o) : 1;
    const double h_step = scheme.kind == SchemeKind::Reference ? scheme.h_o : h;

    Vec x = x0, xnew(d), xhat(d), v(d);
    std::int64_t col = 0;
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
        bool exploded = false;
        if (scheme.kind == SchemeKind::SequentialPcEuler) {
            const double t = grid.time_at(k);
            spc_predictor(model, x, t, h, xhat);
            wiener_increments(rng, h, v);
            spc_corrector(model, x, t, xhat, t + h, h, v, xnew);
            x.swap(xnew);
            exploded = check_state(x, opts.bound);
        } else {
            for (std::int64_t s = 0; s < n_sub; ++s) {
                const double t = grid.time_at(k) + static_cast<double>(s) * h_step;
                wiener_increments(rng, h_step, v);
                em_step(model, x, t, h_step, v, xnew);
                x.swap(xnew);
                if (check_state(x, opts.bound)) {
                    exploded = true;
                    break;
                }
            }
        }
        if (exploded) {
            res.status = RunStatus::Exploded;
            res.exploded_step = k;
            res.final_state = x;
            res.samples.conservativeResize(d, col);
            return res;
        }
        if (opts.sample_every > 0 && (k + 1) % opts.sample_every == 0) {
            res.samples.col(col++) = x;
            res.sample_steps.push_back(k + 1);
        }
    }
    res.final_state = x;
    return res;
}

}  // namespace sdeassim
