#pragma once

// Concrete models: the cyclic Lorenz 96 system with multiplicative noise and
// an Ornstein-Uhlenbeck system with independent coordinates.
//
// Lorenz 96 drift, standard form:  dX^i = (X^{i+1} - X^{i-2}) X^{i-1} - X^i + F,
// indices modulo d_x.  The `Literal` form replaces the advection term by
// -X^{i-1} X^{i-2} - X^{i+1}, a transcription that circulates in some typeset
// statements of the model; it is exposed for comparison runs only.
// Diffusion is diagonal and multiplicative, sigma * X^i per coordinate.
//
// OU:  dX^i = -theta X^i dt + sigma dW^i, with exact Gaussian marginals used
// as an analytic oracle.

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "core.hpp"

namespace sdeassim {

enum class L96DriftForm { Standard, Literal };

struct Lorenz96Params {
    int d_x = 200;
    double F = 8.0;
    double sigma = 1.0;
    L96DriftForm form = L96DriftForm::Standard;
};

inline double lorenz96_drift_entry(int i, const Vec& x, double F, L96DriftForm form) {
    const int d = static_cast<int>(x.size());
    const int ip1 = i + 1 == d ? 0 : i + 1;
    const int im1 = i == 0 ? d - 1 : i - 1;
    const int im2 = i <= 1 ? i - 2 + d : i - 2;
    if (form == L96DriftForm::Standard) return (x[ip1] - x[im2]) * x[im1] - x[i] + F;
    return -x[im1] * x[im2] - x[ip1] - x[i] + F;
}

inline void lorenz96_drift(const Vec& x, double F, L96DriftForm form, Vec& out) {
    const int d = static_cast<int>(x.size());
    if (d < 4) throw std::invalid_argument("lorenz96_drift: need d_x >= 4");
    if (form == L96DriftForm::Standard) {
        out[0] = (x[1] - x[d - 2]) * x[d - 1] - x[0] + F;
        out[1] = (x[2] - x[d - 1]) * x[0] - x[1] + F;
        for (int i = 2; i < d - 1; ++i) out[i] = (x[i + 1] - x[i - 2]) * x[i - 1] - x[i] + F;
        out[d - 1] = (x[0] - x[d - 3]) * x[d - 2] - x[d - 1] + F;
    } else {
        for (int i = 0; i < d; ++i) out[i] = lorenz96_drift_entry(i, x, F, form);
    }
}

// one block per coordinate (q = d_x, m_x = 1)
class Lorenz96Model {
public:
    explicit Lorenz96Model(const Lorenz96Params& p) : p_(p) {
        if (p_.d_x < 4) throw std::invalid_argument("Lorenz96Model: need d_x >= 4");
    }

    [[nodiscard]] int dim() const { return p_.d_x; }
    [[nodiscard]] int blocks() const { return p_.d_x; }
    [[nodiscard]] int block_dim() const { return 1; }
    [[nodiscard]] const Lorenz96Params& params() const { return p_; }

    void drift(const Vec& x, double, Vec& out) const { lorenz96_drift(x, p_.F, p_.form, out); }

    void drift_block(int i, const Vec& x, double, double* out) const {
        *out = lorenz96_drift_entry(i, x, p_.F, p_.form);
    }

    void diffusion_block(int i, const Vec& x, double, double* out) const {
        *out = p_.sigma * x[i];
    }

private:
    Lorenz96Params p_;
};

static_assert(BlockModel<Lorenz96Model>);

// Deterministic spin-up onto the attractor: explicit Euler with step 1e-4
// over t in [0, 10], started from F*1 with coordinate 0 nudged by 0.01; an
// initial condition is a uniformly drawn grid point of that trajectory.
inline constexpr double kSpinupStep = 1e-4;
inline constexpr std::int64_t kSpinupSteps = 100000;

inline Vec spinup_state_at(std::int64_t step, int d_x, double F) {
    if (step < 0 || step > kSpinupSteps)
        throw std::invalid_argument("spinup_state_at: step out of range");
    Vec x = Vec::Constant(d_x, F);
    x[0] += 0.01;
    Vec f(d_x);
    for (std::int64_t k = 0; k < step; ++k) {
        lorenz96_drift(x, F, L96DriftForm::Standard, f);
        x += kSpinupStep * f;
    }
    return x;
}

inline Vec spinup_initial_condition(SeededRng& rng, int d_x, double F) {
    const auto step = static_cast<std::int64_t>(rng.uniform_below(kSpinupSteps + 1));
    return spinup_state_at(step, d_x, F);
}

struct OuParams {
    double theta = 1.0;
    double sigma = 0.5;
};

class OuModel {
public:
    OuModel(int d, const OuParams& p) : d_(d), p_(p) {
        if (d_ < 1) throw std::invalid_argument("OuModel: need d >= 1");
        if (p_.theta < 0.0) throw std::invalid_argument("OuModel: theta must be nonnegative");
    }

    [[nodiscard]] int dim() const { return d_; }
    [[nodiscard]] int blocks() const { return d_; }
    [[nodiscard]] int block_dim() const { return 1; }
    [[nodiscard]] const OuParams& params() const { return p_; }

    void drift(const Vec& x, double, Vec& out) const { out = -p_.theta * x; }
    void drift_block(int i, const Vec& x, double, double* out) const { *out = -p_.theta * x[i]; }
    void diffusion_block(int, const Vec&, double, double* out) const { *out = p_.sigma; }

private:
    int d_;
    OuParams p_;
};

static_assert(BlockModel<OuModel>);

struct OuMoments {
    double mean_factor;  // E[X_t] = mean_factor * x_0 per coordinate
    double variance;
};

inline OuMoments ou_exact_moments(const OuParams& p, double t) {
    if (t < 0.0) throw std::invalid_argument("ou_exact_moments: t must be nonnegative");
    const double mf = std::exp(-p.theta * t);
    double var;
    if (p.theta == 0.0) {
        var = p.sigma * p.sigma * t;
    } else {
        var = p.sigma * p.sigma * (-std::expm1(-2.0 * p.theta * t)) / (2.0 * p.theta);
    }
    return {mf, var};
}

}  // namespace sdeassim
