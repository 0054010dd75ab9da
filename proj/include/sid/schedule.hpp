#pragma once

#include <vector>

#include "sid/tensor.hpp"

namespace sid {

// Precomputed DDPM coefficients for a T-step chain. The reverse step is
// parameterized by the predicted clean image, so the posterior mean is kept
// as two per-step coefficients:
//   mean_t = mean_coef_x0[t] * x0_hat + mean_coef_xt[t] * x_t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;            // per-step noise variance, in (0,1)
    std::vector<double> alpha;           // 1 - beta
    std::vector<double> alpha_bar;       // cumulative product of alpha
    std::vector<double> alpha_bar_prev;  // alpha_bar shifted, alpha_bar_prev[0] = 1
    std::vector<double> posterior_var;   // beta_tilde, zero at t = 0
    std::vector<double> mean_coef_x0;    // sqrt(alpha_bar_prev) * beta / (1 - alpha_bar)
    std::vector<double> mean_coef_xt;    // sqrt(alpha) * (1 - alpha_bar_prev) / (1 - alpha_bar)
};

// Linear beta ramp from beta_start to beta_end over T steps (both endpoints
// included; T = 1 uses beta_start). Throws std::invalid_argument for T < 1 or
// betas outside 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// Forward kernel: sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise.
Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched);

// One reverse step from level t to t-1 given the predicted clean image.
// At t = 0 the result is the posterior mean alone; the noise argument is
// ignored there.
Tensor ddpm_step(const Tensor& x_t, const Tensor& x0_hat, int t, const Tensor& noise,
                 const NoiseSchedule& sched);

// Ancestral jump between arbitrary levels t_from > t_to; reduces to the
// per-step posterior when t_to == t_from - 1. Used by strided sampling.
Tensor ddpm_step_between(const Tensor& x_t, const Tensor& x0_hat, int t_from, int t_to,
                         const Tensor& noise, const NoiseSchedule& sched);

void check_step_index(int t, const NoiseSchedule& sched);

}  // namespace sid
