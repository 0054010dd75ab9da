#include "sid/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sid {

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "make_linear_schedule: betas must satisfy 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.alpha_bar_prev.resize(T);
    s.posterior_var.resize(T);
    s.mean_coef_x0.resize(T);
    s.mean_coef_xt.resize(T);

    double running = 1.0;
    for (int t = 0; t < T; ++t) {
        double frac = (T == 1) ? 0.0 : static_cast<double>(t) / (T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar_prev[t] = running;
        running *= s.alpha[t];
        s.alpha_bar[t] = running;

        double one_minus_bar = 1.0 - s.alpha_bar[t];
        s.posterior_var[t] = s.beta[t] * (1.0 - s.alpha_bar_prev[t]) / one_minus_bar;
        s.mean_coef_x0[t] = std::sqrt(s.alpha_bar_prev[t]) * s.beta[t] / one_minus_bar;
        s.mean_coef_xt[t] = std::sqrt(s.alpha[t]) * (1.0 - s.alpha_bar_prev[t]) / one_minus_bar;
    }
    return s;
}

void check_step_index(int t, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T)
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(sched.T) + ")");
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched) {
    check_step_index(t, sched);
    check_same_shape(x0, noise, "q_sample");
    double a = std::sqrt(sched.alpha_bar[t]);
    double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Tensor out = x0;
    out.scale_(a);
    out.axpy_(b, noise);
    return out;
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& x0_hat, int t, const Tensor& noise,
                 const NoiseSchedule& sched) {
    check_step_index(t, sched);
    check_same_shape(x_t, x0_hat, "ddpm_step");
    Tensor out = x0_hat;
    out.scale_(sched.mean_coef_x0[t]);
    out.axpy_(sched.mean_coef_xt[t], x_t);
    if (t > 0) {
        check_same_shape(x_t, noise, "ddpm_step noise");
        out.axpy_(std::sqrt(sched.posterior_var[t]), noise);
    }
    return out;
}

Tensor ddpm_step_between(const Tensor& x_t, const Tensor& x0_hat, int t_from, int t_to,
                         const Tensor& noise, const NoiseSchedule& sched) {
    check_step_index(t_from, sched);
    if (t_to < 0 || t_to >= t_from)
        throw std::out_of_range("ddpm_step_between: require 0 <= t_to < t_from");
    check_same_shape(x_t, x0_hat, "ddpm_step_between");
    check_same_shape(x_t, noise, "ddpm_step_between noise");
    double a_f = sched.alpha_bar[t_from];
    double a_t = sched.alpha_bar[t_to];
    double r = a_f / a_t;  // product of alphas across the jump
    double denom = 1.0 - a_f;
    double coef_x0 = std::sqrt(a_t) * (1.0 - r) / denom;
    double coef_xt = std::sqrt(r) * (1.0 - a_t) / denom;
    double var = (1.0 - a_t) / denom * (1.0 - r);
    Tensor out = x0_hat;
    out.scale_(coef_x0);
    out.axpy_(coef_xt, x_t);
    out.axpy_(std::sqrt(var), noise);
    return out;
}

}  // namespace sid
