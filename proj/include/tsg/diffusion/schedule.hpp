#pragma once

#include <vector>

#include "tsg/diffusion/image.hpp"

namespace tsg::diffusion {

// Discrete-time diffusion hyperparameters, indexed t = 0 .. T-1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    // Endpoints of the linear beta ramp when the schedule was built by
    // make_linear_schedule; zero otherwise.
    double beta_start = 0.0, beta_end = 0.0;

    // Builds alphas and cumulative products. Accepts betas in [0, 1); a zero
    // beta is an identity step.
    static NoiseSchedule from_betas(std::vector<double> betas);
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

inline NoiseSchedule default_schedule() { return make_linear_schedule(1000, 1e-4, 0.02); }

struct Coefficients {
    double signal = 0.0;
    double noise = 0.0;
};

// (sqrt(abar_t), sqrt(1 - abar_t))
Coefficients marginal_coefficients(const NoiseSchedule& s, int t);
// (sqrt(abar_t / abar_{t-1}), sqrt(1 - abar_t / abar_{t-1})), t >= 1
Coefficients step_coefficients(const NoiseSchedule& s, int t);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
ImageTensor forward_marginal(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& s);

// sqrt(abar_t / abar_{t-1}) x_prev + sqrt(1 - abar_t / abar_{t-1}) eps, for t >= 1.
ImageTensor forward_step(const ImageTensor& x_prev, int t, const ImageTensor& eps, const NoiseSchedule& s);

// Mean squared error over all elements.
double ddpm_loss(const ImageTensor& eps_true, const ImageTensor& eps_pred);

// -eps / sqrt(1 - abar_t)
ImageTensor score_from_eps(const ImageTensor& eps, int t, const NoiseSchedule& s);

}  // namespace tsg::diffusion
