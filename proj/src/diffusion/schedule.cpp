#include "tsg/diffusion/schedule.hpp"

#include <cmath>

#include "tsg/common/error.hpp"

namespace tsg::diffusion {

namespace {

void check_t(int t, const NoiseSchedule& s, const char* op) {
    if (t < 0 || t >= s.T)
        throw UsageError(std::string(op) + ": timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
}

void check_shapes(const ImageTensor& a, const ImageTensor& b, const char* op) {
    if (!a.same_shape(b)) throw DataError(std::string(op) + ": image shapes differ");
}

ImageTensor affine(const ImageTensor& x, double a, const ImageTensor& e, double b) {
    ImageTensor out(x.height(), x.width(), x.channels(), ValueRange::unbounded());
    auto xs = x.values();
    auto es = e.values();
    auto os = out.values();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] = static_cast<float>(a * xs[i] + b * es[i]);
    return out;
}

}  // namespace

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw UsageError("schedule needs at least one step");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alphas.resize(s.T);
    s.alpha_bars.resize(s.T);
    double prod = 1.0;
    for (int t = 0; t < s.T; ++t) {
        const double b = s.betas[t];
        if (!(b >= 0.0 && b < 1.0)) throw UsageError("beta_" + std::to_string(t) + " outside [0, 1)");
        s.alphas[t] = 1.0 - b;
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw UsageError("schedule length T must be positive");
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw UsageError("beta endpoints must lie in (0, 1)");
    if (beta_start > beta_end) throw UsageError("beta_start must not exceed beta_end");
    std::vector<double> betas(T);
    for (int t = 0; t < T; ++t)
        betas[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
    NoiseSchedule s = NoiseSchedule::from_betas(std::move(betas));
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    return s;
}

Coefficients marginal_coefficients(const NoiseSchedule& s, int t) {
    check_t(t, s, "forward_marginal");
    const double ab = s.alpha_bars[t];
    return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

Coefficients step_coefficients(const NoiseSchedule& s, int t) {
    if (t == 0) throw UsageError("forward_step: t = 0 has no predecessor");
    check_t(t, s, "forward_step");
    const double ratio = s.alpha_bars[t] / s.alpha_bars[t - 1];
    return {std::sqrt(ratio), std::sqrt(1.0 - ratio)};
}

ImageTensor forward_marginal(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& s) {
    const Coefficients c = marginal_coefficients(s, t);
    check_shapes(x0, eps, "forward_marginal");
    return affine(x0, c.signal, eps, c.noise);
}

ImageTensor forward_step(const ImageTensor& x_prev, int t, const ImageTensor& eps, const NoiseSchedule& s) {
    const Coefficients c = step_coefficients(s, t);
    check_shapes(x_prev, eps, "forward_step");
    return affine(x_prev, c.signal, eps, c.noise);
}

double ddpm_loss(const ImageTensor& eps_true, const ImageTensor& eps_pred) {
    check_shapes(eps_true, eps_pred, "ddpm_loss");
    auto a = eps_true.values();
    auto b = eps_pred.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

ImageTensor score_from_eps(const ImageTensor& eps, int t, const NoiseSchedule& s) {
    check_t(t, s, "score_from_eps");
    const double var = 1.0 - s.alpha_bars[t];
    if (var < 1e-12) throw UsageError("score_from_eps: degenerate timestep " + std::to_string(t) + " (alpha_bar = 1)");
    const double k = -1.0 / std::sqrt(var);
    ImageTensor out(eps.height(), eps.width(), eps.channels(), ValueRange::unbounded());
    auto e = eps.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(k * e[i]);
    return out;
}

}  // namespace tsg::diffusion
