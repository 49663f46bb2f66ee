#pragma once

#include <cstdint>

namespace vtck {

// Linear noise schedule on t in [0, 1]: beta(t) = beta0 + (beta1 - beta0) t.
// The integral I(t) and lambda(t) = 1 - exp(-I(t)) are closed form, which is
// what makes the marginal coefficients exact.
struct NoiseSchedule {
    double beta0 = 0.05;
    double beta1 = 20.0;
    static constexpr double kT = 1.0;

    NoiseSchedule() = default;
    NoiseSchedule(double b0, double b1);

    double beta(double t) const { return beta0 + (beta1 - beta0) * t; }
    double integral(double t) const { return beta0 * t + 0.5 * (beta1 - beta0) * t * t; }
    double lambda(double t) const;
};

// Coefficients of the closed-form marginal x_t = mean_coeff * x0 + noise_coeff * eps.
// mean_coeff^2 + noise_coeff^2 == 1 by construction.
struct Marginal {
    double mean_coeff;
    double noise_coeff;
};

Marginal marginal_at(const NoiseSchedule& sched, double t);

}  // namespace vtck
