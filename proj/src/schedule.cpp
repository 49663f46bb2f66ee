#include "vtck/schedule.hpp"

#include <cmath>

#include "vtck/errors.hpp"

namespace vtck {

NoiseSchedule::NoiseSchedule(double b0, double b1) : beta0(b0), beta1(b1) {
    if (!(0.0 < beta0 && beta0 < beta1)) {
        throw ConfigError("schedule: need 0 < beta0 < beta1, got beta0=" + std::to_string(b0) +
                          " beta1=" + std::to_string(b1));
    }
}

double NoiseSchedule::lambda(double t) const { return 1.0 - std::exp(-integral(t)); }

Marginal marginal_at(const NoiseSchedule& sched, double t) {
    const double it = sched.integral(t);
    return Marginal{std::sqrt(std::exp(-it)), std::sqrt(1.0 - std::exp(-it))};
}

}  // namespace vtck
