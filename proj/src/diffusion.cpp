#include "vtck/diffusion.hpp"

#include <cmath>

#include "vtck/errors.hpp"

namespace vtck {

template <class Real>
Tensor<Real> forward_sample(const NoiseSchedule& sched, const Tensor<Real>& x0, double t,
                            const Tensor<Real>& eps) {
    if (!(t > 0.0 && t <= NoiseSchedule::kT)) {
        throw RangeError("forward_sample: t must lie in (0,T], got " + std::to_string(t));
    }
    if (x0.shape() != eps.shape()) {
        throw DimError("forward_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " +
                       shape_str(x0.shape()));
    }
    const Marginal m = marginal_at(sched, t);
    Tensor<Real> out = Tensor<Real>::zeros(x0.shape());
    const Real mc = static_cast<Real>(m.mean_coeff);
    const Real nc = static_cast<Real>(m.noise_coeff);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = mc * x0[i] + nc * eps[i];
    return out;
}

template <class Real>
typename Graph<Real>::Id score_matching_loss_at(Graph<Real>& g, const NoiseSchedule& sched,
                                                const GraphScoreFn<Real>& score_fn, const Tensor<Real>& x0,
                                                double t, const Tensor<Real>& eps) {
    const Marginal m = marginal_at(sched, t);
    auto x_t = g.input(forward_sample(sched, x0, t, eps));
    auto score = score_fn(g, x_t, t);
    auto residual = g.add(g.scale(score, static_cast<Real>(m.noise_coeff)), g.input(eps));
    return g.mean(g.mul(residual, residual));
}

template <class Real>
typename Graph<Real>::Id score_matching_loss(Graph<Real>& g, const NoiseSchedule& sched,
                                             const GraphScoreFn<Real>& score_fn, const Tensor<Real>& x0,
                                             Rng& rng, double t_min) {
    const double t = rng.uniform(t_min, NoiseSchedule::kT);
    Tensor<Real> eps = Tensor<Real>::randn(x0.shape(), rng);
    return score_matching_loss_at(g, sched, score_fn, x0, t, eps);
}

template <class Real>
Tensor<Real> reverse_step(const NoiseSchedule& sched, const Tensor<Real>& x_t, double t,
                          const Tensor<Real>& score, double dt, const Tensor<Real>& z) {
    if (!(dt > 0.0)) throw RangeError("reverse_step: dt must be > 0, got " + std::to_string(dt));
    if (t - dt < -1e-9) throw RangeError("reverse_step: t - dt would be negative");
    if (x_t.shape() != score.shape() || x_t.shape() != z.shape()) {
        throw DimError("reverse_step: x_t/score/z shapes must match");
    }
    const Real beta = static_cast<Real>(sched.beta(t));
    const Real step = static_cast<Real>(dt);
    const Real diff = static_cast<Real>(std::sqrt(sched.beta(t) * dt));
    Tensor<Real> out = Tensor<Real>::zeros(x_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = x_t[i] + beta * (Real(0.5) * x_t[i] + score[i]) * step + diff * z[i];
    }
    return out;
}

int64_t step_count(double dt) {
    if (!(dt > 0.0)) throw RangeError("sample: dt must be > 0");
    const double ratio = NoiseSchedule::kT / dt;
    const int64_t n = static_cast<int64_t>(std::llround(ratio));
    if (n < 1 || std::fabs(ratio - static_cast<double>(n)) > 1e-6) {
        throw ConfigError("sample: T/dt = " + std::to_string(ratio) + " is not a whole number of steps");
    }
    return n;
}

template <class Real>
Tensor<Real> sample(const NoiseSchedule& sched, const ScoreFn<Real>& score_fn, const Shape& shape,
                    double dt, Rng& rng) {
    const int64_t steps = step_count(dt);
    Tensor<Real> x = Tensor<Real>::randn(shape, rng);
    const Tensor<Real> zero = Tensor<Real>::zeros(shape);
    for (int64_t k = 0; k < steps; ++k) {
        const double t = NoiseSchedule::kT - static_cast<double>(k) * dt;
        // Noise is drawn before the score so the stream never depends on it;
        // the final step is deterministic by convention.
        const Tensor<Real> z = (k == steps - 1) ? zero : Tensor<Real>::randn(shape, rng);
        const Tensor<Real> score = score_fn(x, t);
        x = reverse_step(sched, x, t, score, dt, z);
    }
    return x;
}

template Tensor<float> forward_sample<float>(const NoiseSchedule&, const Tensor<float>&, double,
                                             const Tensor<float>&);
template Tensor<double> forward_sample<double>(const NoiseSchedule&, const Tensor<double>&, double,
                                               const Tensor<double>&);
template Graph<float>::Id score_matching_loss_at<float>(Graph<float>&, const NoiseSchedule&,
                                                        const GraphScoreFn<float>&, const Tensor<float>&,
                                                        double, const Tensor<float>&);
template Graph<double>::Id score_matching_loss_at<double>(Graph<double>&, const NoiseSchedule&,
                                                          const GraphScoreFn<double>&, const Tensor<double>&,
                                                          double, const Tensor<double>&);
template Graph<float>::Id score_matching_loss<float>(Graph<float>&, const NoiseSchedule&,
                                                     const GraphScoreFn<float>&, const Tensor<float>&, Rng&,
                                                     double);
template Graph<double>::Id score_matching_loss<double>(Graph<double>&, const NoiseSchedule&,
                                                       const GraphScoreFn<double>&, const Tensor<double>&,
                                                       Rng&, double);
template Tensor<float> reverse_step<float>(const NoiseSchedule&, const Tensor<float>&, double,
                                           const Tensor<float>&, double, const Tensor<float>&);
template Tensor<double> reverse_step<double>(const NoiseSchedule&, const Tensor<double>&, double,
                                             const Tensor<double>&, double, const Tensor<double>&);
template Tensor<float> sample<float>(const NoiseSchedule&, const ScoreFn<float>&, const Shape&, double,
                                     Rng&);
template Tensor<double> sample<double>(const NoiseSchedule&, const ScoreFn<double>&, const Shape&, double,
                                       Rng&);

}  // namespace vtck
