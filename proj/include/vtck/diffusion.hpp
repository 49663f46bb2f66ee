#pragma once

// Variance-preserving forward process, the score-matching objective and the
// discretized reverse sampler.
//
//   forward:  x_t = mean_coeff(t) x0 + noise_coeff(t) eps
//   loss:     mean((noise_coeff(t) s(x_t) + eps)^2), t ~ U[t_min, 1]
//   reverse:  x_{t-dt} = x_t + beta_t (x_t / 2 + s(x_t, t)) dt + sqrt(beta_t dt) z

#include <functional>

#include "vtck/autodiff.hpp"
#include "vtck/rng.hpp"
#include "vtck/schedule.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

// Training-time floor on sampled t; keeps noise_coeff away from zero.
inline constexpr double kTrainTimeFloor = 1e-4;

template <class Real>
Tensor<Real> forward_sample(const NoiseSchedule& sched, const Tensor<Real>& x0, double t,
                            const Tensor<Real>& eps);

// Builds the model's score for (x_t, t) on the caller's graph.
template <class Real>
using GraphScoreFn =
    std::function<typename Graph<Real>::Id(Graph<Real>&, typename Graph<Real>::Id, double)>;

// Objective at a fixed (t, eps) probe; the stochastic version below samples
// them. Split so that evaluation probes are reproducible.
template <class Real>
typename Graph<Real>::Id score_matching_loss_at(Graph<Real>& g, const NoiseSchedule& sched,
                                                const GraphScoreFn<Real>& score_fn, const Tensor<Real>& x0,
                                                double t, const Tensor<Real>& eps);

template <class Real>
typename Graph<Real>::Id score_matching_loss(Graph<Real>& g, const NoiseSchedule& sched,
                                             const GraphScoreFn<Real>& score_fn, const Tensor<Real>& x0,
                                             Rng& rng, double t_min = kTrainTimeFloor);

template <class Real>
Tensor<Real> reverse_step(const NoiseSchedule& sched, const Tensor<Real>& x_t, double t,
                          const Tensor<Real>& score, double dt, const Tensor<Real>& z);

// Number of reverse steps for step size dt; T/dt must be whole (within fp
// tolerance).
int64_t step_count(double dt);

// Plain score callback for sampling (no graph involved).
template <class Real>
using ScoreFn = std::function<Tensor<Real>(const Tensor<Real>&, double)>;

// Iterates reverse_step from t = T down to 0, starting from standard normal
// noise. The z term is omitted on the final step. The rng stream is consumed
// identically for any score_fn: one draw for x_T, one per non-final step.
template <class Real>
Tensor<Real> sample(const NoiseSchedule& sched, const ScoreFn<Real>& score_fn, const Shape& shape,
                    double dt, Rng& rng);

}  // namespace vtck
