#pragma once

// Pretraining of the multi-speaker score model (with unconditional-embedding
// substitution) and parameter-efficient fine-tuning of adapters against a
// single reference utterance. One Adam optimizer, no schedule, no decay.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "vtck/corpus.hpp"
#include "vtck/diffusion.hpp"
#include "vtck/lora.hpp"
#include "vtck/model.hpp"
#include "vtck/schedule.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

enum class TrainMode { kPretrain, kFinetuneLora, kFinetuneFull };

struct TrainConfig {
    double lr = 1e-4;
    int64_t iterations = 500;
    int64_t batch_size = 16;
    uint64_t seed = 0;
    double uncond_prob = 0.25;  // pretrain only: speaker-embedding dropout
    TrainMode mode = TrainMode::kPretrain;
    bool grad_clip = false;     // off unless instability shows up
    double clip_norm = 1.0;

    void validate() const;
};

// Adam with bias correction. Moment buffers exist exactly for the tensors
// registered as trainable.
template <class Real>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void add_param(const Tensor<Real>& t);  // shares the tensor's data/grad
    void step();
    void zero_grads();
    int64_t steps_taken() const { return steps_; }
    size_t param_count() const { return params_.size(); }

    // Global-norm gradient clip; applied before step() when enabled.
    void clip_by_global_norm(double max_norm);

private:
    struct Slot {
        Tensor<Real> param;
        std::vector<Real> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int64_t steps_ = 0;
    std::vector<Slot> params_;
};

struct TrainLog {
    std::vector<double> losses;  // one entry per step

    // Mean of the first / last `window` entries (clamped to available data).
    double smoothed_initial(size_t window = 100) const;
    double smoothed_final(size_t window = 100) const;
};

// Trains all params (including e_phi) on the corpus train split. Per step
// and batch member: draw an utterance, a time t, a noise eps, and substitute
// the speaker embedding with e_phi with probability uncond_prob. Loss lines
// "step<TAB>loss" go to loss_log when given. Aborts on non-finite loss.
TrainLog pretrain(const TrainConfig& config, const Corpus& corpus, ModelParams<float>& params,
                  const NoiseSchedule& sched, std::ostream* loss_log = nullptr);

// Updates only adapter A/B tensors against the digest-matched base; the base
// tensors are never written. The reference keeps its own extracted speaker
// embedding throughout (never e_phi).
TrainLog finetune(const TrainConfig& config, const ReferenceUtterance& ref,
                  const ModelParams<float>& base, LoraAdapterSet<float>& adapters,
                  const NoiseSchedule& sched, std::ostream* loss_log = nullptr);

// Full fine-tune of every decoder parameter on the reference; produces the
// theta* checkpoint consumed by the change-ratio analysis.
TrainLog finetune_full(const TrainConfig& config, const ReferenceUtterance& ref,
                       ModelParams<float>& params, const NoiseSchedule& sched,
                       std::ostream* loss_log = nullptr);

// Mean objective over a fixed, seed-derived probe set of (t, eps) pairs.
// Deterministic, so before/after comparisons are apples to apples.
double probe_loss(const ModelParams<float>& params, const LoraAdapterSet<float>* adapters,
                  const ReferenceUtterance& ref, const NoiseSchedule& sched, int64_t probes = 32,
                  uint64_t probe_seed = 0xbeefcafe);

}  // namespace vtck
