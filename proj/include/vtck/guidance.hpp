#pragma once

// Speaker-information strengthening at inference. Classifier-free guidance
//   s_hat = s_cond + gamma * (s_cond - s_uncon)
// with three choices of the unconditional score, or an inference-time LoRA
// scale boost instead (never both):
//   embed_cfg:        s_uncon from adapters ON,  speaker = e_phi
//   lora_cfg:         s_uncon from adapters OFF, speaker = e_S
//   full_cfg:         s_uncon from adapters OFF, speaker = e_phi
//   lora_scale_boost: no guidance; adapters applied at alpha_infer > alpha
// CFG kinds cost exactly two network evaluations per call, the others one.

#include <optional>

#include "vtck/diffusion.hpp"
#include "vtck/lora.hpp"
#include "vtck/model.hpp"
#include "vtck/rng.hpp"
#include "vtck/schedule.hpp"

namespace vtck {

enum class GuidanceKind { kNone, kEmbedCfg, kLoraCfg, kFullCfg, kLoraScaleBoost };

GuidanceKind guidance_kind_from_string(const std::string& s);
std::string guidance_kind_to_string(GuidanceKind k);

struct GuidanceStrategy {
    GuidanceKind kind = GuidanceKind::kEmbedCfg;
    double gamma = 1.0;                 // gradient scale, >= 0
    std::optional<double> alpha_infer;  // LoRA scale override (boost only)

    // Strategies are mutually exclusive: a boost with gamma > 0 or a CFG kind
    // with an alpha override is rejected rather than silently composed.
    // adapter_alpha is the training-time alpha when adapters are in play.
    void validate(bool has_adapters, std::optional<double> adapter_alpha) const;
};

// The adopted setup: embed_cfg with gamma = 1 and the training-time alpha.
GuidanceStrategy default_strategy();

// One guided score evaluation. cond_with_es carries the target speaker
// embedding; e_phi is the model's unconditional embedding. Evaluations are
// counted into `counter` when given. Base params are never mutated, also not
// for the adapters-OFF unconditional evaluations.
template <class Real>
Tensor<Real> guided_score(const GuidanceStrategy& strategy, const ModelParams<Real>& params,
                          const LoraAdapterSet<Real>* adapters, const Tensor<Real>& x_t, double t,
                          const Conditioning<Real>& cond_with_es, const Tensor<Real>& e_phi,
                          EvalCounter* counter = nullptr);

// Full reverse-diffusion synthesis under a strategy. Frame count comes from
// cond.content. The rng stream depends only on the seed and step count, so
// strategies compared under the same rng share their per-step noise.
template <class Real>
Tensor<Real> synthesize(const NoiseSchedule& sched, const ModelParams<Real>& params,
                        const LoraAdapterSet<Real>* adapters, const GuidanceStrategy& strategy,
                        const Conditioning<Real>& cond, double dt, Rng& rng,
                        EvalCounter* counter = nullptr);

}  // namespace vtck
