#include "vtck/guidance.hpp"

#include <cmath>

#include "vtck/errors.hpp"

namespace vtck {

GuidanceKind guidance_kind_from_string(const std::string& s) {
    if (s == "none") return GuidanceKind::kNone;
    if (s == "embed-cfg") return GuidanceKind::kEmbedCfg;
    if (s == "lora-cfg") return GuidanceKind::kLoraCfg;
    if (s == "full-cfg") return GuidanceKind::kFullCfg;
    if (s == "alpha-boost") return GuidanceKind::kLoraScaleBoost;
    throw ConfigError("guidance: unknown strategy '" + s +
                      "' (want none|embed-cfg|lora-cfg|full-cfg|alpha-boost)");
}

std::string guidance_kind_to_string(GuidanceKind k) {
    switch (k) {
        case GuidanceKind::kNone: return "none";
        case GuidanceKind::kEmbedCfg: return "embed-cfg";
        case GuidanceKind::kLoraCfg: return "lora-cfg";
        case GuidanceKind::kFullCfg: return "full-cfg";
        case GuidanceKind::kLoraScaleBoost: return "alpha-boost";
    }
    return "?";
}

void GuidanceStrategy::validate(bool has_adapters, std::optional<double> adapter_alpha) const {
    if (gamma < 0.0) throw ConfigError("guidance: gamma must be >= 0");
    if (kind == GuidanceKind::kLoraScaleBoost) {
        if (gamma > 0.0) {
            throw ConfigError("guidance: alpha-boost cannot be combined with gamma > 0; strategies are exclusive");
        }
        if (!has_adapters) throw ConfigError("guidance: alpha-boost requires adapters");
        if (!alpha_infer.has_value()) throw ConfigError("guidance: alpha-boost requires an alpha override");
    } else {
        if (alpha_infer.has_value() && adapter_alpha.has_value() &&
            *alpha_infer != *adapter_alpha) {
            throw ConfigError("guidance: alpha override outside alpha-boost would compose strategies; rejected");
        }
        if (kind == GuidanceKind::kLoraCfg && !has_adapters) {
            throw ConfigError("guidance: lora-cfg needs adapters to remove");
        }
    }
}

GuidanceStrategy default_strategy() {
    GuidanceStrategy s;
    s.kind = GuidanceKind::kEmbedCfg;
    s.gamma = 1.0;
    s.alpha_infer = std::nullopt;  // training-time alpha
    return s;
}

template <class Real>
Tensor<Real> guided_score(const GuidanceStrategy& strategy, const ModelParams<Real>& params,
                          const LoraAdapterSet<Real>* adapters, const Tensor<Real>& x_t, double t,
                          const Conditioning<Real>& cond_with_es, const Tensor<Real>& e_phi,
                          EvalCounter* counter) {
    strategy.validate(adapters != nullptr,
                      adapters ? std::optional<double>(adapters->alpha) : std::nullopt);

    const std::optional<double> cond_alpha =
        strategy.kind == GuidanceKind::kLoraScaleBoost ? strategy.alpha_infer : std::nullopt;
    const Tensor<Real> s_cond = score_forward(params, adapters, x_t, t, cond_with_es, cond_alpha, counter);

    bool uncond_adapters = false;
    bool uncond_uses_phi = false;
    switch (strategy.kind) {
        case GuidanceKind::kNone:
        case GuidanceKind::kLoraScaleBoost:
            return s_cond;
        case GuidanceKind::kEmbedCfg:
            uncond_adapters = true;
            uncond_uses_phi = true;
            break;
        case GuidanceKind::kLoraCfg:
            uncond_adapters = false;
            uncond_uses_phi = false;
            break;
        case GuidanceKind::kFullCfg:
            uncond_adapters = false;
            uncond_uses_phi = true;
            break;
    }

    Conditioning<Real> uncond = cond_with_es;
    if (uncond_uses_phi) uncond.speaker = e_phi;
    const Tensor<Real> s_uncon = score_forward(params, uncond_adapters ? adapters : nullptr, x_t, t,
                                               uncond, std::nullopt, counter);

    const Real gamma = static_cast<Real>(strategy.gamma);
    Tensor<Real> out = Tensor<Real>::zeros(s_cond.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = s_cond[i] + gamma * (s_cond[i] - s_uncon[i]);
    }
    return out;
}

template <class Real>
Tensor<Real> synthesize(const NoiseSchedule& sched, const ModelParams<Real>& params,
                        const LoraAdapterSet<Real>* adapters, const GuidanceStrategy& strategy,
                        const Conditioning<Real>& cond, double dt, Rng& rng, EvalCounter* counter) {
    const Tensor<Real>& e_phi = params.at("e_phi");
    const int64_t frames = cond.content.dim(0);
    ScoreFn<Real> fn = [&](const Tensor<Real>& x_t, double t) {
        return guided_score(strategy, params, adapters, x_t, t, cond, e_phi, counter);
    };
    return sample(sched, fn, Shape{frames, params.config().d_mel}, dt, rng);
}

template Tensor<float> guided_score<float>(const GuidanceStrategy&, const ModelParams<float>&,
                                           const LoraAdapterSet<float>*, const Tensor<float>&, double,
                                           const Conditioning<float>&, const Tensor<float>&, EvalCounter*);
template Tensor<double> guided_score<double>(const GuidanceStrategy&, const ModelParams<double>&,
                                             const LoraAdapterSet<double>*, const Tensor<double>&, double,
                                             const Conditioning<double>&, const Tensor<double>&,
                                             EvalCounter*);
template Tensor<float> synthesize<float>(const NoiseSchedule&, const ModelParams<float>&,
                                         const LoraAdapterSet<float>*, const GuidanceStrategy&,
                                         const Conditioning<float>&, double, Rng&, EvalCounter*);
template Tensor<double> synthesize<double>(const NoiseSchedule&, const ModelParams<double>&,
                                           const LoraAdapterSet<double>*, const GuidanceStrategy&,
                                           const Conditioning<double>&, double, Rng&, EvalCounter*);

}  // namespace vtck
