#pragma once

// Low-rank adapter algebra: per-target (A, B) pairs with delta alpha * B * A
// over a frozen base linear W [d, k]. B starts at zero so a fresh adapter set
// is an exact no-op on the forward pass.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtck/container.hpp"
#include "vtck/rng.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

template <class Real>
class ModelParams;

enum class LoraTargets { kAttention, kAttentionPlusOthers };

LoraTargets lora_targets_from_string(const std::string& s);
std::string lora_targets_to_string(LoraTargets t);

template <class Real>
struct LoraAdapter {
    std::string target;   // name of the base linear weight W [d, k]
    Tensor<Real> a;       // [r, k]
    Tensor<Real> b;       // [d, r]
    int64_t rank = 0;
    double alpha = 0.0;

    int64_t trainable_params() const { return a.numel() + b.numel(); }  // = r * (d + k)
};

template <class Real>
struct LoraAdapterSet {
    std::vector<LoraAdapter<Real>> adapters;  // ordered by target name
    int64_t rank = 0;
    double alpha = 0.0;
    LoraTargets targets = LoraTargets::kAttention;
    uint64_t base_digest = 0;

    const LoraAdapter<Real>* find(const std::string& target) const {
        for (const auto& ad : adapters) {
            if (ad.target == target) return &ad;
        }
        return nullptr;
    }
    int64_t trainable_params() const {
        int64_t n = 0;
        for (const auto& ad : adapters) n += ad.trainable_params();
        return n;
    }
};

// A ~ normal(0, 1/r), B = 0, so the initial forward equals the base model
// exactly. Targets resolve against the base params per policy; an empty
// resolution is a configuration error.
template <class Real>
LoraAdapterSet<Real> init_adapters(const ModelParams<Real>& params, LoraTargets targets, int64_t rank,
                                   double alpha, Rng& rng);

// New params with W <- W + alpha_eff * B * A at every target; the input is
// untouched. Digest mismatch against the adapter metadata is an integrity
// error unless force is set.
template <class Real>
ModelParams<Real> merge(const ModelParams<Real>& params, const LoraAdapterSet<Real>& adapters,
                        std::optional<double> alpha_override = std::nullopt, bool force = false);

struct ParamReport {
    int64_t trainable = 0;
    int64_t total = 0;
    double ratio = 0.0;
};

template <class Real>
ParamReport param_accounting(const ModelParams<Real>& params, const LoraAdapterSet<Real>& adapters);

// Adapter container layout: tensors "<target>.lora_a"/"<target>.lora_b" plus
// metadata keys {rank, alpha, targets, base_digest}.
Container adapters_to_container(const LoraAdapterSet<float>& set);
LoraAdapterSet<float> adapters_from_container(const Container& c);

}  // namespace vtck
