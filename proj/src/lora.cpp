#include "vtck/lora.hpp"

#include <algorithm>
#include <cstdio>

#include "vtck/errors.hpp"
#include "vtck/kernels.hpp"
#include "vtck/model.hpp"

namespace vtck {

LoraTargets lora_targets_from_string(const std::string& s) {
    if (s == "attn") return LoraTargets::kAttention;
    if (s == "attn+others") return LoraTargets::kAttentionPlusOthers;
    throw ConfigError("lora: unknown target policy '" + s + "' (want attn or attn+others)");
}

std::string lora_targets_to_string(LoraTargets t) {
    return t == LoraTargets::kAttention ? "attn" : "attn+others";
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool is_weight_matrix(const std::string& name) {
    return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

template <class Real>
std::vector<std::string> resolve_targets(const ModelParams<Real>& params, LoraTargets policy) {
    std::vector<std::string> out;
    for (const auto& e : params.entries()) {
        if (e.tensor.ndim() != 2 || !is_weight_matrix(e.name)) continue;
        if (e.module_class == ModuleClass::kAttention || policy == LoraTargets::kAttentionPlusOthers) {
            out.push_back(e.name);
        }
    }
    return out;
}

template <class Real>
uint64_t digest_of(const ModelParams<Real>& params) {
    if constexpr (std::is_same_v<Real, float>) {
        return params_digest(params);
    } else {
        return params_digest(params.template cast<float>());
    }
}

}  // namespace

template <class Real>
LoraAdapterSet<Real> init_adapters(const ModelParams<Real>& params, LoraTargets targets, int64_t rank,
                                   double alpha, Rng& rng) {
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    const auto names = resolve_targets(params, targets);
    if (names.empty()) throw ConfigError("lora: target policy resolved to no linear layers");

    LoraAdapterSet<Real> set;
    set.rank = rank;
    set.alpha = alpha;
    set.targets = targets;
    set.base_digest = digest_of(params);
    for (const auto& name : names) {
        const Tensor<Real>& w = params.at(name);
        const int64_t d = w.dim(0), k = w.dim(1);
        if (rank > std::min(d, k)) {
            throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min dim of '" + name + "'");
        }
        LoraAdapter<Real> ad;
        ad.target = name;
        ad.rank = rank;
        ad.alpha = alpha;
        ad.a = Tensor<Real>::randn({rank, k}, rng, Real(0), Real(1.0 / static_cast<double>(rank)));
        ad.b = Tensor<Real>::zeros({d, rank});
        set.adapters.push_back(std::move(ad));
    }
    return set;
}

template <class Real>
ModelParams<Real> merge(const ModelParams<Real>& params, const LoraAdapterSet<Real>& adapters,
                        std::optional<double> alpha_override, bool force) {
    if (!force && adapters.base_digest != 0 && digest_of(params) != adapters.base_digest) {
        throw IntegrityError("lora: base digest mismatch; adapters were trained against a different checkpoint");
    }
    const Real alpha = static_cast<Real>(alpha_override.value_or(adapters.alpha));
    ModelParams<Real> merged = params.clone();
    for (const auto& ad : adapters.adapters) {
        if (!merged.has(ad.target)) {
            throw ConfigError("lora: merge target '" + ad.target + "' not found in model params");
        }
        Tensor<Real>& w = merged.at(ad.target);
        const int64_t d = w.dim(0), k = w.dim(1), r = ad.rank;
        // W += alpha * B A
        std::vector<Real> delta(static_cast<size_t>(d * k));
        kernels::matmul_nn(d, r, k, ad.b.data(), ad.a.data(), delta.data());
        kernels::axpy(d * k, alpha, delta.data(), w.data());
    }
    return merged;
}

template <class Real>
ParamReport param_accounting(const ModelParams<Real>& params, const LoraAdapterSet<Real>& adapters) {
    ParamReport report;
    report.trainable = adapters.trainable_params();
    report.total = params.total_params();
    report.ratio = report.total > 0 ? static_cast<double>(report.trainable) / static_cast<double>(report.total)
                                    : 0.0;
    return report;
}

Container adapters_to_container(const LoraAdapterSet<float>& set) {
    Container c;
    for (const auto& ad : set.adapters) {
        c.add(ad.target + ".lora_a", ad.a);
        c.add(ad.target + ".lora_b", ad.b);
    }
    c.meta()["kind"] = "adapter";
    c.meta()["rank"] = std::to_string(set.rank);
    c.meta()["alpha"] = format_double(set.alpha);
    c.meta()["targets"] = lora_targets_to_string(set.targets);
    c.meta()["base_digest"] = digest_hex(set.base_digest);
    return c;
}

LoraAdapterSet<float> adapters_from_container(const Container& c) {
    LoraAdapterSet<float> set;
    auto need = [&c](const std::string& key) {
        auto it = c.meta().find(key);
        if (it == c.meta().end()) throw IncompatError("adapter: missing metadata '" + key + "'");
        return it->second;
    };
    set.rank = std::stoll(need("rank"));
    set.alpha = std::stod(need("alpha"));
    set.targets = lora_targets_from_string(need("targets"));
    set.base_digest = std::stoull(need("base_digest"), nullptr, 16);

    std::vector<std::string> targets;
    for (const auto& [name, t] : c.tensors()) {
        (void)t;
        const std::string suffix = ".lora_a";
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            targets.push_back(name.substr(0, name.size() - suffix.size()));
        }
    }
    for (const auto& target : targets) {
        LoraAdapter<float> ad;
        ad.target = target;
        ad.a = c.at(target + ".lora_a");
        ad.b = c.at(target + ".lora_b");
        if (ad.a.ndim() != 2 || ad.b.ndim() != 2 || ad.a.dim(0) != set.rank || ad.b.dim(1) != set.rank) {
            throw IncompatError("adapter: inconsistent A/B shapes for target '" + target + "'");
        }
        ad.rank = set.rank;
        ad.alpha = set.alpha;
        set.adapters.push_back(std::move(ad));
    }
    if (set.adapters.empty()) throw IncompatError("adapter: container holds no adapter tensors");
    return set;
}

template struct LoraAdapter<float>;
template struct LoraAdapter<double>;
template struct LoraAdapterSet<float>;
template struct LoraAdapterSet<double>;
template LoraAdapterSet<float> init_adapters<float>(const ModelParams<float>&, LoraTargets, int64_t, double,
                                                    Rng&);
template LoraAdapterSet<double> init_adapters<double>(const ModelParams<double>&, LoraTargets, int64_t,
                                                      double, Rng&);
template ModelParams<float> merge<float>(const ModelParams<float>&, const LoraAdapterSet<float>&,
                                         std::optional<double>, bool);
template ModelParams<double> merge<double>(const ModelParams<double>&, const LoraAdapterSet<double>&,
                                           std::optional<double>, bool);
template ParamReport param_accounting<float>(const ModelParams<float>&, const LoraAdapterSet<float>&);
template ParamReport param_accounting<double>(const ModelParams<double>&, const LoraAdapterSet<double>&);

}  // namespace vtck
