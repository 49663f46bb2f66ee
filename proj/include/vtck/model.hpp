#pragma once

// The conditional score network s(x_t | content, speaker, t): a small
// pre-norm transformer over mel frames. Content embeddings are added
// per-frame after the input projection, the speaker embedding and the
// sinusoidal time embedding are projected and added to every frame. Each
// block is self-attention + feed-forward with residuals. A learnable
// unconditional speaker embedding e_phi lives alongside the weights.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtck/autodiff.hpp"
#include "vtck/container.hpp"
#include "vtck/lora.hpp"
#include "vtck/rng.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

struct ModelConfig {
    int64_t d_mel = 16;
    int64_t hidden = 64;
    int64_t blocks = 2;
    int64_t heads = 2;
    int64_t d_content = 16;
    int64_t d_speaker = 16;
    int64_t ffn_mult = 2;

    int64_t ffn_dim() const { return hidden * ffn_mult; }
    void validate() const;
};

enum class ModuleClass { kAttention, kOther };

struct ParamSpec {
    std::string name;
    Shape shape;
    ModuleClass module_class;
};

// Canonical parameter table for a config: names, shapes and module-class
// tags in creation order. Single source of truth for build and load.
std::vector<ParamSpec> model_param_specs(const ModelConfig& config);

template <class Real>
class ModelParams {
public:
    struct Entry {
        std::string name;
        Tensor<Real> tensor;
        ModuleClass module_class;
    };

    ModelParams() = default;
    ModelParams(ModelConfig config, std::vector<Entry> entries);

    const ModelConfig& config() const { return config_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const Tensor<Real>& at(const std::string& name) const;
    Tensor<Real>& at(const std::string& name);
    ModuleClass module_class_of(const std::string& name) const;

    int64_t total_params() const;

    // Deep copy (fresh buffers).
    ModelParams clone() const;

    template <class To>
    ModelParams<To> cast() const {
        std::vector<typename ModelParams<To>::Entry> entries;
        entries.reserve(entries_.size());
        for (const auto& e : entries_) {
            entries.push_back({e.name, e.tensor.template cast<To>(), e.module_class});
        }
        return ModelParams<To>(config_, std::move(entries));
    }

private:
    ModelConfig config_;
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

template <class Real>
ModelParams<Real> build_model(const ModelConfig& config, Rng& rng);

// Checkpoint container round trip. The config travels in metadata.
Container params_to_container(const ModelParams<float>& params);
ModelParams<float> params_from_container(const Container& c);
uint64_t params_digest(const ModelParams<float>& params);

template <class Real>
struct Conditioning {
    Tensor<Real> content;  // [n_frames, d_content]
    Tensor<Real> speaker;  // [d_speaker]
};

struct EvalCounter {
    int64_t count = 0;
};

// Leaf ids of params (and adapters) registered in a graph. train_base /
// train_adapters decide which leaves carry gradients; the tensors themselves
// keep their shared grad buffers so optimizer state lives outside the graph.
template <class Real>
struct ModelBinding {
    const ModelParams<Real>* params = nullptr;
    std::map<std::string, typename Graph<Real>::Id> param_ids;
    std::map<std::string, std::pair<typename Graph<Real>::Id, typename Graph<Real>::Id>> adapter_ids;
    Real adapter_alpha = Real(0);
    bool has_adapters = false;
};

template <class Real>
ModelBinding<Real> bind_model(Graph<Real>& g, const ModelParams<Real>& params,
                              const LoraAdapterSet<Real>* adapters = nullptr,
                              std::optional<double> alpha_override = std::nullopt);

// Score network forward on an existing graph; x_t [n_frames, d_mel],
// content [n_frames, d_content], speaker [1, d_speaker] (graph ids).
template <class Real>
typename Graph<Real>::Id score_forward_on(Graph<Real>& g, const ModelBinding<Real>& binding,
                                          typename Graph<Real>::Id x_t, double t,
                                          typename Graph<Real>::Id content,
                                          typename Graph<Real>::Id speaker);

// Inference-only forward (no gradients). Counts one model evaluation.
template <class Real>
Tensor<Real> score_forward(const ModelParams<Real>& params, const LoraAdapterSet<Real>* adapters,
                           const Tensor<Real>& x_t, double t, const Conditioning<Real>& cond,
                           std::optional<double> alpha_override = std::nullopt,
                           EvalCounter* counter = nullptr);

// Sinusoidal embedding of scalar time, shape [1, dim].
template <class Real>
Tensor<Real> time_embedding(double t, int64_t dim);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace vtck
