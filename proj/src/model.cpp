#include "vtck/model.hpp"

#include <cmath>

#include "vtck/errors.hpp"

namespace vtck {

void ModelConfig::validate() const {
    if (d_mel <= 0 || hidden <= 0 || heads <= 0 || d_content <= 0 || d_speaker <= 0 || ffn_mult <= 0) {
        throw ConfigError("model: all dims must be positive");
    }
    if (blocks <= 0) throw ConfigError("model: need at least one block");
    if (hidden % heads != 0) {
        throw ConfigError("model: heads (" + std::to_string(heads) + ") must divide hidden (" +
                          std::to_string(hidden) + ")");
    }
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& c) {
    c.validate();
    std::vector<ParamSpec> specs;
    auto other = [&specs](std::string name, Shape shape) {
        specs.push_back({std::move(name), std::move(shape), ModuleClass::kOther});
    };
    auto attn = [&specs](std::string name, Shape shape) {
        specs.push_back({std::move(name), std::move(shape), ModuleClass::kAttention});
    };
    const int64_t h = c.hidden;
    other("in_proj.weight", {h, c.d_mel});
    other("in_proj.bias", {h});
    other("content_proj.weight", {h, c.d_content});
    other("content_proj.bias", {h});
    other("speaker_proj.weight", {h, c.d_speaker});
    other("speaker_proj.bias", {h});
    other("time_proj.weight", {h, h});
    other("time_proj.bias", {h});
    for (int64_t i = 0; i < c.blocks; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        other(p + "ln1.gain", {h});
        other(p + "ln1.bias", {h});
        attn(p + "attn.q.weight", {h, h});
        attn(p + "attn.k.weight", {h, h});
        attn(p + "attn.v.weight", {h, h});
        attn(p + "attn.out.weight", {h, h});
        other(p + "ln2.gain", {h});
        other(p + "ln2.bias", {h});
        other(p + "ffn.fc1.weight", {c.ffn_dim(), h});
        other(p + "ffn.fc1.bias", {c.ffn_dim()});
        other(p + "ffn.fc2.weight", {h, c.ffn_dim()});
        other(p + "ffn.fc2.bias", {h});
    }
    other("out_proj.weight", {c.d_mel, h});
    other("out_proj.bias", {c.d_mel});
    other("e_phi", {c.d_speaker});
    return specs;
}

template <class Real>
ModelParams<Real>::ModelParams(ModelConfig config, std::vector<Entry> entries)
    : config_(config), entries_(std::move(entries)) {
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (!index_.emplace(entries_[i].name, i).second) {
            throw ContractError("model: duplicate parameter '" + entries_[i].name + "'");
        }
    }
}

template <class Real>
const Tensor<Real>& ModelParams<Real>::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

template <class Real>
Tensor<Real>& ModelParams<Real>::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

template <class Real>
ModuleClass ModelParams<Real>::module_class_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return entries_[it->second].module_class;
}

template <class Real>
int64_t ModelParams<Real>::total_params() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <class Real>
ModelParams<Real> ModelParams<Real>::clone() const {
    std::vector<Entry> entries;
    entries.reserve(entries_.size());
    for (const auto& e : entries_) entries.push_back({e.name, e.tensor.clone(), e.module_class});
    return ModelParams(config_, std::move(entries));
}

namespace {

bool is_weight_matrix(const std::string& name) {
    return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

bool is_gain(const std::string& name) {
    return name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
}

}  // namespace

template <class Real>
ModelParams<Real> build_model(const ModelConfig& config, Rng& rng) {
    const auto specs = model_param_specs(config);
    std::vector<typename ModelParams<Real>::Entry> entries;
    entries.reserve(specs.size());
    for (const auto& spec : specs) {
        Tensor<Real> t;
        if (is_weight_matrix(spec.name) || spec.name == "e_phi") {
            t = Tensor<Real>::randn(spec.shape, rng, Real(0), Real(0.02));
        } else if (is_gain(spec.name)) {
            t = Tensor<Real>::full(spec.shape, Real(1));
        } else {
            t = Tensor<Real>::zeros(spec.shape);
        }
        entries.push_back({spec.name, std::move(t), spec.module_class});
    }
    return ModelParams<Real>(config, std::move(entries));
}

Container params_to_container(const ModelParams<float>& params) {
    Container c;
    for (const auto& e : params.entries()) c.add(e.name, e.tensor);
    const ModelConfig& m = params.config();
    c.meta()["kind"] = "checkpoint";
    c.meta()["model.d_mel"] = std::to_string(m.d_mel);
    c.meta()["model.hidden"] = std::to_string(m.hidden);
    c.meta()["model.blocks"] = std::to_string(m.blocks);
    c.meta()["model.heads"] = std::to_string(m.heads);
    c.meta()["model.d_content"] = std::to_string(m.d_content);
    c.meta()["model.d_speaker"] = std::to_string(m.d_speaker);
    c.meta()["model.ffn_mult"] = std::to_string(m.ffn_mult);
    return c;
}

ModelParams<float> params_from_container(const Container& c) {
    auto need = [&c](const std::string& key) {
        auto it = c.meta().find(key);
        if (it == c.meta().end()) throw IncompatError("checkpoint: missing metadata '" + key + "'");
        return std::stoll(it->second);
    };
    ModelConfig m;
    m.d_mel = need("model.d_mel");
    m.hidden = need("model.hidden");
    m.blocks = need("model.blocks");
    m.heads = need("model.heads");
    m.d_content = need("model.d_content");
    m.d_speaker = need("model.d_speaker");
    m.ffn_mult = need("model.ffn_mult");

    const auto specs = model_param_specs(m);
    std::vector<ModelParams<float>::Entry> entries;
    entries.reserve(specs.size());
    for (const auto& spec : specs) {
        if (!c.has(spec.name)) throw IncompatError("checkpoint: missing tensor '" + spec.name + "'");
        const Tensor<float>& t = c.at(spec.name);
        if (t.shape() != spec.shape) {
            throw IncompatError("checkpoint: tensor '" + spec.name + "' has shape " + shape_str(t.shape()) +
                                ", expected " + shape_str(spec.shape));
        }
        entries.push_back({spec.name, t, spec.module_class});
    }
    return ModelParams<float>(m, std::move(entries));
}

uint64_t params_digest(const ModelParams<float>& params) {
    return container_digest(params_to_container(params));
}

template <class Real>
Tensor<Real> time_embedding(double t, int64_t dim) {
    const int64_t half = dim / 2;
    Tensor<Real> out = Tensor<Real>::zeros({1, dim});
    for (int64_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(1e4) * static_cast<double>(i) / std::max<int64_t>(half - 1, 1));
        const double arg = 1e3 * t * freq;
        out[2 * i] = static_cast<Real>(std::sin(arg));
        out[2 * i + 1] = static_cast<Real>(std::cos(arg));
    }
    if (dim % 2 == 1) out[dim - 1] = static_cast<Real>(t);
    return out;
}

template <class Real>
ModelBinding<Real> bind_model(Graph<Real>& g, const ModelParams<Real>& params,
                              const LoraAdapterSet<Real>* adapters, std::optional<double> alpha_override) {
    ModelBinding<Real> binding;
    binding.params = &params;
    for (const auto& e : params.entries()) binding.param_ids[e.name] = g.input(e.tensor);
    if (adapters) {
        binding.has_adapters = true;
        binding.adapter_alpha = static_cast<Real>(alpha_override.value_or(adapters->alpha));
        for (const auto& ad : adapters->adapters) {
            if (!params.has(ad.target)) {
                throw ConfigError("adapter: target '" + ad.target + "' not found in model params");
            }
            binding.adapter_ids[ad.target] = {g.input(ad.a), g.input(ad.b)};
        }
    }
    return binding;
}

namespace {

// y = x W^T (+ bias) (+ alpha (x A^T) B^T when an adapter targets W).
template <class Real>
typename Graph<Real>::Id bound_linear(Graph<Real>& g, const ModelBinding<Real>& binding,
                                      typename Graph<Real>::Id x, const std::string& weight_name,
                                      const std::string& bias_name = {}) {
    auto y = g.matmul_nt(x, binding.param_ids.at(weight_name));
    auto ad = binding.adapter_ids.find(weight_name);
    if (ad != binding.adapter_ids.end()) {
        auto low = g.matmul_nt(g.matmul_nt(x, ad->second.first), ad->second.second);
        y = g.add(y, g.scale(low, binding.adapter_alpha));
    }
    if (!bias_name.empty()) y = g.add(y, binding.param_ids.at(bias_name));
    return y;
}

}  // namespace

template <class Real>
typename Graph<Real>::Id score_forward_on(Graph<Real>& g, const ModelBinding<Real>& binding,
                                          typename Graph<Real>::Id x_t, double t,
                                          typename Graph<Real>::Id content,
                                          typename Graph<Real>::Id speaker) {
    const ModelConfig& cfg = binding.params->config();
    const Tensor<Real>& xv = g.value(x_t);
    if (xv.ndim() != 2 || xv.dim(1) != cfg.d_mel) {
        throw DimError("score: x_t must be [n_frames," + std::to_string(cfg.d_mel) + "], got " +
                       shape_str(xv.shape()));
    }
    if (g.value(content).ndim() != 2 || g.value(content).dim(0) != xv.dim(0) ||
        g.value(content).dim(1) != cfg.d_content) {
        throw DimError("score: content must be [n_frames," + std::to_string(cfg.d_content) + "]");
    }
    if (g.value(speaker).numel() != cfg.d_speaker) {
        throw DimError("score: speaker embedding must have " + std::to_string(cfg.d_speaker) + " dims");
    }
    if (t < 0.0 || t > 1.0) throw RangeError("score: t must lie in [0,1], got " + std::to_string(t));

    auto h = bound_linear(g, binding, x_t, "in_proj.weight", "in_proj.bias");
    h = g.add(h, bound_linear(g, binding, content, "content_proj.weight", "content_proj.bias"));
    h = g.add(h, bound_linear(g, binding, speaker, "speaker_proj.weight", "speaker_proj.bias"));
    auto te = g.input(time_embedding<Real>(t, cfg.hidden));
    h = g.add(h, bound_linear(g, binding, te, "time_proj.weight", "time_proj.bias"));

    const int64_t d_head = cfg.hidden / cfg.heads;
    const Real inv_sqrt_dh = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(d_head)));
    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        auto hn = g.layer_norm(h, binding.param_ids.at(p + "ln1.gain"), binding.param_ids.at(p + "ln1.bias"),
                               Real(kLayerNormEps));
        auto q = bound_linear(g, binding, hn, p + "attn.q.weight");
        auto k = bound_linear(g, binding, hn, p + "attn.k.weight");
        auto v = bound_linear(g, binding, hn, p + "attn.v.weight");
        std::vector<typename Graph<Real>::Id> heads;
        heads.reserve(static_cast<size_t>(cfg.heads));
        for (int64_t head = 0; head < cfg.heads; ++head) {
            const int64_t c0 = head * d_head, c1 = c0 + d_head;
            auto qh = g.slice_cols(q, c0, c1);
            auto kh = g.slice_cols(k, c0, c1);
            auto vh = g.slice_cols(v, c0, c1);
            auto probs = g.softmax(g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh));
            heads.push_back(g.matmul(probs, vh));
        }
        auto ctx = cfg.heads == 1 ? heads[0] : g.concat_cols(heads);
        h = g.add(h, bound_linear(g, binding, ctx, p + "attn.out.weight"));

        auto hn2 = g.layer_norm(h, binding.param_ids.at(p + "ln2.gain"), binding.param_ids.at(p + "ln2.bias"),
                                Real(kLayerNormEps));
        auto f = bound_linear(g, binding, hn2, p + "ffn.fc1.weight", p + "ffn.fc1.bias");
        f = bound_linear(g, binding, g.gelu(f), p + "ffn.fc2.weight", p + "ffn.fc2.bias");
        h = g.add(h, f);
    }
    return bound_linear(g, binding, h, "out_proj.weight", "out_proj.bias");
}

template <class Real>
Tensor<Real> score_forward(const ModelParams<Real>& params, const LoraAdapterSet<Real>* adapters,
                           const Tensor<Real>& x_t, double t, const Conditioning<Real>& cond,
                           std::optional<double> alpha_override, EvalCounter* counter) {
    Graph<Real> g;
    auto binding = bind_model(g, params, adapters, alpha_override);
    auto x_id = g.input(x_t);
    auto c_id = g.input(cond.content);
    auto s_id = g.input(cond.speaker.reshaped({1, static_cast<int64_t>(cond.speaker.numel())}));
    auto out = score_forward_on(g, binding, x_id, t, c_id, s_id);
    if (counter) counter->count += 1;
    return g.value(out);
}

// explicit instantiations
template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<float> build_model<float>(const ModelConfig&, Rng&);
template ModelParams<double> build_model<double>(const ModelConfig&, Rng&);
template Tensor<float> time_embedding<float>(double, int64_t);
template Tensor<double> time_embedding<double>(double, int64_t);
template ModelBinding<float> bind_model<float>(Graph<float>&, const ModelParams<float>&,
                                               const LoraAdapterSet<float>*, std::optional<double>);
template ModelBinding<double> bind_model<double>(Graph<double>&, const ModelParams<double>&,
                                                 const LoraAdapterSet<double>*, std::optional<double>);
template Graph<float>::Id score_forward_on<float>(Graph<float>&, const ModelBinding<float>&, Graph<float>::Id,
                                                  double, Graph<float>::Id, Graph<float>::Id);
template Graph<double>::Id score_forward_on<double>(Graph<double>&, const ModelBinding<double>&,
                                                    Graph<double>::Id, double, Graph<double>::Id,
                                                    Graph<double>::Id);
template Tensor<float> score_forward<float>(const ModelParams<float>&, const LoraAdapterSet<float>*,
                                            const Tensor<float>&, double, const Conditioning<float>&,
                                            std::optional<double>, EvalCounter*);
template Tensor<double> score_forward<double>(const ModelParams<double>&, const LoraAdapterSet<double>*,
                                              const Tensor<double>&, double, const Conditioning<double>&,
                                              std::optional<double>, EvalCounter*);

}  // namespace vtck
