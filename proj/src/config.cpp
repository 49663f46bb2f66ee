#include "vtck/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vtck/errors.hpp"

namespace vtck {

namespace {

using nlohmann::json;

// Wraps a json object; every accessed key is marked, finish() rejects the
// rest by full path.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + path_ + "." + key + "'");
        }
    }

    void get_enum(const char* key, LoraTargets& out) {
        std::string s = lora_targets_to_string(out);
        get(key, s);
        out = lora_targets_from_string(s);
    }

    void get_enum(const char* key, GuidanceKind& out) {
        std::string s = guidance_kind_to_string(out);
        get(key, s);
        out = guidance_kind_from_string(s);
    }

    bool has(const char* key) const { return j_.contains(key); }

    StrictObject section(const char* key) {
        seen_.insert(key);
        return StrictObject(j_.at(key), path_.empty() ? key : path_ + "." + key);
    }

    void finish() const {
        for (auto& [key, value] : j_.items()) {
            (void)value;
            if (!seen_.count(key)) {
                throw ConfigError("config: unknown key '" + (path_.empty() ? key : path_ + "." + key) + "'");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

CorpusConfig RunConfig::corpus_config() const {
    CorpusConfig c;
    c.train_speakers = train_speakers;
    c.heldout_speakers = heldout_speakers;
    c.utterances_per_speaker = utterances_per_speaker;
    c.frames_per_utterance = frames_per_utterance;
    c.d_mel = model.d_mel;
    c.d_speaker = model.d_speaker;
    c.d_content = model.d_content;
    c.seed = corpus_seed;
    c.sigma_data = sigma_data;
    return c;
}

TrainConfig RunConfig::pretrain_config(uint64_t seed) const {
    TrainConfig t;
    t.lr = pretrain_lr;
    t.iterations = pretrain_iterations;
    t.batch_size = batch_size;
    t.seed = seed;
    t.uncond_prob = uncond_prob;
    t.mode = TrainMode::kPretrain;
    t.grad_clip = grad_clip;
    return t;
}

TrainConfig RunConfig::finetune_config(uint64_t seed) const {
    TrainConfig t;
    t.lr = finetune_lr;
    t.iterations = finetune_iterations;
    t.batch_size = 1;  // the full reference utterance per step
    t.seed = seed;
    t.uncond_prob = 0.0;
    t.mode = TrainMode::kFinetuneLora;
    t.grad_clip = grad_clip;
    return t;
}

GuidanceStrategy RunConfig::guidance_strategy() const {
    GuidanceStrategy s;
    s.kind = strategy;
    s.gamma = gamma;
    if (strategy == GuidanceKind::kLoraScaleBoost) s.alpha_infer = 2.0 * lora_alpha;
    return s;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid json: ") + e.what());
    }
    RunConfig cfg;
    StrictObject root(j, "");
    if (root.has("model")) {
        auto s = root.section("model");
        s.get("d_mel", cfg.model.d_mel);
        s.get("hidden", cfg.model.hidden);
        s.get("blocks", cfg.model.blocks);
        s.get("heads", cfg.model.heads);
        s.get("d_content", cfg.model.d_content);
        s.get("d_speaker", cfg.model.d_speaker);
        s.get("ffn_mult", cfg.model.ffn_mult);
        s.finish();
    }
    if (root.has("schedule")) {
        auto s = root.section("schedule");
        s.get("beta0", cfg.beta0);
        s.get("beta1", cfg.beta1);
        s.finish();
    }
    if (root.has("corpus")) {
        auto s = root.section("corpus");
        s.get("train_speakers", cfg.train_speakers);
        s.get("heldout_speakers", cfg.heldout_speakers);
        s.get("utterances_per_speaker", cfg.utterances_per_speaker);
        s.get("frames_per_utterance", cfg.frames_per_utterance);
        s.get("seed", cfg.corpus_seed);
        s.get("sigma_data", cfg.sigma_data);
        s.finish();
    }
    if (root.has("pretrain")) {
        auto s = root.section("pretrain");
        s.get("lr", cfg.pretrain_lr);
        s.get("iterations", cfg.pretrain_iterations);
        s.get("batch_size", cfg.batch_size);
        s.get("uncond_prob", cfg.uncond_prob);
        s.get("grad_clip", cfg.grad_clip);
        s.finish();
    }
    if (root.has("finetune")) {
        auto s = root.section("finetune");
        s.get("lr", cfg.finetune_lr);
        s.get("iterations", cfg.finetune_iterations);
        s.get("rank", cfg.lora_rank);
        s.get("alpha", cfg.lora_alpha);
        s.get_enum("targets", cfg.lora_targets);
        s.finish();
    }
    if (root.has("guidance")) {
        auto s = root.section("guidance");
        s.get_enum("strategy", cfg.strategy);
        s.get("gamma", cfg.gamma);
        s.get("dt", cfg.dt);
        s.finish();
    }
    root.finish();
    cfg.model.validate();
    cfg.corpus_config().validate();
    (void)cfg.schedule();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config not found: '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
    json j;
    j["model"] = {{"d_mel", cfg.model.d_mel},       {"hidden", cfg.model.hidden},
                  {"blocks", cfg.model.blocks},     {"heads", cfg.model.heads},
                  {"d_content", cfg.model.d_content}, {"d_speaker", cfg.model.d_speaker},
                  {"ffn_mult", cfg.model.ffn_mult}};
    j["schedule"] = {{"beta0", cfg.beta0}, {"beta1", cfg.beta1}};
    j["corpus"] = {{"train_speakers", cfg.train_speakers},
                   {"heldout_speakers", cfg.heldout_speakers},
                   {"utterances_per_speaker", cfg.utterances_per_speaker},
                   {"frames_per_utterance", cfg.frames_per_utterance},
                   {"seed", cfg.corpus_seed},
                   {"sigma_data", cfg.sigma_data}};
    j["pretrain"] = {{"lr", cfg.pretrain_lr},
                     {"iterations", cfg.pretrain_iterations},
                     {"batch_size", cfg.batch_size},
                     {"uncond_prob", cfg.uncond_prob},
                     {"grad_clip", cfg.grad_clip}};
    j["finetune"] = {{"lr", cfg.finetune_lr},
                     {"iterations", cfg.finetune_iterations},
                     {"rank", cfg.lora_rank},
                     {"alpha", cfg.lora_alpha},
                     {"targets", lora_targets_to_string(cfg.lora_targets)}};
    j["guidance"] = {{"strategy", guidance_kind_to_string(cfg.strategy)}, {"gamma", cfg.gamma}, {"dt", cfg.dt}};
    return j.dump(2) + "\n";
}

}  // namespace vtck
