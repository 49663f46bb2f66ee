#pragma once

// JSON run configuration. Parsing is strict: any key the schema does not
// know is rejected with its full path, so typos never fall back to defaults
// silently. Corpus dims are tied to the model section.

#include <string>

#include "vtck/corpus.hpp"
#include "vtck/guidance.hpp"
#include "vtck/lora.hpp"
#include "vtck/model.hpp"
#include "vtck/schedule.hpp"
#include "vtck/training.hpp"

namespace vtck {

struct RunConfig {
    ModelConfig model;
    double beta0 = 0.05;
    double beta1 = 20.0;

    // corpus (dims mirror the model section)
    int64_t train_speakers = 8;
    int64_t heldout_speakers = 2;
    int64_t utterances_per_speaker = 20;
    int64_t frames_per_utterance = 64;
    uint64_t corpus_seed = 1234;
    double sigma_data = 0.05;

    // pretraining
    double pretrain_lr = 1e-4;
    int64_t pretrain_iterations = 3000;
    int64_t batch_size = 16;
    double uncond_prob = 0.25;
    bool grad_clip = false;

    // adaptation
    double finetune_lr = 1e-4;
    int64_t finetune_iterations = 500;
    int64_t lora_rank = 16;
    double lora_alpha = 8.0;
    LoraTargets lora_targets = LoraTargets::kAttention;

    // inference
    GuidanceKind strategy = GuidanceKind::kEmbedCfg;
    double gamma = 1.0;
    double dt = 0.02;

    NoiseSchedule schedule() const { return NoiseSchedule(beta0, beta1); }
    CorpusConfig corpus_config() const;
    TrainConfig pretrain_config(uint64_t seed) const;
    TrainConfig finetune_config(uint64_t seed) const;
    GuidanceStrategy guidance_strategy() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);  // ConfigError "config not found" when missing
std::string dump_run_config(const RunConfig& config);

}  // namespace vtck
