#pragma once

// Evaluation protocol and ablation sweeps tying the modules into reproducible
// pipelines. A configuration is scored by synthesizing held-out speakers'
// sentences several times and averaging the speaker-similarity and
// content-accuracy oracles. Generation seeds depend only on (seed, speaker,
// sentence, repeat), never on the strategy, so compared strategies share
// their per-step sampling noise.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtck/corpus.hpp"
#include "vtck/guidance.hpp"
#include "vtck/lora.hpp"
#include "vtck/model.hpp"
#include "vtck/schedule.hpp"
#include "vtck/training.hpp"

namespace vtck {

struct EvalOptions {
    std::vector<int64_t> speakers;  // empty: every held-out speaker
    int64_t sentences = 3;          // utterances 1..sentences of each speaker
    int64_t repeats = 5;            // generations per sentence
    double dt = 0.02;
    uint64_t seed = 42;
    int threads = 1;                // VTK_THREADS caps generation parallelism
};

struct EvalRow {
    std::string label;
    double similarity = 0.0;
    double accuracy = 0.0;
    int64_t generations = 0;
};

using AdapterMap = std::map<int64_t, const LoraAdapterSet<float>*>;  // speaker id -> adapters

// Reference utterance 0 of a speaker, with the oracle-extracted embedding.
ReferenceUtterance speaker_reference(const Corpus& corpus, int64_t speaker_id);

EvalRow evaluate_strategy(const Corpus& corpus, const ModelParams<float>& params,
                          const AdapterMap& adapters, const GuidanceStrategy& strategy,
                          const NoiseSchedule& sched, const EvalOptions& opts, std::string label);

// Ground-truth utterances pushed through the oracles; the ceiling row.
EvalRow evaluate_ground_truth(const Corpus& corpus, const EvalOptions& opts);

enum class SweepKind { kRank, kAlpha, kLrIters, kTargets, kStrategy };
SweepKind sweep_kind_from_string(const std::string& s);

struct SweepSettings {
    TrainConfig finetune;  // defaults for the non-swept axes
    int64_t rank = 16;
    double alpha = 8.0;
    LoraTargets targets = LoraTargets::kAttention;
    GuidanceStrategy strategy;  // defaults to default_strategy()
};

// Runs one ablation axis: fine-tunes per grid point and held-out speaker,
// evaluates, and returns one row per setting.
std::vector<EvalRow> run_sweep(SweepKind kind, const Corpus& corpus, const ModelParams<float>& params,
                               const NoiseSchedule& sched, const SweepSettings& settings,
                               const EvalOptions& opts);

std::string format_eval_table(const std::vector<EvalRow>& rows);
std::string format_eval_tsv(const std::vector<EvalRow>& rows);

int vtk_threads_from_env();

}  // namespace vtck
