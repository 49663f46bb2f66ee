#include "vtck/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "vtck/errors.hpp"

namespace vtck {

ReferenceUtterance speaker_reference(const Corpus& corpus, int64_t speaker_id) {
    const auto utts = corpus.utterances_of(speaker_id);
    if (utts.empty()) throw ConfigError("eval: speaker " + std::to_string(speaker_id) + " has no utterances");
    const Utterance& utt = *utts[0];
    ReferenceUtterance ref;
    ref.mel = utt.mel;
    ref.content = utt.content;
    ref.tokens = utt.tokens;
    ref.speaker_id = utt.speaker_id;
    ref.speaker = corpus.extract_embedding(utt.mel);
    ref.norm_mean = corpus.norm_mean();
    ref.norm_std = corpus.norm_std();
    return ref;
}

namespace {

std::vector<int64_t> resolve_speakers(const Corpus& corpus, const EvalOptions& opts) {
    if (!opts.speakers.empty()) return opts.speakers;
    std::vector<int64_t> out;
    for (const auto& s : corpus.speakers()) {
        if (corpus.is_heldout(s.id)) out.push_back(s.id);
    }
    if (out.empty()) throw ConfigError("eval: corpus has no held-out speakers");
    return out;
}

struct GenTask {
    int64_t speaker_id;
    const Utterance* sentence;
    uint64_t seed;
    double similarity = 0.0;
    double accuracy = 0.0;
};

}  // namespace

EvalRow evaluate_strategy(const Corpus& corpus, const ModelParams<float>& params,
                          const AdapterMap& adapters, const GuidanceStrategy& strategy,
                          const NoiseSchedule& sched, const EvalOptions& opts, std::string label) {
    const std::vector<int64_t> speakers = resolve_speakers(corpus, opts);

    std::vector<GenTask> tasks;
    std::map<int64_t, Tensor<float>> cond_embedding;
    for (int64_t spk : speakers) {
        const auto utts = corpus.utterances_of(spk);
        if (static_cast<int64_t>(utts.size()) < opts.sentences + 1) {
            throw ConfigError("eval: speaker " + std::to_string(spk) + " needs " +
                              std::to_string(opts.sentences + 1) + " utterances (reference + sentences)");
        }
        cond_embedding.emplace(spk, corpus.extract_embedding(utts[0]->mel));
        for (int64_t s = 1; s <= opts.sentences; ++s) {
            for (int64_t rep = 0; rep < opts.repeats; ++rep) {
                GenTask task;
                task.speaker_id = spk;
                task.sentence = utts[static_cast<size_t>(s)];
                // seed depends on (eval seed, speaker, sentence, repeat) only
                task.seed = derive_seed(opts.seed, static_cast<uint64_t>(spk) * 1000000 +
                                                       static_cast<uint64_t>(s) * 1000 +
                                                       static_cast<uint64_t>(rep));
                tasks.push_back(task);
            }
        }
    }

    // Validate up front: exceptions must not escape the parallel region.
    for (int64_t spk : speakers) {
        auto it = adapters.find(spk);
        const LoraAdapterSet<float>* ad = it == adapters.end() ? nullptr : it->second;
        strategy.validate(ad != nullptr, ad ? std::optional<double>(ad->alpha) : std::nullopt);
    }

    const int64_t n = static_cast<int64_t>(tasks.size());
    const int threads = std::max(1, opts.threads);
    std::string first_error;
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
    for (int64_t i = 0; i < n; ++i) {
        GenTask& task = tasks[static_cast<size_t>(i)];
        try {
            auto it = adapters.find(task.speaker_id);
            const LoraAdapterSet<float>* ad = it == adapters.end() ? nullptr : it->second;
            Conditioning<float> cond{task.sentence->content, cond_embedding.at(task.speaker_id)};
            Rng rng(task.seed);
            const Tensor<float> mel = synthesize<float>(sched, params, ad, strategy, cond, opts.dt, rng);
            task.similarity = corpus.speaker_similarity(mel, corpus.speaker(task.speaker_id));
            task.accuracy = corpus.content_accuracy(mel, task.sentence->tokens);
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw RangeError("eval: generation failed: " + first_error);

    EvalRow row;
    row.label = std::move(label);
    row.generations = n;
    for (const GenTask& task : tasks) {  // fixed merge order
        row.similarity += task.similarity;
        row.accuracy += task.accuracy;
    }
    row.similarity /= static_cast<double>(n);
    row.accuracy /= static_cast<double>(n);
    return row;
}

EvalRow evaluate_ground_truth(const Corpus& corpus, const EvalOptions& opts) {
    const std::vector<int64_t> speakers = resolve_speakers(corpus, opts);
    EvalRow row;
    row.label = "ground-truth";
    for (int64_t spk : speakers) {
        const auto utts = corpus.utterances_of(spk);
        for (int64_t s = 1; s <= opts.sentences && s < static_cast<int64_t>(utts.size()); ++s) {
            row.similarity += corpus.speaker_similarity(utts[static_cast<size_t>(s)]->mel, corpus.speaker(spk));
            row.accuracy += corpus.content_accuracy(utts[static_cast<size_t>(s)]->mel,
                                                    utts[static_cast<size_t>(s)]->tokens);
            row.generations += 1;
        }
    }
    row.similarity /= static_cast<double>(row.generations);
    row.accuracy /= static_cast<double>(row.generations);
    return row;
}

SweepKind sweep_kind_from_string(const std::string& s) {
    if (s == "rank") return SweepKind::kRank;
    if (s == "alpha") return SweepKind::kAlpha;
    if (s == "lr-iters") return SweepKind::kLrIters;
    if (s == "targets") return SweepKind::kTargets;
    if (s == "strategy") return SweepKind::kStrategy;
    throw ConfigError("sweep: unknown axis '" + s + "' (want rank|alpha|lr-iters|targets|strategy)");
}

namespace {

// Fine-tunes one adapter set per held-out speaker under the given knobs.
std::map<int64_t, LoraAdapterSet<float>> adapt_speakers(const Corpus& corpus,
                                                        const ModelParams<float>& params,
                                                        const NoiseSchedule& sched,
                                                        const TrainConfig& finetune_config, int64_t rank,
                                                        double alpha, LoraTargets targets,
                                                        const std::vector<int64_t>& speakers,
                                                        uint64_t salt) {
    std::map<int64_t, LoraAdapterSet<float>> out;
    for (int64_t spk : speakers) {
        ReferenceUtterance ref = speaker_reference(corpus, spk);
        Rng arng(derive_seed(salt, 0xada0000ULL + static_cast<uint64_t>(spk)));
        auto adapters = init_adapters(params, targets, rank, alpha, arng);
        TrainConfig fc = finetune_config;
        fc.seed = derive_seed(salt, 0xf17e0000ULL + static_cast<uint64_t>(spk));
        finetune(fc, ref, params, adapters, sched, nullptr);
        out.emplace(spk, std::move(adapters));
    }
    return out;
}

AdapterMap as_map(const std::map<int64_t, LoraAdapterSet<float>>& owned) {
    AdapterMap m;
    for (const auto& [spk, set] : owned) m.emplace(spk, &set);
    return m;
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

}  // namespace

std::vector<EvalRow> run_sweep(SweepKind kind, const Corpus& corpus, const ModelParams<float>& params,
                               const NoiseSchedule& sched, const SweepSettings& settings,
                               const EvalOptions& opts) {
    const std::vector<int64_t> speakers = resolve_speakers(corpus, opts);
    std::vector<EvalRow> rows;
    auto adapt_eval = [&](const std::string& label, int64_t rank, double alpha, LoraTargets targets,
                          const TrainConfig& fc, const GuidanceStrategy& strategy, uint64_t salt) {
        auto owned = adapt_speakers(corpus, params, sched, fc, rank, alpha, targets, speakers, salt);
        rows.push_back(evaluate_strategy(corpus, params, as_map(owned), strategy, sched, opts, label));
    };

    switch (kind) {
        case SweepKind::kRank:
            for (int64_t rank : {2, 4, 8, 16, 32}) {
                adapt_eval("rank=" + std::to_string(rank), rank, settings.alpha, settings.targets,
                           settings.finetune, settings.strategy, opts.seed ^ static_cast<uint64_t>(rank));
            }
            break;
        case SweepKind::kAlpha:
            for (double alpha : {1.0, 2.0, 4.0, 8.0}) {
                adapt_eval("alpha=" + fmt("%g", alpha), settings.rank, alpha, settings.targets,
                           settings.finetune, settings.strategy,
                           opts.seed ^ static_cast<uint64_t>(alpha * 16));
            }
            break;
        case SweepKind::kLrIters:
            for (const auto& [lr, iters] : std::vector<std::pair<double, int64_t>>{
                     {2e-5, 500}, {2e-5, 2000}, {1e-4, 500}, {1e-4, 2000}}) {
                TrainConfig fc = settings.finetune;
                fc.lr = lr;
                fc.iterations = iters;
                adapt_eval("lr=" + fmt("%g", lr) + ",iters=" + std::to_string(iters), settings.rank,
                           settings.alpha, settings.targets, fc, settings.strategy,
                           opts.seed ^ static_cast<uint64_t>(iters + lr * 1e7));
            }
            break;
        case SweepKind::kTargets:
            for (LoraTargets targets : {LoraTargets::kAttention, LoraTargets::kAttentionPlusOthers}) {
                adapt_eval("targets=" + lora_targets_to_string(targets), settings.rank, settings.alpha,
                           targets, settings.finetune, settings.strategy,
                           opts.seed ^ (targets == LoraTargets::kAttention ? 1u : 2u));
            }
            break;
        case SweepKind::kStrategy: {
            // one shared adaptation, compared across sampling strategies
            auto owned = adapt_speakers(corpus, params, sched, settings.finetune, settings.rank,
                                        settings.alpha, settings.targets, speakers, opts.seed ^ 0x57ca7);
            const AdapterMap map = as_map(owned);
            auto eval_with = [&](const std::string& label, const GuidanceStrategy& strategy) {
                rows.push_back(evaluate_strategy(corpus, params, map, strategy, sched, opts, label));
            };
            eval_with("w/o strengthening", {GuidanceKind::kNone, 0.0, std::nullopt});
            eval_with("alpha-boost 2.0x", {GuidanceKind::kLoraScaleBoost, 0.0, 2.0 * settings.alpha});
            eval_with("embed-cfg gamma=1", {GuidanceKind::kEmbedCfg, 1.0, std::nullopt});
            eval_with("embed-cfg gamma=2", {GuidanceKind::kEmbedCfg, 2.0, std::nullopt});
            eval_with("lora-cfg gamma=1", {GuidanceKind::kLoraCfg, 1.0, std::nullopt});
            eval_with("lora-cfg gamma=2", {GuidanceKind::kLoraCfg, 2.0, std::nullopt});
            eval_with("full-cfg gamma=1", {GuidanceKind::kFullCfg, 1.0, std::nullopt});
            eval_with("full-cfg gamma=2", {GuidanceKind::kFullCfg, 2.0, std::nullopt});
            break;
        }
    }
    return rows;
}

std::string format_eval_table(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s %12s %12s %6s\n", "config", "similarity", "accuracy", "gens");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-26s %12.4f %12.4f %6lld\n", r.label.c_str(), r.similarity,
                      r.accuracy, static_cast<long long>(r.generations));
        out << line;
    }
    return out.str();
}

std::string format_eval_tsv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out << "config\tsimilarity\taccuracy\tgenerations\n";
    char line[160];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f\t%lld\n", r.label.c_str(), r.similarity,
                      r.accuracy, static_cast<long long>(r.generations));
        out << line;
    }
    return out.str();
}

int vtk_threads_from_env() {
    const char* env = std::getenv("VTK_THREADS");
    if (!env || !*env) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

}  // namespace vtck
