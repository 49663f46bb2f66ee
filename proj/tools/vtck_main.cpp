// vtck: speaker-adaptive diffusion sandbox on a synthetic corpus.
// Subcommands cover the whole pipeline: corpus materialization, multi-speaker
// pretraining, low-rank adapter fine-tuning, guided sampling, weight-change
// analysis and oracle-based evaluation/ablation sweeps. Every command is
// deterministic under a fixed --seed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vtck/analysis.hpp"
#include "vtck/config.hpp"
#include "vtck/container.hpp"
#include "vtck/corpus.hpp"
#include "vtck/errors.hpp"
#include "vtck/guidance.hpp"
#include "vtck/lora.hpp"
#include "vtck/model.hpp"
#include "vtck/pipeline.hpp"
#include "vtck/training.hpp"

namespace {

using namespace vtck;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << text;
}

ModelParams<float> load_checkpoint(const std::string& path) {
    return params_from_container(load_container(path));
}

LoraAdapterSet<float> load_adapters(const std::string& path) {
    return adapters_from_container(load_container(path));
}

GuidanceStrategy strategy_from_flags(const std::string& name, double gamma,
                                     std::optional<double> alpha_infer) {
    GuidanceStrategy s;
    s.kind = guidance_kind_from_string(name);
    s.gamma = s.kind == GuidanceKind::kNone || s.kind == GuidanceKind::kLoraScaleBoost ? 0.0 : gamma;
    s.alpha_infer = alpha_infer;
    return s;
}

int run_corpus(const std::string& config_path, const std::string& out_dir,
               std::optional<uint64_t> seed) {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.corpus_seed = *seed;
    Corpus corpus = Corpus::generate(rc.corpus_config());
    for (const auto& w : corpus.warnings()) std::cerr << "warning: " << w << "\n";
    const std::string manifest = save_corpus(corpus, out_dir);
    std::printf("corpus: %zu utterances, %zu speakers (%lld held out)\n", corpus.utterances().size(),
                corpus.speakers().size(), static_cast<long long>(rc.heldout_speakers));
    std::printf("  gt similarity %.4f, gt accuracy %.4f, cross-speaker margin %.4f\n",
                corpus.stats().gt_similarity, corpus.stats().gt_content_accuracy,
                corpus.stats().cross_speaker_margin);
    std::printf("manifest: %s\n", manifest.c_str());
    return 0;
}

int run_pretrain(const std::string& config_path, const std::string& out_path, uint64_t seed,
                 const std::string& log_path) {
    RunConfig rc = load_run_config(config_path);
    Corpus corpus = Corpus::generate(rc.corpus_config());
    Rng rng(derive_seed(seed, 0x0de1));
    auto params = build_model<float>(rc.model, rng);
    std::printf("model: %lld parameters\n", static_cast<long long>(params.total_params()));

    NoiseSchedule sched = rc.schedule();
    std::ofstream log(log_path.empty() ? out_path + ".log" : log_path, std::ios::trunc);
    TrainLog train_log = pretrain(rc.pretrain_config(seed), corpus, params, sched, &log);
    save_container(out_path, params_to_container(params));
    std::printf("pretrained %lld steps: loss %.4f -> %.4f (smoothed %.4f -> %.4f)\n",
                static_cast<long long>(train_log.losses.size()),
                train_log.losses.empty() ? 0.0 : train_log.losses.front(),
                train_log.losses.empty() ? 0.0 : train_log.losses.back(), train_log.smoothed_initial(),
                train_log.smoothed_final());
    std::printf("checkpoint: %s (digest %s)\n", out_path.c_str(),
                digest_hex(params_digest(params)).c_str());
    return 0;
}

int run_finetune(const std::string& base_path, const std::string& ref_path, int64_t rank, double alpha,
                 double lr, int64_t iters, const std::string& targets, const std::string& adapter_out,
                 uint64_t seed, const std::string& log_path) {
    auto params = load_checkpoint(base_path);
    ReferenceUtterance ref = load_reference(ref_path);

    Rng arng(derive_seed(seed, 0xada));
    auto adapters = init_adapters(params, lora_targets_from_string(targets), rank, alpha, arng);
    auto report = param_accounting(params, adapters);
    std::printf("adapters: %lld trainable of %lld total (%.3f%%)\n",
                static_cast<long long>(report.trainable), static_cast<long long>(report.total),
                100.0 * report.ratio);

    TrainConfig tc;
    tc.mode = TrainMode::kFinetuneLora;
    tc.lr = lr;
    tc.iterations = iters;
    tc.batch_size = 1;
    tc.seed = seed;
    tc.uncond_prob = 0.0;

    NoiseSchedule sched;  // pretraining default schedule
    std::ofstream log(log_path.empty() ? adapter_out + ".log" : log_path, std::ios::trunc);
    TrainLog train_log = finetune(tc, ref, params, adapters, sched, &log);
    save_container(adapter_out, adapters_to_container(adapters));
    const double probe_base = probe_loss(params, nullptr, ref, sched);
    const double probe_adapted = probe_loss(params, &adapters, ref, sched);
    std::printf("finetuned %lld steps: probe loss %.4f -> %.4f\n",
                static_cast<long long>(train_log.losses.size()), probe_base, probe_adapted);
    std::printf("adapter: %s\n", adapter_out.c_str());
    return 0;
}

int run_sample(const std::string& base_path, const std::string& adapter_path,
               const std::string& strategy_name, double gamma, std::optional<double> alpha_infer,
               double dt, const std::string& tokens, const std::string& speaker_path,
               const std::string& out_path, uint64_t seed) {
    auto params = load_checkpoint(base_path);
    std::optional<LoraAdapterSet<float>> adapters;
    if (!adapter_path.empty()) adapters = load_adapters(adapter_path);

    ReferenceUtterance ref = load_reference(speaker_path);
    CorpusAssets assets(params.config().d_mel, params.config().d_speaker, params.config().d_content);
    Conditioning<float> cond{assets.content_for_tokens(tokens), ref.speaker};

    GuidanceStrategy strategy = strategy_from_flags(strategy_name, gamma, alpha_infer);
    NoiseSchedule sched;
    Rng rng(seed);
    EvalCounter evals;
    Tensor<float> mel = synthesize<float>(sched, params, adapters ? &*adapters : nullptr, strategy, cond,
                                          dt, rng, &evals);

    Container out;
    out.add("mel", mel);
    out.meta()["kind"] = "mel";
    out.meta()["tokens"] = tokens;
    out.meta()["strategy"] = strategy_name;
    out.meta()["gamma"] = std::to_string(strategy.gamma);
    out.meta()["dt"] = std::to_string(dt);
    out.meta()["seed"] = std::to_string(seed);
    out.meta()["base_digest"] = digest_hex(params_digest(params));
    if (alpha_infer) out.meta()["alpha_infer"] = std::to_string(*alpha_infer);
    save_container(out_path, out);
    std::printf("sampled %lld frames in %lld network evaluations -> %s\n",
                static_cast<long long>(mel.dim(0)), static_cast<long long>(evals.count),
                out_path.c_str());
    return 0;
}

int run_analyze(const std::string& before_path, const std::string& after_path,
                const std::string& records_out) {
    auto before = load_checkpoint(before_path);
    auto after = load_checkpoint(after_path);
    ChangeReport report = analyze(before, after);
    std::fputs(format_report_table(report).c_str(), stdout);
    if (!records_out.empty()) write_text(records_out, format_report_records(report));
    return 0;
}

int run_eval(const std::string& base_path, const std::vector<std::string>& adapter_paths,
             const std::string& corpus_manifest, const std::string& strategy_name, double gamma,
             std::optional<double> alpha_infer, std::vector<int64_t> speakers, int64_t repeats,
             int64_t sentences, double dt, uint64_t seed, const std::string& sweep_axis,
             const std::string& out_path, bool with_ground_truth) {
    auto params = load_checkpoint(base_path);
    Corpus corpus = load_corpus(corpus_manifest);
    NoiseSchedule sched;

    EvalOptions opts;
    opts.speakers = std::move(speakers);
    opts.repeats = repeats;
    opts.sentences = sentences;
    opts.dt = dt;
    opts.seed = seed;
    opts.threads = vtk_threads_from_env();

    std::vector<EvalRow> rows;
    if (!sweep_axis.empty()) {
        SweepSettings settings;
        settings.finetune.mode = TrainMode::kFinetuneLora;
        settings.finetune.batch_size = 1;
        settings.strategy = default_strategy();
        rows = run_sweep(sweep_kind_from_string(sweep_axis), corpus, params, sched, settings, opts);
    } else {
        AdapterMap map;
        std::vector<LoraAdapterSet<float>> owned;
        owned.reserve(adapter_paths.size());
        std::vector<int64_t> eval_speakers =
            opts.speakers.empty() ? [&] {
                std::vector<int64_t> held;
                for (const auto& s : corpus.speakers()) {
                    if (corpus.is_heldout(s.id)) held.push_back(s.id);
                }
                return held;
            }() : opts.speakers;
        if (!adapter_paths.empty() && adapter_paths.size() != eval_speakers.size()) {
            throw ConfigError("eval: need one --adapter per evaluated speaker (or none for zero-shot)");
        }
        for (size_t i = 0; i < adapter_paths.size(); ++i) {
            owned.push_back(load_adapters(adapter_paths[i]));
        }
        for (size_t i = 0; i < owned.size(); ++i) map.emplace(eval_speakers[i], &owned[i]);
        opts.speakers = eval_speakers;

        GuidanceStrategy strategy = strategy_from_flags(strategy_name, gamma, alpha_infer);
        if (with_ground_truth) rows.push_back(evaluate_ground_truth(corpus, opts));
        char label[96];
        std::snprintf(label, sizeof(label), "%s gamma=%g", strategy_name.c_str(), strategy.gamma);
        rows.push_back(evaluate_strategy(corpus, params, map, strategy, sched, opts, label));
    }

    std::fputs(format_eval_table(rows).c_str(), stdout);
    if (!out_path.empty()) write_text(out_path, format_eval_tsv(rows));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vtck: speaker-adaptive diffusion sandbox"};
    app.require_subcommand(1);

    // corpus
    auto* corpus_cmd = app.add_subcommand("corpus", "materialize the synthetic corpus");
    std::string config_path, out_path, log_path;
    std::optional<uint64_t> seed_opt;
    corpus_cmd->add_option("--config", config_path, "run config json")->required();
    corpus_cmd->add_option("--out", out_path, "output directory")->required();
    corpus_cmd->add_option("--seed", seed_opt, "override the corpus seed");

    // pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain the multi-speaker score model");
    std::string p_config, p_out, p_log;
    uint64_t p_seed = 0;
    pretrain_cmd->add_option("--config", p_config, "run config json")->required();
    pretrain_cmd->add_option("--out", p_out, "checkpoint output (.vtck)")->required();
    pretrain_cmd->add_option("--seed", p_seed, "training seed");
    pretrain_cmd->add_option("--log", p_log, "loss log path (default <out>.log)");

    // finetune
    auto* finetune_cmd = app.add_subcommand("finetune", "fit low-rank adapters to one reference");
    std::string f_base, f_ref, f_targets = "attn", f_out, f_log;
    int64_t f_rank = 16, f_iters = 500;
    double f_alpha = 8.0, f_lr = 1e-4;
    uint64_t f_seed = 0;
    finetune_cmd->add_option("--base", f_base, "base checkpoint")->required();
    finetune_cmd->add_option("--ref", f_ref, "reference utterance (.vtck)")->required();
    finetune_cmd->add_option("--rank", f_rank, "LoRA rank");
    finetune_cmd->add_option("--alpha", f_alpha, "LoRA scale");
    finetune_cmd->add_option("--lr", f_lr, "learning rate");
    finetune_cmd->add_option("--iters", f_iters, "iterations");
    finetune_cmd->add_option("--targets", f_targets, "attn | attn+others");
    finetune_cmd->add_option("--adapter-out", f_out, "adapter output (.vtck)")->required();
    finetune_cmd->add_option("--seed", f_seed, "training seed");
    finetune_cmd->add_option("--log", f_log, "loss log path (default <adapter-out>.log)");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "synthesize a mel with a guidance strategy");
    std::string s_base, s_adapter, s_strategy = "embed-cfg", s_tokens, s_speaker, s_out;
    double s_gamma = 1.0, s_dt = 0.02;
    std::optional<double> s_alpha_infer;
    uint64_t s_seed = 0;
    sample_cmd->add_option("--base", s_base, "base checkpoint")->required();
    sample_cmd->add_option("--adapter", s_adapter, "adapter file (optional)");
    sample_cmd->add_option("--strategy", s_strategy, "none|embed-cfg|lora-cfg|full-cfg|alpha-boost");
    sample_cmd->add_option("--gamma", s_gamma, "guidance gradient scale");
    sample_cmd->add_option("--alpha-infer", s_alpha_infer, "LoRA scale override (alpha-boost)");
    sample_cmd->add_option("--dt", s_dt, "reverse step size");
    sample_cmd->add_option("--text-tokens", s_tokens, "token string, one char in 0..7 per frame")->required();
    sample_cmd->add_option("--speaker", s_speaker, "reference utterance for the speaker embedding")->required();
    sample_cmd->add_option("--out", s_out, "mel output (.vtck)")->required();
    sample_cmd->add_option("--seed", s_seed, "sampling seed");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "weight change ratios between two checkpoints");
    std::string a_before, a_after, a_records;
    analyze_cmd->add_option("--before", a_before, "base checkpoint")->required();
    analyze_cmd->add_option("--after", a_after, "fine-tuned checkpoint")->required();
    analyze_cmd->add_option("--records", a_records, "write machine-readable records here");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "oracle metrics for a configuration or sweep");
    std::string e_base, e_corpus, e_strategy = "embed-cfg", e_sweep, e_out;
    std::vector<std::string> e_adapters;
    std::vector<int64_t> e_speakers;
    double e_gamma = 1.0, e_dt = 0.02;
    std::optional<double> e_alpha_infer;
    int64_t e_n = 5, e_sentences = 3;
    uint64_t e_seed = 42;
    bool e_gt = false;
    eval_cmd->add_option("--base", e_base, "base checkpoint")->required();
    eval_cmd->add_option("--adapter", e_adapters, "adapter file, one per evaluated speaker");
    eval_cmd->add_option("--corpus", e_corpus, "corpus manifest")->required();
    eval_cmd->add_option("--strategy", e_strategy, "none|embed-cfg|lora-cfg|full-cfg|alpha-boost");
    eval_cmd->add_option("--gamma", e_gamma, "guidance gradient scale");
    eval_cmd->add_option("--alpha-infer", e_alpha_infer, "LoRA scale override (alpha-boost)");
    eval_cmd->add_option("--speakers", e_speakers, "speaker ids (default: all held out)");
    eval_cmd->add_option("--n", e_n, "generations per sentence");
    eval_cmd->add_option("--sentences", e_sentences, "sentences per speaker");
    eval_cmd->add_option("--dt", e_dt, "reverse step size");
    eval_cmd->add_option("--seed", e_seed, "evaluation seed");
    eval_cmd->add_option("--sweep", e_sweep, "ablation axis: rank|alpha|lr-iters|targets|strategy");
    eval_cmd->add_option("--out", e_out, "write TSV records here");
    eval_cmd->add_flag("--ground-truth", e_gt, "include the ground-truth ceiling row");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*corpus_cmd) return run_corpus(config_path, out_path, seed_opt);
        if (*pretrain_cmd) return run_pretrain(p_config, p_out, p_seed, p_log);
        if (*finetune_cmd) {
            return run_finetune(f_base, f_ref, f_rank, f_alpha, f_lr, f_iters, f_targets, f_out, f_seed,
                                f_log);
        }
        if (*sample_cmd) {
            return run_sample(s_base, s_adapter, s_strategy, s_gamma, s_alpha_infer, s_dt, s_tokens,
                              s_speaker, s_out, s_seed);
        }
        if (*analyze_cmd) return run_analyze(a_before, a_after, a_records);
        if (*eval_cmd) {
            return run_eval(e_base, e_adapters, e_corpus, e_strategy, e_gamma, e_alpha_infer, e_speakers,
                            e_n, e_sentences, e_dt, e_seed, e_sweep, e_out, e_gt);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DimError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RangeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IncompatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const TrainingAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
