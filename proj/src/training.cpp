#include "vtck/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "vtck/errors.hpp"

namespace vtck {

void TrainConfig::validate() const {
    if (lr <= 0) throw ConfigError("train: lr must be > 0");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (uncond_prob < 0.0 || uncond_prob > 1.0) throw ConfigError("train: uncond_prob must lie in [0,1]");
}

template <class Real>
Adam<Real>::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <class Real>
void Adam<Real>::add_param(const Tensor<Real>& t) {
    if (!t.requires_grad()) throw ContractError("adam: parameter does not require grad");
    Slot slot;
    slot.param = t;
    slot.m.assign(static_cast<size_t>(t.numel()), Real(0));
    slot.v.assign(static_cast<size_t>(t.numel()), Real(0));
    params_.push_back(std::move(slot));
}

template <class Real>
void Adam<Real>::step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (Slot& slot : params_) {
        Real* p = slot.param.data();
        const auto& grad = slot.param.grad();
        for (size_t i = 0; i < grad.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            const double m = beta1_ * static_cast<double>(slot.m[i]) + (1.0 - beta1_) * g;
            const double v = beta2_ * static_cast<double>(slot.v[i]) + (1.0 - beta2_) * g * g;
            slot.m[i] = static_cast<Real>(m);
            slot.v[i] = static_cast<Real>(v);
            const double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            p[i] = static_cast<Real>(static_cast<double>(p[i]) - update);
        }
    }
}

template <class Real>
void Adam<Real>::zero_grads() {
    for (Slot& slot : params_) slot.param.zero_grad();
}

template <class Real>
void Adam<Real>::clip_by_global_norm(double max_norm) {
    double norm2 = 0.0;
    for (Slot& slot : params_) {
        for (Real g : slot.param.grad()) norm2 += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(norm2);
    if (norm <= max_norm || norm == 0.0) return;
    const Real s = static_cast<Real>(max_norm / norm);
    for (Slot& slot : params_) {
        for (Real& g : slot.param.grad()) g *= s;
    }
}

double TrainLog::smoothed_initial(size_t window) const {
    const size_t n = std::min(window, losses.size());
    if (n == 0) return 0.0;
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += losses[i];
    return s / static_cast<double>(n);
}

double TrainLog::smoothed_final(size_t window) const {
    const size_t n = std::min(window, losses.size());
    if (n == 0) return 0.0;
    double s = 0.0;
    for (size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
    return s / static_cast<double>(n);
}

namespace {

void log_step(std::ostream* out, int64_t step, double loss) {
    if (!out) return;
    char line[64];
    std::snprintf(line, sizeof(line), "%lld\t%.9g\n", static_cast<long long>(step), loss);
    *out << line;
}

struct ExampleTask {
    const Tensor<float>* mel;
    const Tensor<float>* content;
    Tensor<float> speaker_row;  // [1, d_speaker]; shares e_phi when substituted
    uint64_t seed;
    double t = 0.0;
    double loss = 0.0;
};

// One batch of independent example graphs: forward + node-local backward in
// parallel, then a serial flush so gradient accumulation order is fixed.
double run_batch(std::vector<ExampleTask>& tasks, const ModelParams<float>& params,
                 const LoraAdapterSet<float>* adapters, const NoiseSchedule& sched) {
    const int64_t n = static_cast<int64_t>(tasks.size());
    std::vector<Graph<float>> graphs(static_cast<size_t>(n));
    const float seed_grad = 1.0f / static_cast<float>(n);
    std::string first_error;  // exceptions must not escape the parallel region
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        ExampleTask& task = tasks[static_cast<size_t>(i)];
        try {
            Graph<float>& g = graphs[static_cast<size_t>(i)];
            Rng rng(task.seed);
            auto binding = bind_model(g, params, adapters);
            auto content_id = g.input(*task.content);
            auto speaker_id = g.input(task.speaker_row);
            GraphScoreFn<float> fn = [&](Graph<float>& gg, Graph<float>::Id x_t, double t) {
                return score_forward_on(gg, binding, x_t, t, content_id, speaker_id);
            };
            task.t = kTrainTimeFloor + (NoiseSchedule::kT - kTrainTimeFloor) * rng.uniform();
            Tensor<float> eps = Tensor<float>::randn(task.mel->shape(), rng);
            auto loss_id = score_matching_loss_at(g, sched, fn, *task.mel, task.t, eps);
            task.loss = static_cast<double>(g.value(loss_id)[0]);
            g.backward_nodes(loss_id, seed_grad);
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw ContractError("training batch failed: " + first_error);
    double mean_loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        graphs[static_cast<size_t>(i)].flush_leaf_grads();
        mean_loss += tasks[static_cast<size_t>(i)].loss;
    }
    return mean_loss / static_cast<double>(n);
}

void abort_if_not_finite(double loss, int64_t step, double t) {
    if (std::isfinite(loss)) return;
    char msg[160];
    std::snprintf(msg, sizeof(msg), "training aborted: non-finite loss at step %lld (t=%.6g, loss=%g)",
                  static_cast<long long>(step), t, loss);
    throw TrainingAbort(msg);
}

Tensor<float> as_row(const Tensor<float>& vec) {
    return vec.reshaped({1, vec.numel()});
}

}  // namespace

TrainLog pretrain(const TrainConfig& config, const Corpus& corpus, ModelParams<float>& params,
                  const NoiseSchedule& sched, std::ostream* loss_log) {
    config.validate();
    if (corpus.config().train_speakers < 2) throw ConfigError("pretrain: corpus needs >= 2 train speakers");

    std::vector<const Utterance*> train_utts;
    for (const auto& u : corpus.utterances()) {
        if (!corpus.is_heldout(u.speaker_id)) train_utts.push_back(&u);
    }
    if (train_utts.empty()) throw ConfigError("pretrain: no train utterances");

    for (auto& e : params.entries()) e.tensor.set_requires_grad(true);
    Adam<float> opt(config.lr);
    for (auto& e : params.entries()) opt.add_param(e.tensor);

    const Tensor<float>& e_phi = params.at("e_phi");
    TrainLog log;
    Rng picker(derive_seed(config.seed, 0x9a7c4));
    for (int64_t step = 0; step < config.iterations; ++step) {
        std::vector<ExampleTask> tasks(static_cast<size_t>(config.batch_size));
        for (int64_t b = 0; b < config.batch_size; ++b) {
            ExampleTask& task = tasks[static_cast<size_t>(b)];
            const Utterance* utt = train_utts[picker.below(train_utts.size())];
            const bool uncond = picker.uniform() < config.uncond_prob;
            task.mel = &utt->mel;
            task.content = &utt->content;
            task.speaker_row = uncond ? as_row(e_phi) : as_row(corpus.speaker(utt->speaker_id).embedding);
            task.seed = derive_seed(config.seed, static_cast<uint64_t>(step) * 1024 + static_cast<uint64_t>(b));
        }
        opt.zero_grads();
        const double loss = run_batch(tasks, params, nullptr, sched);
        abort_if_not_finite(loss, step, tasks[0].t);
        if (config.grad_clip) opt.clip_by_global_norm(config.clip_norm);
        opt.step();
        log.losses.push_back(loss);
        log_step(loss_log, step, loss);
    }
    for (auto& e : params.entries()) e.tensor.set_requires_grad(false);
    return log;
}

namespace {

// Shared single-reference loop. `adapters` set: only A/B train, the base is
// read-only (its grad flags stay off, so backward never touches it).
// `full` set: every decoder parameter trains.
TrainLog finetune_impl(const TrainConfig& config, const ReferenceUtterance& ref,
                       const ModelParams<float>& params, LoraAdapterSet<float>* adapters,
                       ModelParams<float>* full, const NoiseSchedule& sched, std::ostream* loss_log) {
    config.validate();
    Adam<float> opt(config.lr);
    if (adapters) {
        for (auto& ad : adapters->adapters) {
            ad.a.set_requires_grad(true);
            ad.b.set_requires_grad(true);
            opt.add_param(ad.a);
            opt.add_param(ad.b);
        }
    } else {
        for (auto& e : full->entries()) {
            e.tensor.set_requires_grad(true);
            opt.add_param(e.tensor);
        }
    }

    TrainLog log;
    for (int64_t step = 0; step < config.iterations; ++step) {
        std::vector<ExampleTask> tasks(1);
        tasks[0].mel = &ref.mel;
        tasks[0].content = &ref.content;
        tasks[0].speaker_row = as_row(ref.speaker);
        tasks[0].seed = derive_seed(config.seed, 0xf17e0000ULL + static_cast<uint64_t>(step));
        opt.zero_grads();
        const double loss = run_batch(tasks, params, adapters, sched);
        abort_if_not_finite(loss, step, tasks[0].t);
        if (config.grad_clip) opt.clip_by_global_norm(config.clip_norm);
        opt.step();
        log.losses.push_back(loss);
        log_step(loss_log, step, loss);
    }
    if (adapters) {
        for (auto& ad : adapters->adapters) {
            ad.a.set_requires_grad(false);
            ad.b.set_requires_grad(false);
        }
    } else {
        for (auto& e : full->entries()) e.tensor.set_requires_grad(false);
    }
    return log;
}

}  // namespace

TrainLog finetune(const TrainConfig& config, const ReferenceUtterance& ref,
                  const ModelParams<float>& base, LoraAdapterSet<float>& adapters,
                  const NoiseSchedule& sched, std::ostream* loss_log) {
    if (adapters.base_digest != 0 && adapters.base_digest != params_digest(base)) {
        throw IntegrityError("finetune: adapter base digest does not match the given checkpoint");
    }
    return finetune_impl(config, ref, base, &adapters, nullptr, sched, loss_log);
}

TrainLog finetune_full(const TrainConfig& config, const ReferenceUtterance& ref,
                       ModelParams<float>& params, const NoiseSchedule& sched, std::ostream* loss_log) {
    return finetune_impl(config, ref, params, nullptr, &params, sched, loss_log);
}

double probe_loss(const ModelParams<float>& params, const LoraAdapterSet<float>* adapters,
                  const ReferenceUtterance& ref, const NoiseSchedule& sched, int64_t probes,
                  uint64_t probe_seed) {
    double total = 0.0;
    for (int64_t j = 0; j < probes; ++j) {
        Rng rng(derive_seed(probe_seed, static_cast<uint64_t>(j)));
        const double t = kTrainTimeFloor + (NoiseSchedule::kT - kTrainTimeFloor) * rng.uniform();
        Tensor<float> eps = Tensor<float>::randn(ref.mel.shape(), rng);
        Graph<float> g;
        auto binding = bind_model(g, params, adapters);
        auto content_id = g.input(ref.content);
        auto speaker_id = g.input(as_row(ref.speaker));
        GraphScoreFn<float> fn = [&](Graph<float>& gg, Graph<float>::Id x_t, double t_in) {
            return score_forward_on(gg, binding, x_t, t_in, content_id, speaker_id);
        };
        total += static_cast<double>(g.value(score_matching_loss_at(g, sched, fn, ref.mel, t, eps))[0]);
    }
    return total / static_cast<double>(probes);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace vtck
