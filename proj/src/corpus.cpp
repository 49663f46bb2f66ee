#include "vtck/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vtck/errors.hpp"

namespace vtck {

namespace {

constexpr uint64_t kAssetSeed = 0xa55e75ULL;     // fixed-asset stream, version-pinned
constexpr uint64_t kSpeakerStream = 0x51000000ULL;
constexpr uint64_t kUtteranceStream = 0x077e0000ULL;
constexpr double kGainLo = 0.5, kGainHi = 2.0;
constexpr double kPatternAmp = 0.35;
constexpr double kMinLogGainNorm = 0.6;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Gauss-Jordan inverse with partial pivoting; n x n, row-major.
std::vector<double> invert_matrix(std::vector<double> m, int64_t n) {
    std::vector<double> inv(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) inv[static_cast<size_t>(i * n + i)] = 1.0;
    for (int64_t col = 0; col < n; ++col) {
        int64_t pivot = col;
        for (int64_t r = col + 1; r < n; ++r) {
            if (std::fabs(m[r * n + col]) > std::fabs(m[pivot * n + col])) pivot = r;
        }
        if (std::fabs(m[pivot * n + col]) < 1e-12) {
            throw ContractError("corpus: filter bank is singular");
        }
        if (pivot != col) {
            for (int64_t c = 0; c < n; ++c) {
                std::swap(m[col * n + c], m[pivot * n + c]);
                std::swap(inv[col * n + c], inv[pivot * n + c]);
            }
        }
        const double d = m[col * n + col];
        for (int64_t c = 0; c < n; ++c) {
            m[col * n + c] /= d;
            inv[col * n + c] /= d;
        }
        for (int64_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = m[r * n + col];
            if (f == 0.0) continue;
            for (int64_t c = 0; c < n; ++c) {
                m[r * n + c] -= f * m[col * n + c];
                inv[r * n + c] -= f * inv[col * n + c];
            }
        }
    }
    return inv;
}

int64_t token_index(char c) {
    if (c < '0' || c >= '0' + kVocabSize) {
        throw ConfigError(std::string("corpus: token char '") + c + "' outside vocabulary 0.." +
                          std::to_string(kVocabSize - 1));
    }
    return c - '0';
}

}  // namespace

void CorpusConfig::validate() const {
    if (train_speakers < 1 || heldout_speakers < 0 || utterances_per_speaker < 1 || frames_per_utterance < 1) {
        throw ConfigError("corpus: speaker/utterance/frame counts must be >= 1");
    }
    if (d_mel < 2 || d_speaker < 2 || d_content < 1) throw ConfigError("corpus: dims too small");
    if (sigma_data < 0) throw ConfigError("corpus: sigma_data must be >= 0");
}

CorpusAssets::CorpusAssets(int64_t d_mel, int64_t d_speaker, int64_t d_content)
    : d_mel_(d_mel), d_speaker_(d_speaker), d_content_(d_content) {
    // Raised-cosine bumps, one per speaker-gain channel, spread over mel bins.
    // Width 1.5 bins gives the kernel [0.25, 1, 0.25]: smooth but far from
    // singular, so gain recovery stays well conditioned.
    filter_.assign(static_cast<size_t>(d_mel * d_speaker), 0.0);
    for (int64_t j = 0; j < d_speaker; ++j) {
        const double center = (static_cast<double>(j) + 0.5) * static_cast<double>(d_mel) /
                                  static_cast<double>(d_speaker) - 0.5;
        for (int64_t m = 0; m < d_mel; ++m) {
            const double dist = std::fabs(static_cast<double>(m) - center);
            if (dist < 1.5) {
                filter_[static_cast<size_t>(m * d_speaker + j)] = 0.5 * (1.0 + std::cos(3.141592653589793 * dist / 1.5));
            }
        }
    }
    // Least-squares inverse (F^T F)^-1 F^T; plain inverse when square.
    std::vector<double> gram(static_cast<size_t>(d_speaker * d_speaker), 0.0);
    for (int64_t i = 0; i < d_speaker; ++i) {
        for (int64_t j = 0; j < d_speaker; ++j) {
            double acc = 0.0;
            for (int64_t m = 0; m < d_mel; ++m) {
                acc += filter_[m * d_speaker + i] * filter_[m * d_speaker + j];
            }
            gram[static_cast<size_t>(i * d_speaker + j)] = acc;
        }
    }
    const std::vector<double> gram_inv = invert_matrix(std::move(gram), d_speaker);
    filter_inv_.assign(static_cast<size_t>(d_speaker * d_mel), 0.0);
    for (int64_t i = 0; i < d_speaker; ++i) {
        for (int64_t m = 0; m < d_mel; ++m) {
            double acc = 0.0;
            for (int64_t j = 0; j < d_speaker; ++j) {
                acc += gram_inv[i * d_speaker + j] * filter_[m * d_speaker + j];
            }
            filter_inv_[static_cast<size_t>(i * d_mel + m)] = acc;
        }
    }

    // Token templates: 1 + amp * deviation, deviations centered per bin over
    // the vocabulary so the expected template is exactly flat.
    uint64_t mix = kAssetSeed ^ (static_cast<uint64_t>(kCorpusFormatVersion) << 32);
    Rng rng(derive_seed(mix, static_cast<uint64_t>(d_mel)));
    std::vector<std::vector<double>> dev(static_cast<size_t>(kVocabSize),
                                         std::vector<double>(static_cast<size_t>(d_mel)));
    for (auto& row : dev) {
        for (auto& x : row) x = rng.normal();
    }
    for (int64_t m = 0; m < d_mel; ++m) {
        double mean = 0.0;
        for (int64_t v = 0; v < kVocabSize; ++v) mean += dev[v][m];
        mean /= static_cast<double>(kVocabSize);
        for (int64_t v = 0; v < kVocabSize; ++v) dev[v][m] -= mean;
    }
    patterns_.assign(static_cast<size_t>(kVocabSize), std::vector<double>(static_cast<size_t>(d_mel)));
    for (int64_t v = 0; v < kVocabSize; ++v) {
        for (int64_t m = 0; m < d_mel; ++m) patterns_[v][m] = 1.0 + kPatternAmp * dev[v][m];
    }

    // Content projection: one unit-norm row per token.
    content_proj_.assign(static_cast<size_t>(kVocabSize * d_content), 0.f);
    for (int64_t v = 0; v < kVocabSize; ++v) {
        double norm2 = 0.0;
        std::vector<double> row(static_cast<size_t>(d_content));
        for (auto& x : row) {
            x = rng.normal();
            norm2 += x * x;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (int64_t cidx = 0; cidx < d_content; ++cidx) {
            content_proj_[static_cast<size_t>(v * d_content + cidx)] = static_cast<float>(row[cidx] * inv);
        }
    }
}

std::vector<double> CorpusAssets::coloration(const std::vector<double>& gains) const {
    std::vector<double> out(static_cast<size_t>(d_mel_), 0.0);
    for (int64_t m = 0; m < d_mel_; ++m) {
        double acc = 0.0;
        for (int64_t j = 0; j < d_speaker_; ++j) acc += filter_[m * d_speaker_ + j] * gains[static_cast<size_t>(j)];
        out[static_cast<size_t>(m)] = acc;
    }
    return out;
}

std::vector<double> CorpusAssets::gains_from_spectrum(const std::vector<double>& avg) const {
    std::vector<double> out(static_cast<size_t>(d_speaker_), 0.0);
    for (int64_t j = 0; j < d_speaker_; ++j) {
        double acc = 0.0;
        for (int64_t m = 0; m < d_mel_; ++m) acc += filter_inv_[j * d_mel_ + m] * avg[static_cast<size_t>(m)];
        out[static_cast<size_t>(j)] = std::max(acc, 1e-3);  // keep log defined for junk inputs
    }
    return out;
}

Tensor<float> CorpusAssets::embedding_of_gains(const std::vector<double>& gains) const {
    std::vector<double> lg(gains.size());
    double norm2 = 0.0;
    for (size_t i = 0; i < gains.size(); ++i) {
        lg[i] = std::log(gains[i]);
        norm2 += lg[i] * lg[i];
    }
    if (norm2 < 1e-24) throw RangeError("speaker oracle: log-gain direction undefined (near-flat spectrum)");
    const double inv = 1.0 / std::sqrt(norm2);
    Tensor<float> e = Tensor<float>::zeros({d_speaker_});
    for (size_t i = 0; i < gains.size(); ++i) e[static_cast<int64_t>(i)] = static_cast<float>(lg[i] * inv);
    return e;
}

Tensor<float> CorpusAssets::content_for_tokens(const std::string& tokens) const {
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n == 0) throw DimError("corpus: empty token string");
    Tensor<float> c = Tensor<float>::zeros({n, d_content_});
    for (int64_t f = 0; f < n; ++f) {
        const int64_t v = token_index(tokens[static_cast<size_t>(f)]);
        for (int64_t k = 0; k < d_content_; ++k) c[f * d_content_ + k] = content_proj_[v * d_content_ + k];
    }
    return c;
}

const std::vector<double>& CorpusAssets::pattern(int64_t token) const {
    return patterns_[static_cast<size_t>(token)];
}

std::string CorpusAssets::sample_tokens(int64_t frames, Rng& rng) const {
    // Balanced deck: every token gets an (almost) equal frame budget, split
    // into one or two runs, in shuffled order. Balance keeps the long-term
    // average template flat, which is what makes the average-spectrum
    // speaker signature clean on ground-truth data.
    std::vector<int64_t> budget(static_cast<size_t>(kVocabSize), frames / kVocabSize);
    for (int64_t r = 0; r < frames % kVocabSize; ++r) budget[rng.below(kVocabSize)] += 1;
    std::vector<std::pair<char, int64_t>> runs;
    for (int64_t v = 0; v < kVocabSize; ++v) {
        int64_t left = budget[static_cast<size_t>(v)];
        if (left == 0) continue;
        if (left >= 6 && rng.below(2) == 0) {  // sometimes split into two runs
            const int64_t first = left / 2;
            runs.push_back({static_cast<char>('0' + v), first});
            left -= first;
        }
        runs.push_back({static_cast<char>('0' + v), left});
    }
    for (size_t i = runs.size(); i > 1; --i) {
        std::swap(runs[i - 1], runs[rng.below(i)]);
    }
    std::string tokens;
    tokens.reserve(static_cast<size_t>(frames));
    for (const auto& [c, len] : runs) tokens.append(static_cast<size_t>(len), c);
    return tokens;
}

namespace {

std::vector<SyntheticSpeaker> make_speakers(const CorpusConfig& cfg, const CorpusAssets& assets) {
    const int64_t total = cfg.train_speakers + cfg.heldout_speakers;
    std::vector<SyntheticSpeaker> speakers;
    speakers.reserve(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        Rng rng(derive_seed(cfg.seed, kSpeakerStream + static_cast<uint64_t>(i)));
        SyntheticSpeaker s;
        s.id = i;
        for (int attempt = 0; attempt < 64; ++attempt) {
            s.gains.assign(static_cast<size_t>(cfg.d_speaker), 0.0);
            double norm2 = 0.0;
            for (auto& g : s.gains) {
                g = std::exp(rng.uniform(std::log(kGainLo), std::log(kGainHi)));
                const double lg = std::log(g);
                norm2 += lg * lg;
            }
            if (norm2 >= kMinLogGainNorm * kMinLogGainNorm) break;
        }
        s.embedding = assets.embedding_of_gains(s.gains);
        speakers.push_back(std::move(s));
    }
    // Distinct timbre guard: seeded draws collide only if something is wrong.
    for (size_t i = 0; i < speakers.size(); ++i) {
        for (size_t j = i + 1; j < speakers.size(); ++j) {
            double d2 = 0.0;
            for (int64_t k = 0; k < cfg.d_speaker; ++k) {
                const double d = speakers[i].gains[static_cast<size_t>(k)] - speakers[j].gains[static_cast<size_t>(k)];
                d2 += d * d;
            }
            if (d2 <= 0.0) throw ContractError("corpus: speakers " + std::to_string(i) + " and " +
                                               std::to_string(j) + " have identical timbre");
        }
    }
    return speakers;
}

}  // namespace

Corpus Corpus::generate(const CorpusConfig& config) {
    config.validate();
    Corpus corpus;
    corpus.config_ = config;
    corpus.assets_ = CorpusAssets(config.d_mel, config.d_speaker, config.d_content);
    corpus.speakers_ = make_speakers(config, corpus.assets_);
    if (config.train_speakers < 2) {
        corpus.warnings_.push_back("corpus has fewer than 2 train speakers; pretraining needs at least 2");
    }

    // Raw renders first; normalization constants come from the whole corpus.
    std::vector<std::vector<double>> raw;
    double sum = 0.0, sum2 = 0.0;
    int64_t count = 0;
    for (const auto& speaker : corpus.speakers_) {
        const auto color = corpus.assets_.coloration(speaker.gains);
        for (int64_t u = 0; u < config.utterances_per_speaker; ++u) {
            Rng rng(derive_seed(config.seed, kUtteranceStream + static_cast<uint64_t>(speaker.id) * 4096 +
                                                 static_cast<uint64_t>(u)));
            Utterance utt;
            utt.speaker_id = speaker.id;
            utt.tokens = corpus.assets_.sample_tokens(config.frames_per_utterance, rng);
            std::vector<double> mel(static_cast<size_t>(config.frames_per_utterance * config.d_mel));
            for (int64_t f = 0; f < config.frames_per_utterance; ++f) {
                const auto& pat = corpus.assets_.pattern(token_index(utt.tokens[static_cast<size_t>(f)]));
                for (int64_t m = 0; m < config.d_mel; ++m) {
                    const double v = pat[static_cast<size_t>(m)] * color[static_cast<size_t>(m)] +
                                     config.sigma_data * rng.normal();
                    mel[static_cast<size_t>(f * config.d_mel + m)] = v;
                    sum += v;
                    sum2 += v * v;
                    ++count;
                }
            }
            raw.push_back(std::move(mel));
            corpus.utterances_.push_back(std::move(utt));
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(sum2 / static_cast<double>(count) - mean * mean, 1e-12);
    corpus.norm_mean_ = mean;
    corpus.norm_std_ = std::sqrt(var);

    for (size_t i = 0; i < corpus.utterances_.size(); ++i) {
        Utterance& utt = corpus.utterances_[i];
        Tensor<float> mel = Tensor<float>::zeros({config.frames_per_utterance, config.d_mel});
        for (int64_t k = 0; k < mel.numel(); ++k) {
            mel[k] = static_cast<float>((raw[i][static_cast<size_t>(k)] - mean) / corpus.norm_std_);
        }
        utt.mel = std::move(mel);
        utt.content = corpus.assets_.content_for_tokens(utt.tokens);
    }

    // Fixture stats measured on the generated data.
    double sim_sum = 0.0, acc_sum = 0.0, margin_sum = 0.0;
    for (const auto& utt : corpus.utterances_) {
        const double self_sim = corpus.speaker_similarity(utt.mel, corpus.speaker(utt.speaker_id));
        double best_other = -2.0;
        for (const auto& other : corpus.speakers_) {
            if (other.id == utt.speaker_id) continue;
            best_other = std::max(best_other, corpus.speaker_similarity(utt.mel, other));
        }
        sim_sum += self_sim;
        margin_sum += self_sim - best_other;
        acc_sum += corpus.content_accuracy(utt.mel, utt.tokens);
    }
    const double n_utts = static_cast<double>(corpus.utterances_.size());
    corpus.stats_.gt_similarity = sim_sum / n_utts;
    corpus.stats_.gt_content_accuracy = acc_sum / n_utts;
    corpus.stats_.cross_speaker_margin = corpus.speakers_.size() > 1 ? margin_sum / n_utts : 0.0;
    return corpus;
}

const SyntheticSpeaker& Corpus::speaker(int64_t id) const {
    for (const auto& s : speakers_) {
        if (s.id == id) return s;
    }
    throw ConfigError("corpus: unknown speaker id " + std::to_string(id));
}

bool Corpus::is_heldout(int64_t speaker_id) const { return speaker_id >= config_.train_speakers; }

std::vector<const Utterance*> Corpus::utterances_of(int64_t speaker_id) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances_) {
        if (u.speaker_id == speaker_id) out.push_back(&u);
    }
    return out;
}

Tensor<float> Corpus::render_clean(const SyntheticSpeaker& s, const std::string& tokens) const {
    const int64_t n = static_cast<int64_t>(tokens.size());
    const auto color = assets_.coloration(s.gains);
    Tensor<float> mel = Tensor<float>::zeros({n, config_.d_mel});
    for (int64_t f = 0; f < n; ++f) {
        const auto& pat = assets_.pattern(token_index(tokens[static_cast<size_t>(f)]));
        for (int64_t m = 0; m < config_.d_mel; ++m) {
            mel[f * config_.d_mel + m] =
                static_cast<float>((pat[static_cast<size_t>(m)] * color[static_cast<size_t>(m)] - norm_mean_) / norm_std_);
        }
    }
    return mel;
}

Tensor<float> Corpus::prototype_mel(const SyntheticSpeaker& s, int64_t frames) const {
    const auto color = assets_.coloration(s.gains);
    Tensor<float> mel = Tensor<float>::zeros({frames, config_.d_mel});
    for (int64_t f = 0; f < frames; ++f) {
        for (int64_t m = 0; m < config_.d_mel; ++m) {
            mel[f * config_.d_mel + m] = static_cast<float>((color[static_cast<size_t>(m)] - norm_mean_) / norm_std_);
        }
    }
    return mel;
}

double oracle_similarity(const CorpusAssets& assets, double norm_mean, double norm_std,
                         const Tensor<float>& mel, const Tensor<float>& target_embedding) {
    const Tensor<float> e = oracle_embedding(assets, norm_mean, norm_std, mel);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < e.numel(); ++i) {
        dot += static_cast<double>(e[i]) * target_embedding[i];
        na += static_cast<double>(e[i]) * e[i];
        nb += static_cast<double>(target_embedding[i]) * target_embedding[i];
    }
    return dot / std::sqrt(std::max(na * nb, 1e-24));
}

Tensor<float> oracle_embedding(const CorpusAssets& assets, double norm_mean, double norm_std,
                               const Tensor<float>& mel) {
    if (mel.ndim() != 2 || mel.dim(0) < 1 || mel.dim(1) != assets.d_mel()) {
        throw DimError("speaker oracle: mel must be [frames," + std::to_string(assets.d_mel()) + "]");
    }
    bool all_zero = true;
    for (int64_t i = 0; i < mel.numel() && all_zero; ++i) all_zero = mel[i] == 0.f;
    if (all_zero) throw RangeError("speaker oracle: similarity undefined for an all-zero sample");

    const int64_t frames = mel.dim(0), d_mel = mel.dim(1);
    std::vector<double> avg(static_cast<size_t>(d_mel), 0.0);
    for (int64_t f = 0; f < frames; ++f) {
        for (int64_t m = 0; m < d_mel; ++m) {
            avg[static_cast<size_t>(m)] += static_cast<double>(mel[f * d_mel + m]) * norm_std + norm_mean;
        }
    }
    for (auto& v : avg) v /= static_cast<double>(frames);
    return assets.embedding_of_gains(assets.gains_from_spectrum(avg));
}

double oracle_content_accuracy(const CorpusAssets& assets, double norm_mean, double norm_std,
                               const Tensor<float>& mel, const std::string& tokens) {
    const int64_t frames = mel.dim(0), d_mel = mel.dim(1);
    if (static_cast<int64_t>(tokens.size()) != frames) {
        throw DimError("content oracle: " + std::to_string(frames) + " frames vs " +
                       std::to_string(tokens.size()) + " tokens");
    }
    // Speaker-normalize by the sample's own recovered coloration.
    std::vector<double> avg(static_cast<size_t>(d_mel), 0.0);
    for (int64_t f = 0; f < frames; ++f) {
        for (int64_t m = 0; m < d_mel; ++m) {
            avg[static_cast<size_t>(m)] += static_cast<double>(mel[f * d_mel + m]) * norm_std + norm_mean;
        }
    }
    for (auto& v : avg) v /= static_cast<double>(frames);
    const auto color = assets.coloration(assets.gains_from_spectrum(avg));

    int64_t correct = 0;
    std::vector<double> frame(static_cast<size_t>(d_mel));
    for (int64_t f = 0; f < frames; ++f) {
        for (int64_t m = 0; m < d_mel; ++m) {
            const double raw = static_cast<double>(mel[f * d_mel + m]) * norm_std + norm_mean;
            frame[static_cast<size_t>(m)] = raw / (std::fabs(color[static_cast<size_t>(m)]) > 1e-6
                                                       ? color[static_cast<size_t>(m)]
                                                       : 1e-6);
        }
        int64_t best = 0;
        double best_d2 = 1e300;
        for (int64_t v = 0; v < kVocabSize; ++v) {
            const auto& pat = assets.pattern(v);
            double d2 = 0.0;
            for (int64_t m = 0; m < d_mel; ++m) {
                const double d = frame[static_cast<size_t>(m)] - pat[static_cast<size_t>(m)];
                d2 += d * d;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = v;
            }
        }
        if (best == token_index(tokens[static_cast<size_t>(f)])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(frames);
}

double Corpus::speaker_similarity(const Tensor<float>& mel, const SyntheticSpeaker& target) const {
    return oracle_similarity(assets_, norm_mean_, norm_std_, mel, target.embedding);
}

Tensor<float> Corpus::extract_embedding(const Tensor<float>& mel) const {
    return oracle_embedding(assets_, norm_mean_, norm_std_, mel);
}

double Corpus::content_accuracy(const Tensor<float>& mel, const std::string& tokens) const {
    return oracle_content_accuracy(assets_, norm_mean_, norm_std_, mel, tokens);
}

namespace {

void fill_utterance_meta(const CorpusConfig& cfg, double norm_mean, double norm_std, const Utterance& utt,
                         Container& c) {
    c.meta()["kind"] = "utterance";
    c.meta()["format_version"] = std::to_string(kCorpusFormatVersion);
    c.meta()["speaker_id"] = std::to_string(utt.speaker_id);
    c.meta()["tokens"] = utt.tokens;
    c.meta()["norm_mean"] = format_double(norm_mean);
    c.meta()["norm_std"] = format_double(norm_std);
    c.meta()["d_mel"] = std::to_string(cfg.d_mel);
    c.meta()["d_speaker"] = std::to_string(cfg.d_speaker);
    c.meta()["d_content"] = std::to_string(cfg.d_content);
}

}  // namespace

std::string save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const CorpusConfig& cfg = corpus.config();

    std::ostringstream manifest;
    manifest << "#format_version\t" << kCorpusFormatVersion << "\n";
    manifest << "#seed\t" << cfg.seed << "\n";
    manifest << "#train_speakers\t" << cfg.train_speakers << "\n";
    manifest << "#heldout_speakers\t" << cfg.heldout_speakers << "\n";
    manifest << "#utterances_per_speaker\t" << cfg.utterances_per_speaker << "\n";
    manifest << "#frames_per_utterance\t" << cfg.frames_per_utterance << "\n";
    manifest << "#d_mel\t" << cfg.d_mel << "\n";
    manifest << "#d_speaker\t" << cfg.d_speaker << "\n";
    manifest << "#d_content\t" << cfg.d_content << "\n";
    manifest << "#sigma_data\t" << format_double(cfg.sigma_data) << "\n";
    manifest << "#norm_mean\t" << format_double(corpus.norm_mean()) << "\n";
    manifest << "#norm_std\t" << format_double(corpus.norm_std()) << "\n";
    manifest << "#gt_similarity\t" << format_double(corpus.stats().gt_similarity) << "\n";
    manifest << "#gt_content_accuracy\t" << format_double(corpus.stats().gt_content_accuracy) << "\n";
    manifest << "#cross_speaker_margin\t" << format_double(corpus.stats().cross_speaker_margin) << "\n";

    std::map<int64_t, int64_t> per_speaker_index;
    for (const auto& utt : corpus.utterances()) {
        const int64_t idx = per_speaker_index[utt.speaker_id]++;
        const std::string name = "utt_s" + std::to_string(utt.speaker_id) + "_" + std::to_string(idx) + ".vtck";
        Container c;
        c.add("mel", utt.mel);
        fill_utterance_meta(cfg, corpus.norm_mean(), corpus.norm_std(), utt, c);
        save_container((fs::path(dir) / name).string(), c);
        manifest << utt.speaker_id << "\t" << utt.tokens << "\t" << name << "\n";
    }

    const std::string manifest_path = (fs::path(dir) / "manifest.tsv").string();
    std::ofstream f(manifest_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("corpus: cannot write manifest '" + manifest_path + "'");
    f << manifest.str();
    return manifest_path;
}

Corpus load_corpus(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream f(manifest_path);
    if (!f) throw IoError("corpus: cannot open manifest '" + manifest_path + "'");

    std::map<std::string, std::string> meta;
    struct Record {
        int64_t speaker_id;
        std::string tokens, file;
    };
    std::vector<Record> records;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const size_t tab = line.find('\t');
            if (tab != std::string::npos) meta[line.substr(1, tab - 1)] = line.substr(tab + 1);
            continue;
        }
        std::istringstream ss(line);
        Record r;
        std::string id;
        if (!std::getline(ss, id, '\t') || !std::getline(ss, r.tokens, '\t') || !std::getline(ss, r.file)) {
            throw IoError("corpus: malformed manifest record: " + line);
        }
        r.speaker_id = std::stoll(id);
        records.push_back(std::move(r));
    }
    auto need = [&meta, &manifest_path](const std::string& key) {
        auto it = meta.find(key);
        if (it == meta.end()) throw IoError("corpus: manifest '" + manifest_path + "' missing #" + key);
        return it->second;
    };
    if (std::stoul(need("format_version")) != kCorpusFormatVersion) {
        throw IncompatError("corpus: manifest format version mismatch");
    }

    CorpusConfig cfg;
    cfg.seed = std::stoull(need("seed"));
    cfg.train_speakers = std::stoll(need("train_speakers"));
    cfg.heldout_speakers = std::stoll(need("heldout_speakers"));
    cfg.utterances_per_speaker = std::stoll(need("utterances_per_speaker"));
    cfg.frames_per_utterance = std::stoll(need("frames_per_utterance"));
    cfg.d_mel = std::stoll(need("d_mel"));
    cfg.d_speaker = std::stoll(need("d_speaker"));
    cfg.d_content = std::stoll(need("d_content"));
    cfg.sigma_data = std::stod(need("sigma_data"));
    cfg.validate();

    Corpus corpus;
    corpus.config_ = cfg;
    corpus.assets_ = CorpusAssets(cfg.d_mel, cfg.d_speaker, cfg.d_content);
    corpus.speakers_ = make_speakers(cfg, corpus.assets_);
    corpus.norm_mean_ = std::stod(need("norm_mean"));
    corpus.norm_std_ = std::stod(need("norm_std"));
    corpus.stats_.gt_similarity = std::stod(need("gt_similarity"));
    corpus.stats_.gt_content_accuracy = std::stod(need("gt_content_accuracy"));
    corpus.stats_.cross_speaker_margin = std::stod(need("cross_speaker_margin"));

    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& r : records) {
        Container c = load_container((base / r.file).string());
        Utterance utt;
        utt.speaker_id = r.speaker_id;
        utt.tokens = r.tokens;
        utt.mel = c.at("mel");
        if (utt.mel.ndim() != 2 || utt.mel.dim(1) != cfg.d_mel) {
            throw IncompatError("corpus: utterance file '" + r.file + "' has wrong mel shape");
        }
        utt.content = corpus.assets_.content_for_tokens(utt.tokens);
        corpus.utterances_.push_back(std::move(utt));
    }
    if (cfg.train_speakers < 2) {
        corpus.warnings_.push_back("corpus has fewer than 2 train speakers; pretraining needs at least 2");
    }
    return corpus;
}

void save_utterance(const Corpus& corpus, const Utterance& utt, const std::string& path) {
    Container c;
    c.add("mel", utt.mel);
    fill_utterance_meta(corpus.config(), corpus.norm_mean(), corpus.norm_std(), utt, c);
    save_container(path, c);
}

ReferenceUtterance load_reference(const std::string& path) {
    Container c = load_container(path);
    if (c.meta_or("kind", "") != "utterance") {
        throw IncompatError("reference: '" + path + "' is not an utterance file");
    }
    if (std::stoul(c.meta_or("format_version", "0")) != kCorpusFormatVersion) {
        throw IncompatError("reference: corpus format version mismatch in '" + path + "'");
    }
    ReferenceUtterance ref;
    ref.mel = c.at("mel");
    ref.tokens = c.meta_or("tokens", "");
    ref.speaker_id = std::stoll(c.meta_or("speaker_id", "-1"));
    ref.norm_mean = std::stod(c.meta_or("norm_mean", "0"));
    ref.norm_std = std::stod(c.meta_or("norm_std", "1"));
    const int64_t d_mel = std::stoll(c.meta_or("d_mel", "16"));
    const int64_t d_speaker = std::stoll(c.meta_or("d_speaker", "16"));
    const int64_t d_content = std::stoll(c.meta_or("d_content", "16"));
    CorpusAssets assets(d_mel, d_speaker, d_content);
    if (static_cast<int64_t>(ref.tokens.size()) != ref.mel.dim(0)) {
        throw IncompatError("reference: token string does not match mel frames in '" + path + "'");
    }
    ref.content = assets.content_for_tokens(ref.tokens);
    ref.speaker = oracle_embedding(assets, ref.norm_mean, ref.norm_std, ref.mel);
    return ref;
}

}  // namespace vtck
