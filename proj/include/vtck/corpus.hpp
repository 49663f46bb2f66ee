#pragma once

// Deterministic synthetic multi-speaker corpus plus the evaluation oracles.
//
// Generative model, per frame f of an utterance by speaker s:
//   mel_raw[f] = pattern(token[f]) * coloration(s) + sigma_data * noise
// where coloration(s) = FilterBank * gains(s), gains are per-speaker positive
// values, and pattern(v) are fixed per-token spectral templates with mean 1
// across the vocabulary. The whole corpus is z-scored with scalar mean/std.
//
// The speaker oracle inverts this model: the long-term average spectrum of a
// sample is pushed through the filter-bank inverse to recover gains, mapped
// to the unit-norm log-gain embedding, and compared by cosine. The content
// oracle classifies each frame against the token templates after dividing
// out the sample's own estimated coloration, so it is speaker-normalized by
// construction.
//
// Fixed assets (templates, filter bank, content projection) depend only on
// dims and the corpus format version, never on the corpus seed; stored
// fixtures stay valid as long as the version constant does not change.

#include <cstdint>
#include <string>
#include <vector>

#include "vtck/container.hpp"
#include "vtck/rng.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

inline constexpr int64_t kVocabSize = 8;
inline constexpr uint32_t kCorpusFormatVersion = 1;

struct CorpusConfig {
    int64_t train_speakers = 8;
    int64_t heldout_speakers = 2;
    int64_t utterances_per_speaker = 20;
    int64_t frames_per_utterance = 64;
    int64_t d_mel = 16;
    int64_t d_speaker = 16;
    int64_t d_content = 16;
    uint64_t seed = 1234;
    double sigma_data = 0.05;

    void validate() const;
};

struct SyntheticSpeaker {
    int64_t id = 0;
    std::vector<double> gains;   // d_speaker positive filter gains
    Tensor<float> embedding;     // unit-norm normalized log-gains (e_S)
};

struct Utterance {
    int64_t speaker_id = 0;
    std::string tokens;      // one char per frame, '0'..'7'
    Tensor<float> mel;       // [frames, d_mel], corpus-normalized
    Tensor<float> content;   // [frames, d_content]
};

// Seed-independent assets shared by every corpus of the same dims/version.
// Holding one of these plus the normalization constants is enough to run the
// oracles on any sample, which keeps single reference files self-contained.
class CorpusAssets {
public:
    CorpusAssets() = default;
    CorpusAssets(int64_t d_mel, int64_t d_speaker, int64_t d_content);

    int64_t d_mel() const { return d_mel_; }
    int64_t d_speaker() const { return d_speaker_; }
    int64_t d_content() const { return d_content_; }

    // coloration = FilterBank * gains, the speaker's spectral envelope.
    std::vector<double> coloration(const std::vector<double>& gains) const;

    // Least-structure inverse: gains recovered from an average spectrum.
    std::vector<double> gains_from_spectrum(const std::vector<double>& avg) const;

    Tensor<float> embedding_of_gains(const std::vector<double>& gains) const;

    Tensor<float> content_for_tokens(const std::string& tokens) const;

    const std::vector<double>& pattern(int64_t token) const;

    std::string sample_tokens(int64_t frames, Rng& rng) const;

private:
    int64_t d_mel_ = 0, d_speaker_ = 0, d_content_ = 0;
    std::vector<double> filter_;                 // [d_mel, d_speaker]
    std::vector<double> filter_inv_;             // [d_speaker, d_mel]
    std::vector<std::vector<double>> patterns_;  // vocab x d_mel
    std::vector<float> content_proj_;            // [vocab, d_content]
};

// Measured-at-generation reference stats, stored with the corpus so later
// runs assert against the recorded fixture instead of re-deriving it.
struct CorpusStats {
    double gt_similarity = 0.0;        // mean self-similarity of ground truth
    double gt_content_accuracy = 0.0;  // mean content accuracy of ground truth
    double cross_speaker_margin = 0.0; // mean (self sim - best other sim)
};

class Corpus {
public:
    static Corpus generate(const CorpusConfig& config);

    const CorpusConfig& config() const { return config_; }
    const CorpusAssets& assets() const { return assets_; }
    const std::vector<SyntheticSpeaker>& speakers() const { return speakers_; }
    const std::vector<Utterance>& utterances() const { return utterances_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const CorpusStats& stats() const { return stats_; }
    double norm_mean() const { return norm_mean_; }
    double norm_std() const { return norm_std_; }

    const SyntheticSpeaker& speaker(int64_t id) const;
    bool is_heldout(int64_t speaker_id) const;
    std::vector<const Utterance*> utterances_of(int64_t speaker_id) const;

    Tensor<float> content_for_tokens(const std::string& tokens) const {
        return assets_.content_for_tokens(tokens);
    }

    // Clean render of a token string by a speaker (sigma = 0), normalized.
    Tensor<float> render_clean(const SyntheticSpeaker& s, const std::string& tokens) const;

    // Mel whose every frame equals the speaker's coloration spectrum.
    Tensor<float> prototype_mel(const SyntheticSpeaker& s, int64_t frames) const;

    // --- oracles ---
    // Cosine in [-1,1] between the sample's recovered speaker embedding and
    // the target's. Errors on an all-zero sample.
    double speaker_similarity(const Tensor<float>& mel, const SyntheticSpeaker& target) const;

    // Speaker embedding recovered from a sample (the stand-in for running a
    // speaker encoder on reference audio).
    Tensor<float> extract_embedding(const Tensor<float>& mel) const;

    // Fraction of frames whose nearest token template matches the truth.
    double content_accuracy(const Tensor<float>& mel, const std::string& tokens) const;

    std::string sample_tokens(int64_t frames, Rng& rng) const {
        return assets_.sample_tokens(frames, rng);
    }

private:
    friend Corpus load_corpus(const std::string& manifest_path);

    CorpusConfig config_;
    CorpusAssets assets_;
    std::vector<SyntheticSpeaker> speakers_;
    std::vector<Utterance> utterances_;
    std::vector<std::string> warnings_;
    CorpusStats stats_;
    double norm_mean_ = 0.0;
    double norm_std_ = 1.0;
};

// Oracle helpers shared by Corpus and standalone reference files.
double oracle_similarity(const CorpusAssets& assets, double norm_mean, double norm_std,
                         const Tensor<float>& mel, const Tensor<float>& target_embedding);
Tensor<float> oracle_embedding(const CorpusAssets& assets, double norm_mean, double norm_std,
                               const Tensor<float>& mel);
double oracle_content_accuracy(const CorpusAssets& assets, double norm_mean, double norm_std,
                               const Tensor<float>& mel, const std::string& tokens);

// One container file per utterance plus a UTF-8 manifest with one record per
// utterance (speaker id, token string, file path) and '#'-prefixed corpus
// metadata lines. Returns the manifest path.
std::string save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& manifest_path);

// Standalone reference utterance file (self-contained for adaptation).
void save_utterance(const Corpus& corpus, const Utterance& utt, const std::string& path);

// A reference utterance as consumed by adaptation, with the speaker
// embedding recovered from the mel by the oracle.
struct ReferenceUtterance {
    Tensor<float> mel;
    Tensor<float> content;
    Tensor<float> speaker;  // embedding extracted from the mel
    std::string tokens;
    int64_t speaker_id = -1;
    double norm_mean = 0.0;
    double norm_std = 1.0;
};

ReferenceUtterance load_reference(const std::string& path);

}  // namespace vtck
