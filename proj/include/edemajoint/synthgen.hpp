#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edemajoint/rng.hpp"
#include "edemajoint/tensor.hpp"
#include "edemajoint/textlab.hpp"

namespace edemajoint::synthgen {

struct Vocabulary {
    std::vector<std::string> words;  // id -> word; ids 0/1/2 are <bos>/<eos>/<unk>
    std::map<std::string, int> index;

    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    int id_of(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnk : it->second;
    }
    int size() const { return static_cast<int>(words.size()); }
};

struct PairedExample {
    std::string id;
    Tensor image;                  // [1,h,w], values in [0,1]
    std::vector<int> tokens;       // <bos> ... <eos>
    std::optional<int> label;      // present on labeled examples only
    int latent_level = 0;          // generator ground truth
};

struct GenConfig {
    int n_labeled = 400;
    int n_unlabeled = 2000;
    int image_size = 32;
    std::uint64_t seed = 1;
    // Default proportions follow the reported per-level report counts.
    std::array<double, 4> class_weights = {2883, 1511, 1709, 640};
    bool noise = true;
};

struct DatasetSplit {
    std::vector<PairedExample> labeled;
    std::vector<PairedExample> unlabeled;
    Vocabulary vocabulary;
    GenConfig config;
};

// Neutral report filler words, disjoint from every keyword phrase, negation
// trigger, and scope terminator.
const std::vector<std::string>& default_distractors();

// Vocabulary over specials + ruleset words + negation triggers + distractors.
Vocabulary build_vocabulary(const textlab::Ruleset& rules,
                            const std::vector<std::string>& distractors);

// Vertical gradient + 2*level blobs of amplitude 0.15*level + noise(0.02).
Tensor gen_image(int level, int height, int width, Rng& rng, bool noise = true);

// One keyword phrase of the level (negation-prefixed when the rule demands
// it) planted among 5-20 distractor tokens; <bos>/<eos> wrapped.
// Returns token ids plus the [begin,end) span of the planted phrase.
struct GeneratedReport {
    std::vector<int> tokens;
    int phrase_begin = 0;
    int phrase_end = 0;
};
GeneratedReport gen_report(int level, Rng& rng, const textlab::Ruleset& rules,
                           const Vocabulary& vocab,
                           const std::vector<std::string>& distractors);

DatasetSplit gen_dataset(const GenConfig& config);

// Words of a token sequence, specials dropped, space-joined.
std::string decode_tokens(const std::vector<int>& tokens, const Vocabulary& vocab);

// Deterministic disjoint partition of an example list.
std::pair<std::vector<PairedExample>, std::vector<PairedExample>> train_test_split(
    const std::vector<PairedExample>& examples, double test_fraction, Rng& rng);

// On-disk layout: manifest.json + images.f32 (row-major float32 LE, labeled
// then unlabeled) + records.jsonl. Documented in docs/formats.md.
void save_dataset(const std::string& dir, const DatasetSplit& split);
DatasetSplit load_dataset(const std::string& dir);

}  // namespace edemajoint::synthgen
