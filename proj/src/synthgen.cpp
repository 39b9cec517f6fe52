#include "edemajoint/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace edemajoint::synthgen {

namespace fs = std::filesystem;

const std::vector<std::string>& default_distractors() {
    static const std::vector<std::string> words = {
        "heart",      "mediastinum", "contour",    "unremarkable", "stable",
        "size",       "silhouette",  "bony",       "structures",   "intact",
        "lungs",      "volumes",     "adequate",   "device",       "position",
        "satisfactory", "midline",   "compared",   "prior",        "study",
        "exam",       "technique",   "portable",   "upright",      "view",
        "patient",    "rotation",    "slightly",   "limited",      "visualized",
        "osseous",    "degenerative", "changes",   "mild",         "chronic",
        "aorta",      "tortuous",    "calcified",  "carina",       "trachea"};
    return words;
}

Vocabulary build_vocabulary(const textlab::Ruleset& rules,
                            const std::vector<std::string>& distractors) {
    std::set<std::string> words;
    for (const auto& r : rules)
        for (const auto& w : r.phrase) words.insert(w);
    for (const char* t : {"no", "without", "free", "of", "absence", "resolved", "negative",
                          "for", "clear", "evidence"})
        words.insert(t);
    for (const auto& w : distractors) words.insert(w);

    Vocabulary v;
    v.words = {"<bos>", "<eos>", "<unk>"};
    for (const auto& w : words) v.words.push_back(w);
    for (int i = 0; i < static_cast<int>(v.words.size()); ++i) v.index[v.words[static_cast<std::size_t>(i)]] = i;
    return v;
}

Tensor gen_image(int level, int height, int width, Rng& rng, bool noise) {
    if (level < 0 || level > 3) throw ConfigError("gen_image: level outside 0..3");
    if (height < 16 || width < 16) throw ConfigError("gen_image: size below 16x16 minimum");
    Tensor img({1, height, width});
    for (int r = 0; r < height; ++r) {
        const double g = 0.2 + 0.4 * static_cast<double>(r) / (height - 1);
        for (int c = 0; c < width; ++c) img[static_cast<std::size_t>(r) * width + c] = g;
    }
    const int n_blobs = 2 * level;
    const double amp = 0.15 * level;
    const double sigma = std::min(height, width) / 8.0;
    for (int b = 0; b < n_blobs; ++b) {
        const double cy = rng.uniform() * (height - 1);
        const double cx = rng.uniform() * (width - 1);
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                const double dy = r - cy, dx = c - cx;
                img[static_cast<std::size_t>(r) * width + c] +=
                    amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            }
        }
    }
    if (noise)
        for (double& v : img.vec()) v += 0.02 * rng.normal();
    for (double& v : img.vec()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

GeneratedReport gen_report(int level, Rng& rng, const textlab::Ruleset& rules,
                           const Vocabulary& vocab,
                           const std::vector<std::string>& distractors) {
    std::vector<const textlab::KeywordRule*> pool;
    for (const auto& r : rules)
        if (r.level == level) pool.push_back(&r);
    if (pool.empty()) throw ConfigError("gen_report: ruleset has no phrases for level " +
                                        std::to_string(level));
    const textlab::KeywordRule& rule = *pool[rng.uniform_int(pool.size())];

    const int n_distract = 5 + static_cast<int>(rng.uniform_int(16));  // 5..20
    const int insert_at = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_distract) + 1));

    GeneratedReport rep;
    rep.tokens.push_back(Vocabulary::kBos);
    for (int i = 0; i < n_distract; ++i) {
        if (i == insert_at) {
            rep.phrase_begin = static_cast<int>(rep.tokens.size());
            if (rule.requires_negation) rep.tokens.push_back(vocab.id_of("no"));
            for (const auto& w : rule.phrase) rep.tokens.push_back(vocab.id_of(w));
            rep.phrase_end = static_cast<int>(rep.tokens.size());
        }
        rep.tokens.push_back(vocab.id_of(distractors[rng.uniform_int(distractors.size())]));
    }
    if (insert_at == n_distract) {
        rep.phrase_begin = static_cast<int>(rep.tokens.size());
        if (rule.requires_negation) rep.tokens.push_back(vocab.id_of("no"));
        for (const auto& w : rule.phrase) rep.tokens.push_back(vocab.id_of(w));
        rep.phrase_end = static_cast<int>(rep.tokens.size());
    }
    rep.tokens.push_back(Vocabulary::kEos);
    return rep;
}

DatasetSplit gen_dataset(const GenConfig& config) {
    if (config.n_labeled < 4) throw ConfigError("gen_dataset: n_labeled must be at least 4");
    if (config.n_unlabeled < 0) throw ConfigError("gen_dataset: negative n_unlabeled");
    double wsum = 0.0;
    for (double w : config.class_weights) {
        if (w < 0.0) throw ConfigError("gen_dataset: negative class weight");
        wsum += w;
    }
    if (wsum <= 0.0) throw ConfigError("gen_dataset: all class weights zero");

    DatasetSplit split;
    split.config = config;
    split.vocabulary = build_vocabulary(textlab::default_ruleset(), default_distractors());

    auto draw_level = [&](Rng& rng) {
        const double u = rng.uniform() * wsum;
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
            acc += config.class_weights[static_cast<std::size_t>(k)];
            if (u < acc) return k;
        }
        return 3;
    };

    const int total = config.n_labeled + config.n_unlabeled;
    auto make_example = [&](int index, int forced_level) {
        Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(index));
        PairedExample ex;
        ex.id = "ex" + std::to_string(index);
        ex.latent_level = forced_level >= 0 ? forced_level : draw_level(rng);
        ex.image = gen_image(ex.latent_level, config.image_size, config.image_size, rng,
                             config.noise);
        ex.tokens = gen_report(ex.latent_level, rng, textlab::default_ruleset(),
                               split.vocabulary, default_distractors())
                        .tokens;
        return ex;
    };

    for (int i = 0; i < total; ++i) {
        PairedExample ex = make_example(i, -1);
        if (i < config.n_labeled) {
            ex.label = ex.latent_level;
            split.labeled.push_back(std::move(ex));
        } else {
            split.unlabeled.push_back(std::move(ex));
        }
    }

    // Every positive-weight class must appear among the labeled examples;
    // regenerate the leading slots with forced levels if sampling missed one.
    std::array<bool, 4> present = {false, false, false, false};
    for (const auto& ex : split.labeled) present[static_cast<std::size_t>(ex.latent_level)] = true;
    int fix_slot = 0;
    for (int k = 0; k < 4; ++k) {
        if (config.class_weights[static_cast<std::size_t>(k)] <= 0.0 ||
            present[static_cast<std::size_t>(k)])
            continue;
        if (fix_slot >= config.n_labeled)
            throw ConfigError("gen_dataset: cannot place one example of every class");
        PairedExample ex = make_example(fix_slot, k);
        ex.label = ex.latent_level;
        split.labeled[static_cast<std::size_t>(fix_slot)] = std::move(ex);
        ++fix_slot;
    }
    return split;
}

std::string decode_tokens(const std::vector<int>& tokens, const Vocabulary& vocab) {
    std::string out;
    for (int id : tokens) {
        if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kUnk) continue;
        if (!out.empty()) out += " ";
        out += vocab.words[static_cast<std::size_t>(id)];
    }
    return out;
}

std::pair<std::vector<PairedExample>, std::vector<PairedExample>> train_test_split(
    const std::vector<PairedExample>& examples, double test_fraction, Rng& rng) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw ConfigError("train_test_split: fraction outside [0,1)");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t j = i + rng.uniform_int(order.size() - i);
        std::swap(order[i], order[j]);
    }
    const std::size_t n_test = static_cast<std::size_t>(test_fraction * examples.size());
    std::pair<std::vector<PairedExample>, std::vector<PairedExample>> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_test ? out.second : out.first).push_back(examples[order[i]]);
    }
    return out;
}

namespace {

void write_images_f32(const std::string& path, const DatasetSplit& split) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    auto dump = [&](const std::vector<PairedExample>& v) {
        for (const auto& ex : v) {
            for (double d : ex.image.vec()) {
                const float f = static_cast<float>(d);
                out.write(reinterpret_cast<const char*>(&f), sizeof(float));
            }
        }
    };
    dump(split.labeled);
    dump(split.unlabeled);
}

nlohmann::json example_record(const PairedExample& ex) {
    nlohmann::json j = {{"id", ex.id}, {"tokens", ex.tokens}, {"latent", ex.latent_level}};
    if (ex.label)
        j["label"] = *ex.label;
    else
        j["label"] = nullptr;
    return j;
}

}  // namespace

void save_dataset(const std::string& dir, const DatasetSplit& split) {
    fs::create_directories(dir);
    nlohmann::json manifest = {
        {"format", "edemajoint-dataset-v1"},
        {"n_labeled", split.config.n_labeled},
        {"n_unlabeled", split.config.n_unlabeled},
        {"image_size", split.config.image_size},
        {"seed", split.config.seed},
        {"class_weights", split.config.class_weights},
        {"noise", split.config.noise},
        {"vocabulary", split.vocabulary.words},
    };
    std::ofstream(dir + "/manifest.json") << manifest.dump(2) << "\n";
    write_images_f32(dir + "/images.f32", split);
    std::ofstream rec(dir + "/records.jsonl");
    for (const auto& ex : split.labeled) rec << example_record(ex).dump() << "\n";
    for (const auto& ex : split.unlabeled) rec << example_record(ex).dump() << "\n";
}

DatasetSplit load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw ConfigError("cannot open " + dir + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != "edemajoint-dataset-v1")
        throw IntegrityError("unrecognized dataset format in " + dir);

    DatasetSplit split;
    split.config.n_labeled = manifest.at("n_labeled").get<int>();
    split.config.n_unlabeled = manifest.at("n_unlabeled").get<int>();
    split.config.image_size = manifest.at("image_size").get<int>();
    split.config.seed = manifest.at("seed").get<std::uint64_t>();
    split.config.class_weights = manifest.at("class_weights").get<std::array<double, 4>>();
    split.config.noise = manifest.value("noise", true);
    split.vocabulary.words = manifest.at("vocabulary").get<std::vector<std::string>>();
    for (int i = 0; i < split.vocabulary.size(); ++i)
        split.vocabulary.index[split.vocabulary.words[static_cast<std::size_t>(i)]] = i;

    const int s = split.config.image_size;
    const std::size_t pixels = static_cast<std::size_t>(s) * s;
    std::ifstream img(dir + "/images.f32", std::ios::binary);
    std::ifstream rec(dir + "/records.jsonl");
    if (!img || !rec) throw ConfigError("missing dataset files in " + dir);

    const int total = split.config.n_labeled + split.config.n_unlabeled;
    std::string line;
    for (int i = 0; i < total; ++i) {
        if (!std::getline(rec, line)) throw IntegrityError("records.jsonl truncated");
        nlohmann::json j = nlohmann::json::parse(line);
        PairedExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.tokens = j.at("tokens").get<std::vector<int>>();
        ex.latent_level = j.at("latent").get<int>();
        if (!j.at("label").is_null()) ex.label = j.at("label").get<int>();
        ex.image = Tensor({1, s, s});
        std::vector<float> buf(pixels);
        img.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(pixels * sizeof(float)));
        if (!img) throw IntegrityError("images.f32 truncated");
        for (std::size_t p = 0; p < pixels; ++p) ex.image[p] = buf[p];
        (i < split.config.n_labeled ? split.labeled : split.unlabeled).push_back(std::move(ex));
    }
    return split;
}

}  // namespace edemajoint::synthgen
