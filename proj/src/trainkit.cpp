#include "edemajoint/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

namespace edemajoint::trainkit {

using gradnet::GradientSet;
using gradnet::ParameterStore;
using gradnet::Tape;
using gradnet::Var;
using objective::Phase;
using synthgen::PairedExample;

void TrainConfig::validate() const {
    if (phase1_epochs < 0 || phase2_epochs < 0) throw ConfigError("train: negative epoch count");
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("train: warmup_fraction outside [0,1)");
    if (base_lr <= 0.0 || lr_multiplier <= 0.0) throw ConfigError("train: learning rate not positive");
    if (weight_decay < 0.0) throw ConfigError("train: negative weight_decay");
    if (unlabeled_margin <= 0.0) throw ConfigError("train: unlabeled_margin must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("train: val_fraction outside [0,1)");
}

namespace {

const char* kConfigKeysDoc =
    "phase1_epochs phase2_epochs batch_size base_lr lr_multiplier warmup_fraction weight_decay "
    "beta1 beta2 epsilon seed similarity mode unlabeled_margin use_unlabeled image_only "
    "val_fraction embed_dim image_size block_channels text_hidden text_blocks text_heads "
    "max_seq_len";

}  // namespace

TrainConfig train_config_from_json(const std::string& json_text) {
    nlohmann::json j =
        json_text.empty() ? nlohmann::json::object() : nlohmann::json::parse(json_text);
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    TrainConfig c;
    std::vector<std::string> errors;
    auto take = [&](const char* key, auto& dst) {
        using T = std::decay_t<decltype(dst)>;
        if (!j.contains(key)) return;
        try {
            dst = j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            errors.push_back(std::string("key '") + key + "' has the wrong type");
        }
        j.erase(key);
    };
    take("phase1_epochs", c.phase1_epochs);
    take("phase2_epochs", c.phase2_epochs);
    take("batch_size", c.batch_size);
    take("base_lr", c.base_lr);
    take("lr_multiplier", c.lr_multiplier);
    take("warmup_fraction", c.warmup_fraction);
    take("weight_decay", c.weight_decay);
    take("beta1", c.beta1);
    take("beta2", c.beta2);
    take("epsilon", c.epsilon);
    take("seed", c.seed);
    take("unlabeled_margin", c.unlabeled_margin);
    take("use_unlabeled", c.use_unlabeled);
    take("image_only", c.image_only);
    take("val_fraction", c.val_fraction);
    take("embed_dim", c.model.embed_dim);
    take("image_size", c.model.image_size);
    take("block_channels", c.model.block_channels);
    take("text_hidden", c.model.text_hidden);
    take("text_blocks", c.model.text_blocks);
    take("text_heads", c.model.text_heads);
    take("max_seq_len", c.model.max_seq_len);
    if (j.contains("similarity")) {
        try {
            c.sim_kind = objective::sim_kind_from_name(j.at("similarity").get<std::string>());
        } catch (const Error& e) {
            errors.push_back(e.what());
        } catch (const nlohmann::json::exception&) {
            errors.push_back("key 'similarity' has the wrong type");
        }
        j.erase("similarity");
    }
    if (j.contains("mode")) {
        try {
            const std::string m = j.at("mode").get<std::string>();
            if (m == "ranking")
                c.sim_mode = objective::SimMode::ranking;
            else if (m == "direct")
                c.sim_mode = objective::SimMode::direct;
            else
                errors.push_back("key 'mode' must be 'ranking' or 'direct'");
        } catch (const nlohmann::json::exception&) {
            errors.push_back("key 'mode' has the wrong type");
        }
        j.erase("mode");
    }
    for (auto it = j.begin(); it != j.end(); ++it)
        errors.push_back("unknown key '" + it.key() + "' (known keys: " + kConfigKeysDoc + ")");
    if (c.phase1_epochs < 0 || c.phase2_epochs < 0)
        errors.push_back("key 'phase1_epochs'/'phase2_epochs' must be non-negative");
    if (c.batch_size < 1) errors.push_back("key 'batch_size' must be at least 1");
    if (c.warmup_fraction < 0.0 || c.warmup_fraction >= 1.0)
        errors.push_back("key 'warmup_fraction' must lie in [0,1)");
    if (c.base_lr <= 0.0) errors.push_back("key 'base_lr' must be positive");
    if (c.lr_multiplier <= 0.0) errors.push_back("key 'lr_multiplier' must be positive");
    if (c.weight_decay < 0.0) errors.push_back("key 'weight_decay' must be non-negative");
    if (c.unlabeled_margin <= 0.0) errors.push_back("key 'unlabeled_margin' must be positive");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0)
        errors.push_back("key 'val_fraction' must lie in [0,1)");
    if (errors.empty()) {
        try {
            c.validate();
        } catch (const Error& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid train config:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::json j = {
        {"phase1_epochs", c.phase1_epochs},
        {"phase2_epochs", c.phase2_epochs},
        {"batch_size", c.batch_size},
        {"base_lr", c.base_lr},
        {"lr_multiplier", c.lr_multiplier},
        {"warmup_fraction", c.warmup_fraction},
        {"weight_decay", c.weight_decay},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"epsilon", c.epsilon},
        {"seed", c.seed},
        {"similarity", objective::sim_kind_name(c.sim_kind)},
        {"mode", c.sim_mode == objective::SimMode::ranking ? "ranking" : "direct"},
        {"unlabeled_margin", c.unlabeled_margin},
        {"use_unlabeled", c.use_unlabeled},
        {"image_only", c.image_only},
        {"val_fraction", c.val_fraction},
        {"embed_dim", c.model.embed_dim},
        {"image_size", c.model.image_size},
        {"block_channels", c.model.block_channels},
        {"text_hidden", c.model.text_hidden},
        {"text_blocks", c.model.text_blocks},
        {"text_heads", c.model.text_heads},
        {"max_seq_len", c.model.max_seq_len},
    };
    return j.dump(2);
}

void adamw_step(ParameterStore& params, const GradientSet& grads, OptimizerState& state, double lr,
                const TrainConfig& config) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (const auto& [name, g] : grads) {
        Tensor& theta = params.at(name);
        require_same_shape(theta, g, "adamw_step");
        for (double gv : g.vec())
            if (!std::isfinite(gv)) throw NumericError("adamw_step: non-finite gradient for " + name);
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments.emplace(name, OptimizerState::Moments{Tensor(theta.shape()),
                                                                     Tensor(theta.shape())}).first;
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + config.epsilon) +
                        lr * config.weight_decay * theta[i];
        }
    }
}

double lr_at_step(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps,
                  double base_lr) {
    if (step > total_steps) throw ParameterError("lr_at_step: step beyond total_steps");
    if (warmup_steps >= total_steps) throw ParameterError("lr_at_step: warmup >= total");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
}

namespace {

Var build_batch_loss(Tape& tape, const ParameterStore& params, const std::vector<BatchItem>& batch,
                     const TrainConfig& config, Phase phase) {
    if (batch.empty()) throw ParameterError("loss: empty batch");
    objective::ObjectiveConfig ocfg{config.sim_kind, config.sim_mode, config.unlabeled_margin,
                                    phase};
    std::vector<Var> terms;
    int labeled_members = 0;
    for (const BatchItem& item : batch) {
        const PairedExample& ex = *item.example;
        if (config.image_only) {
            if (!ex.label) throw ParameterError("image-only training requires labels");
            Var emb = encoders::build_image_encoder(tape, params, ex.image, config.model).embedding;
            Var probs = tape.softmax(encoders::build_classifier(tape, params, emb, "img"));
            terms.push_back(tape.neg_log_pick(probs, *ex.label));
            ++labeled_members;
            continue;
        }
        Var img = encoders::build_image_encoder(tape, params, ex.image, config.model).embedding;
        Var txt = encoders::build_text_encoder(tape, params, ex.tokens, config.model).embedding;
        if (config.sim_mode == objective::SimMode::direct) {
            terms.push_back(objective::ranking_term_node(tape, img, txt, nullptr, nullptr, 0.0,
                                                         config.sim_kind, config.sim_mode));
        } else {
            const PairedExample& imp = *item.impostor;
            Var img_s =
                encoders::build_image_encoder(tape, params, imp.image, config.model).embedding;
            Var txt_s =
                encoders::build_text_encoder(tape, params, imp.tokens, config.model).embedding;
            const double eta = objective::margin(ex.label, imp.label, ocfg);
            terms.push_back(objective::ranking_term_node(tape, img, txt, img_s, txt_s, eta,
                                                         config.sim_kind, config.sim_mode));
        }
        if (phase == Phase::joint && ex.label) {
            Var p_img = tape.softmax(encoders::build_classifier(tape, params, img, "img"));
            Var p_txt = tape.softmax(encoders::build_classifier(tape, params, txt, "txt"));
            terms.push_back(tape.neg_log_pick(p_img, *ex.label));
            terms.push_back(tape.neg_log_pick(p_txt, *ex.label));
            ++labeled_members;
        }
    }
    if (phase == Phase::joint && labeled_members == 0)
        throw ParameterError("joint phase: batch has no labeled members for the classification term");
    return tape.sum(terms);
}

}  // namespace

std::pair<double, GradientSet> loss_and_gradients(const ParameterStore& params,
                                                  const std::vector<BatchItem>& batch,
                                                  const TrainConfig& config, Phase phase) {
    Tape tape;
    Var loss = build_batch_loss(tape, params, batch, config, phase);
    tape.backward(loss);
    return {loss->value.item(), tape.gradients()};
}

double finite_diff_check(ParameterStore& params, const std::vector<BatchItem>& batch,
                         const TrainConfig& config, Phase phase, double epsilon,
                         std::uint64_t seed, int max_coords) {
    auto [loss, grads] = loss_and_gradients(params, batch, config, phase);
    (void)loss;
    // Parameters untouched by this phase have an exactly-zero gradient.
    GradientSet full = std::move(grads);
    for (const auto& e : params.entries())
        if (!full.count(e.name)) full.emplace(e.name, Tensor(e.value.shape()));
    auto forward = [&](const ParameterStore& p) {
        Tape tape;
        return build_batch_loss(tape, p, batch, config, phase)->value.item();
    };
    return gradnet::finite_diff_check(params, forward, full, epsilon, seed, max_coords);
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.uniform_int(n - i);
        std::swap(order[i], order[j]);
    }
    return order;
}

}  // namespace

TrainResult train(const TrainConfig& config, const synthgen::DatasetSplit& dataset) {
    config.validate();
    if (dataset.labeled.empty()) throw ConfigError("train: dataset has no labeled examples");

    // Deterministic validation carve-out from the labeled pool.
    Rng split_rng = Rng::derive(config.seed, 0xA11CE);
    auto [train_labeled, val] =
        synthgen::train_test_split(dataset.labeled, config.val_fraction, split_rng);
    if (static_cast<int>(train_labeled.size()) < config.batch_size)
        throw ConfigError("train: fewer labeled training pairs than one mini-batch");

    std::vector<const PairedExample*> phase1_pool;
    for (const auto& ex : train_labeled) phase1_pool.push_back(&ex);
    if (config.use_unlabeled)
        for (const auto& ex : dataset.unlabeled) phase1_pool.push_back(&ex);
    std::vector<const PairedExample*> phase2_pool;
    for (const auto& ex : train_labeled) phase2_pool.push_back(&ex);

    encoders::ModelConfig model = config.model;
    model.vocab_size = dataset.vocabulary.size();
    TrainConfig cfg = config;
    cfg.model = model;

    TrainResult result;
    result.final.params = encoders::init_params(model, config.seed);
    result.final.config = cfg;
    result.final.vocabulary = dataset.vocabulary.words;

    auto steps_per_epoch = [&](std::size_t pool, int bs) {
        return (pool + static_cast<std::size_t>(bs) - 1) / static_cast<std::size_t>(bs);
    };
    const bool run_phase1 = !config.image_only && config.phase1_epochs > 0;
    const std::uint64_t p1_steps =
        run_phase1 ? config.phase1_epochs * steps_per_epoch(phase1_pool.size(), config.batch_size)
                   : 0;
    const std::uint64_t p2_steps =
        config.phase2_epochs * steps_per_epoch(phase2_pool.size(), config.batch_size);
    const std::uint64_t total_steps = p1_steps + p2_steps;
    const std::uint64_t warmup_steps =
        static_cast<std::uint64_t>(config.warmup_fraction * static_cast<double>(total_steps));

    Rng order_rng = Rng::derive(config.seed, 0x0BD3);
    Rng impostor_rng = Rng::derive(config.seed, 0x1437);

    std::uint64_t step = 0;
    int global_epoch = 0;
    double best_auc = -1.0;
    bool have_best = false;

    auto run_phase = [&](int phase_id, int epochs, const std::vector<const PairedExample*>& pool,
                         Phase phase) {
        if (epochs <= 0 || pool.empty()) return;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const std::vector<int> impostors =
                objective::sample_impostor_map(static_cast<int>(pool.size()), impostor_rng);
            const std::vector<std::size_t> order = shuffled_indices(pool.size(), order_rng);
            double loss_sum = 0.0;
            std::size_t n_batches = 0;
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                std::vector<BatchItem> batch;
                for (std::size_t i = start;
                     i < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                     ++i) {
                    const std::size_t j = order[i];
                    batch.push_back(
                        {pool[j], pool[static_cast<std::size_t>(impostors[j])]});
                }
                auto [loss, grads] =
                    loss_and_gradients(result.final.params, batch, cfg, phase);
                const double lr = lr_at_step(step, warmup_steps, total_steps, cfg.lr());
                adamw_step(result.final.params, grads, result.final.opt, lr, cfg);
                ++step;
                loss_sum += loss;
                ++n_batches;
            }
            EpochLog log;
            log.epoch = global_epoch++;
            log.phase = phase_id;
            log.mean_loss = loss_sum / static_cast<double>(n_batches);
            if (phase_id == 2 && !val.empty()) {
                log.validation = evalkit::evaluate(result.final.params, model, val);
                const auto mean = log.validation->mean_auc();
                if (mean && *mean > best_auc) {
                    best_auc = *mean;
                    result.best = result.final;
                    result.best.step = step;
                    have_best = true;
                }
            }
            result.log.push_back(std::move(log));
        }
    };

    if (run_phase1) run_phase(1, config.phase1_epochs, phase1_pool, Phase::embedding_only);
    run_phase(2, config.phase2_epochs, phase2_pool,
              config.image_only ? Phase::joint /* CE-only terms */ : Phase::joint);

    result.final.step = step;
    if (!have_best) result.best = result.final;
    return result;
}

std::vector<double> infer_image(const Checkpoint& ckpt, const Tensor& image) {
    return encoders::classify(encoders::encode_image(image, ckpt.params, ckpt.config.model),
                              ckpt.params, ckpt.config.model, "img");
}

namespace {

constexpr char kMagic[8] = {'E', 'J', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_str(std::string& buf, const std::string& s) {
    put_u64(buf, s.size());
    buf += s;
}
void put_tensor(std::string& buf, const Tensor& t) {
    put_u32(buf, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    const std::size_t bytes = t.numel() * sizeof(double);
    const std::size_t off = buf.size();
    buf.resize(off + bytes);
    std::memcpy(buf.data() + off, t.data(), bytes);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated payload");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        const std::uint32_t nd = u32();
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(static_cast<int>(u32()));
        Tensor t(shape);
        const std::size_t bytes = t.numel() * sizeof(double);
        need(bytes);
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        return t;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string payload;
    put_str(payload, train_config_to_json(ckpt.config));
    put_u64(payload, ckpt.vocabulary.size());
    for (const auto& w : ckpt.vocabulary) put_str(payload, w);
    put_u64(payload, ckpt.params.size());
    for (const auto& e : ckpt.params.entries()) {
        put_str(payload, e.name);
        put_str(payload, gradnet::submodel_name(e.owner));
        put_tensor(payload, e.value);
        auto it = ckpt.opt.moments.find(e.name);
        const bool has_moments = it != ckpt.opt.moments.end();
        payload.push_back(has_moments ? 1 : 0);
        if (has_moments) {
            put_tensor(payload, it->second.m);
            put_tensor(payload, it->second.v);
        }
    }
    put_u64(payload, ckpt.opt.step);
    put_u64(payload, ckpt.step);

    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u64(out, payload.size());
    out += payload;
    put_u32(out, crc);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string raw = ss.str();
    if (raw.size() < sizeof(kMagic) + 12 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("checkpoint: bad magic or unsupported version");
    Reader head{raw, sizeof(kMagic)};
    const std::uint64_t payload_size = head.u64();
    if (raw.size() != sizeof(kMagic) + 8 + payload_size + 4)
        throw IntegrityError("checkpoint: size mismatch (truncated or corrupt)");
    const std::string payload = raw.substr(sizeof(kMagic) + 8, payload_size);
    Reader tail{raw, sizeof(kMagic) + 8 + payload_size};
    const std::uint32_t stored_crc = tail.u32();
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    if (crc != stored_crc) throw IntegrityError("checkpoint: checksum mismatch");

    Reader r{payload};
    Checkpoint ckpt;
    ckpt.config = train_config_from_json(r.str());
    const std::uint64_t nvocab = r.u64();
    for (std::uint64_t i = 0; i < nvocab; ++i) ckpt.vocabulary.push_back(r.str());
    ckpt.config.model.vocab_size = static_cast<int>(nvocab);
    const std::uint64_t nparams = r.u64();
    for (std::uint64_t i = 0; i < nparams; ++i) {
        const std::string name = r.str();
        const gradnet::Submodel owner = gradnet::submodel_from_name(r.str());
        Tensor value = r.tensor();
        Tensor& slot = ckpt.params.add(name, owner, value.shape());
        slot = std::move(value);
        r.need(1);
        const bool has_moments = payload[r.pos++] != 0;
        if (has_moments) {
            Tensor m = r.tensor();
            Tensor v = r.tensor();
            ckpt.opt.moments.emplace(name, OptimizerState::Moments{std::move(m), std::move(v)});
        }
    }
    ckpt.opt.step = r.u64();
    ckpt.step = r.u64();
    return ckpt;
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,phase,loss,auc_0v123,auc_01v23,auc_012v3,macro_f1\n";
    os.precision(17);
    for (const auto& e : log) {
        os << e.epoch << "," << e.phase << "," << e.mean_loss;
        if (e.validation) {
            for (int i = 0; i < 3; ++i) {
                os << ",";
                if (e.validation->auc[static_cast<std::size_t>(i)])
                    os << *e.validation->auc[static_cast<std::size_t>(i)];
            }
            os << "," << e.validation->macro_f1;
        } else {
            os << ",,,,";
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace edemajoint::trainkit
