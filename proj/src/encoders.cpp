#include "edemajoint/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace edemajoint::encoders {

using gradnet::ParameterStore;
using gradnet::Submodel;
using gradnet::Tape;
using gradnet::Var;

void ModelConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("model: embed_dim must be positive");
    if (image_size < 8) throw ConfigError("model: image_size below minimum 8");
    if (block_channels.empty()) throw ConfigError("model: need at least one residual block");
    if (text_hidden < 1 || text_blocks < 1 || text_heads < 1)
        throw ConfigError("model: text encoder sizes must be positive");
    if (text_hidden % text_heads)
        throw ConfigError("model: text_hidden must be divisible by text_heads");
    if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be positive");
    if (vocab_size < 3) throw ConfigError("model: vocabulary not set");
    int size = image_size;
    for (std::size_t k = 1; k < block_channels.size(); ++k) size /= 2;
    if (size < 2) throw ConfigError("model: too many downsampling stages for image_size");
}

namespace {

void init_uniform(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.vec()) v = rng.uniform(-bound, bound);
}

}  // namespace

ParameterStore init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterStore store;
    Rng rng(seed);

    auto conv = [&](const std::string& name, Submodel owner, int cout, int cin) {
        init_uniform(store.add(name + ".w", owner, {cout, cin, 3, 3}), cin * 9, rng);
        store.add(name + ".b", owner, {cout});
    };

    const auto& ch = config.block_channels;
    conv("img.stem", Submodel::image_encoder, ch[0], 1);
    for (std::size_t k = 0; k < ch.size(); ++k) {
        const std::string blk = "img.blk" + std::to_string(k);
        if (k > 0) conv(blk + ".down", Submodel::image_encoder, ch[k], ch[k - 1]);
        conv(blk + ".conv1", Submodel::image_encoder, ch[k], ch[k]);
        conv(blk + ".conv2", Submodel::image_encoder, ch[k], ch[k]);
    }
    init_uniform(store.add("img.head.w", Submodel::image_encoder, {config.embed_dim, ch.back()}),
                 ch.back(), rng);
    store.add("img.head.b", Submodel::image_encoder, {config.embed_dim});

    const int h = config.text_hidden;
    const int dk = h / config.text_heads;
    init_uniform(store.add("txt.embed", Submodel::text_encoder, {config.vocab_size, h}), h, rng);
    init_uniform(store.add("txt.pos", Submodel::text_encoder, {config.max_seq_len, h}), h, rng);
    for (int l = 0; l < config.text_blocks; ++l) {
        const std::string blk = "txt.blk" + std::to_string(l);
        for (int hd = 0; hd < config.text_heads; ++hd) {
            const std::string head = blk + ".head" + std::to_string(hd);
            init_uniform(store.add(head + ".wq", Submodel::text_encoder, {h, dk}), h, rng);
            init_uniform(store.add(head + ".wk", Submodel::text_encoder, {h, dk}), h, rng);
            init_uniform(store.add(head + ".wv", Submodel::text_encoder, {h, dk}), h, rng);
        }
        init_uniform(store.add(blk + ".wo", Submodel::text_encoder, {h, h}), h, rng);
        store.add(blk + ".bo", Submodel::text_encoder, {h});
        store.add(blk + ".ln1.g", Submodel::text_encoder, {h}).fill(1.0);
        store.add(blk + ".ln1.b", Submodel::text_encoder, {h});
        init_uniform(store.add(blk + ".ff1.w", Submodel::text_encoder, {h, h}), h, rng);
        store.add(blk + ".ff1.b", Submodel::text_encoder, {h});
        init_uniform(store.add(blk + ".ff2.w", Submodel::text_encoder, {h, h}), h, rng);
        store.add(blk + ".ff2.b", Submodel::text_encoder, {h});
        store.add(blk + ".ln2.g", Submodel::text_encoder, {h}).fill(1.0);
        store.add(blk + ".ln2.b", Submodel::text_encoder, {h});
    }
    init_uniform(store.add("txt.head.w", Submodel::text_encoder, {config.embed_dim, h}), h, rng);
    store.add("txt.head.b", Submodel::text_encoder, {config.embed_dim});

    init_uniform(store.add("cls_img.w", Submodel::image_classifier, {4, config.embed_dim}),
                 config.embed_dim, rng);
    store.add("cls_img.b", Submodel::image_classifier, {4});
    init_uniform(store.add("cls_txt.w", Submodel::text_classifier, {4, config.embed_dim}),
                 config.embed_dim, rng);
    store.add("cls_txt.b", Submodel::text_classifier, {4});
    return store;
}

ImageForward build_image_encoder(Tape& tape, const ParameterStore& params, const Tensor& image,
                                 const ModelConfig& config) {
    if (image.ndim() != 3 || image.dim(0) != 1 || image.dim(1) != config.image_size ||
        image.dim(2) != config.image_size)
        throw ShapeError("image shape " + image.shape_str() + " does not match model input [1," +
                         std::to_string(config.image_size) + "," +
                         std::to_string(config.image_size) + "]");

    auto conv = [&](Var x, const std::string& name, int stride) {
        return tape.conv2d(x, tape.param(params, name + ".w"), tape.param(params, name + ".b"),
                           stride, 1);
    };

    Var x = tape.relu(conv(tape.constant(image), "img.stem", 1));
    for (std::size_t k = 0; k < config.block_channels.size(); ++k) {
        const std::string blk = "img.blk" + std::to_string(k);
        if (k > 0) x = tape.relu(conv(x, blk + ".down", 2));
        Var y = conv(tape.relu(conv(x, blk + ".conv1", 1)), blk + ".conv2", 1);
        x = tape.relu(tape.add(x, y));
    }
    Var pooled = tape.gap(x);
    Var emb = tape.affine(pooled, tape.param(params, "img.head.w"), tape.param(params, "img.head.b"));
    return {emb, x};
}

TextForward build_text_encoder(Tape& tape, const ParameterStore& params,
                               const std::vector<int>& tokens, const ModelConfig& config) {
    if (tokens.empty()) throw ShapeError("text encoder: empty token sequence");
    TextForward out;
    std::vector<int> ids = tokens;
    if (static_cast<int>(ids.size()) > config.max_seq_len) {
        ids.resize(static_cast<std::size_t>(config.max_seq_len));
        out.record.truncated = true;
    }
    const int t = static_cast<int>(ids.size());
    const int h = config.text_hidden;
    const int dk = h / config.text_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Var x = tape.add(tape.embed(tape.param(params, "txt.embed"), ids),
                     tape.slice_rows(tape.param(params, "txt.pos"), 0, t));
    out.record.weights.resize(static_cast<std::size_t>(config.text_blocks));
    for (int l = 0; l < config.text_blocks; ++l) {
        const std::string blk = "txt.blk" + std::to_string(l);
        std::vector<Var> heads;
        std::vector<Var> attn_nodes;
        for (int hd = 0; hd < config.text_heads; ++hd) {
            const std::string head = blk + ".head" + std::to_string(hd);
            Var q = tape.matmul(x, tape.param(params, head + ".wq"));
            Var k = tape.matmul(x, tape.param(params, head + ".wk"));
            Var v = tape.matmul(x, tape.param(params, head + ".wv"));
            Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), scale));
            attn_nodes.push_back(attn);
            out.record.weights[static_cast<std::size_t>(l)].push_back(attn->value);
            heads.push_back(tape.matmul(attn, v));
        }
        Var mha = tape.linear_rows(tape.concat_rows_as_cols(heads), tape.param(params, blk + ".wo"),
                                   tape.param(params, blk + ".bo"));
        x = tape.layernorm_rows(tape.add(x, mha), tape.param(params, blk + ".ln1.g"),
                                tape.param(params, blk + ".ln1.b"));
        Var ff = tape.linear_rows(
            tape.relu(tape.linear_rows(x, tape.param(params, blk + ".ff1.w"),
                                       tape.param(params, blk + ".ff1.b"))),
            tape.param(params, blk + ".ff2.w"), tape.param(params, blk + ".ff2.b"));
        x = tape.layernorm_rows(tape.add(x, ff), tape.param(params, blk + ".ln2.g"),
                                tape.param(params, blk + ".ln2.b"));
        if (l == config.text_blocks - 1) {
            out.record.pooled.assign(static_cast<std::size_t>(t), 0.0);
            for (Var attn : attn_nodes)
                for (int j = 0; j < t; ++j)
                    out.record.pooled[static_cast<std::size_t>(j)] +=
                        attn->value[static_cast<std::size_t>(j)] / config.text_heads;
        }
    }
    Var bos = tape.select_row(x, 0);
    out.embedding =
        tape.affine(bos, tape.param(params, "txt.head.w"), tape.param(params, "txt.head.b"));
    return out;
}

Var build_classifier(Tape& tape, const ParameterStore& params, Var embedding,
                     const std::string& stream) {
    const std::string prefix = "cls_" + stream;
    return tape.affine(embedding, tape.param(params, prefix + ".w"),
                       tape.param(params, prefix + ".b"));
}

std::vector<double> encode_image(const Tensor& image, const ParameterStore& params,
                                 const ModelConfig& config) {
    Tape tape;
    return build_image_encoder(tape, params, image, config).embedding->value.vec();
}

std::pair<std::vector<double>, AttentionRecord> encode_text(const std::vector<int>& tokens,
                                                            const ParameterStore& params,
                                                            const ModelConfig& config) {
    Tape tape;
    TextForward fwd = build_text_encoder(tape, params, tokens, config);
    return {fwd.embedding->value.vec(), std::move(fwd.record)};
}

std::vector<double> classify(const std::vector<double>& embedding, const ParameterStore& params,
                             const ModelConfig& config, const std::string& stream) {
    if (static_cast<int>(embedding.size()) != config.embed_dim)
        throw ShapeError("classify: embedding length " + std::to_string(embedding.size()) +
                         " vs model d=" + std::to_string(config.embed_dim));
    Tape tape;
    Var emb = tape.constant(Tensor({config.embed_dim}, embedding));
    Var probs = tape.softmax(build_classifier(tape, params, emb, stream));
    return probs->value.vec();
}

Tensor gradcam_from_activations(const Tensor& activations, const Tensor& gradients) {
    require_same_shape(activations, gradients, "gradcam");
    if (activations.ndim() != 3) throw ShapeError("gradcam: expected [c,h,w] activations");
    const int c = activations.dim(0), hw = activations.dim(1) * activations.dim(2);
    Tensor map({activations.dim(1), activations.dim(2)});
    for (int ch = 0; ch < c; ++ch) {
        double w = 0.0;
        const double* g = gradients.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) w += g[i];
        w /= hw;
        const double* a = activations.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) map[static_cast<std::size_t>(i)] += w * a[i];
    }
    double mx = 0.0;
    for (double& v : map.vec()) {
        v = std::max(v, 0.0);
        mx = std::max(mx, v);
    }
    double mn = mx;
    for (double v : map.vec()) mn = std::min(mn, v);
    if (mx > mn) {
        for (double& v : map.vec()) v = (v - mn) / (mx - mn);
    }
    return map;
}

Tensor gradcam(const Tensor& image, const ParameterStore& params, const ModelConfig& config,
               int class_index) {
    if (class_index < 0 || class_index > 3) throw ParameterError("gradcam: class outside 0..3");
    Tape tape;
    ImageForward fwd = build_image_encoder(tape, params, image, config);
    Var logits = build_classifier(tape, params, fwd.embedding, "img");
    tape.backward(tape.select_elem(logits, static_cast<std::size_t>(class_index)));
    const Tensor& grad = Tape::grad_of(fwd.last_block);
    Tensor small = gradcam_from_activations(fwd.last_block->value, grad);

    const int hs = small.dim(0), ws = small.dim(1);
    Tensor up({image.dim(1), image.dim(2)});
    for (int r = 0; r < up.dim(0); ++r) {
        const int sr = std::min(hs - 1, r * hs / up.dim(0));
        for (int cc = 0; cc < up.dim(1); ++cc) {
            const int sc = std::min(ws - 1, cc * ws / up.dim(1));
            up[static_cast<std::size_t>(r) * up.dim(1) + cc] =
                small[static_cast<std::size_t>(sr) * ws + sc];
        }
    }
    return up;
}

std::vector<double> text_saliency(const std::vector<int>& tokens, const ParameterStore& params,
                                  const ModelConfig& config) {
    Tape tape;
    TextForward fwd = build_text_encoder(tape, params, tokens, config);
    return fwd.record.pooled;
}

void write_pgm(const std::string& path, const Tensor& heatmap) {
    if (heatmap.ndim() != 2) throw ShapeError("write_pgm: expected a 2-D map");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << "P5\n" << heatmap.dim(1) << " " << heatmap.dim(0) << "\n255\n";
    for (double v : heatmap.vec()) {
        const unsigned char b =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

}  // namespace edemajoint::encoders
