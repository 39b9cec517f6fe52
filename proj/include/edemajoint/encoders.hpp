#pragma once

#include <string>
#include <vector>

#include "edemajoint/gradnet.hpp"
#include "edemajoint/rng.hpp"

namespace edemajoint::encoders {

struct ModelConfig {
    int embed_dim = 64;       // joint embedding dimension d
    int image_size = 32;
    std::vector<int> block_channels = {4, 8, 16};  // one entry per residual block
    int text_hidden = 32;
    int text_blocks = 2;
    int text_heads = 2;
    int max_seq_len = 64;
    int vocab_size = 0;       // filled from the dataset vocabulary

    void validate() const;
};

// Creates every parameter of the two encoders and two classifiers, weights
// uniform in +-1/sqrt(fan_in) from the seeded stream, biases zero.
gradnet::ParameterStore init_params(const ModelConfig& config, std::uint64_t seed);

struct ImageForward {
    gradnet::Var embedding;   // [d]
    gradnet::Var last_block;  // final residual block activations [c,h,w]
};

struct AttentionRecord {
    // weights[block][head] is a TxT row-stochastic matrix
    std::vector<std::vector<Tensor>> weights;
    std::vector<double> pooled;  // final-block BOS-query attention, head-averaged
    bool truncated = false;
};

struct TextForward {
    gradnet::Var embedding;  // [d]
    AttentionRecord record;
};

ImageForward build_image_encoder(gradnet::Tape& tape, const gradnet::ParameterStore& params,
                                 const Tensor& image, const ModelConfig& config);
TextForward build_text_encoder(gradnet::Tape& tape, const gradnet::ParameterStore& params,
                               const std::vector<int>& tokens, const ModelConfig& config);
// `stream` is "img" or "txt"; returns the 4-way logits node.
gradnet::Var build_classifier(gradnet::Tape& tape, const gradnet::ParameterStore& params,
                              gradnet::Var embedding, const std::string& stream);

// Convenience non-tape entry points.
std::vector<double> encode_image(const Tensor& image, const gradnet::ParameterStore& params,
                                 const ModelConfig& config);
std::pair<std::vector<double>, AttentionRecord> encode_text(const std::vector<int>& tokens,
                                                            const gradnet::ParameterStore& params,
                                                            const ModelConfig& config);
std::vector<double> classify(const std::vector<double>& embedding,
                             const gradnet::ParameterStore& params, const ModelConfig& config,
                             const std::string& stream);

// Grad-CAM core: per-channel weights are the spatial gradient means, the map
// is the rectified weighted activation sum, min-max scaled (all-zero stays
// all-zero).
Tensor gradcam_from_activations(const Tensor& activations, const Tensor& gradients);

// Full Grad-CAM on the image stream, nearest-neighbor upsampled to the input.
Tensor gradcam(const Tensor& image, const gradnet::ParameterStore& params,
               const ModelConfig& config, int class_index);

// Final-block BOS-query attention averaged over heads; sums to 1.
std::vector<double> text_saliency(const std::vector<int>& tokens,
                                  const gradnet::ParameterStore& params,
                                  const ModelConfig& config);

void write_pgm(const std::string& path, const Tensor& heatmap);

}  // namespace edemajoint::encoders
