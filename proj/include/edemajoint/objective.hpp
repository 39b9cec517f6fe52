#pragma once

#include <optional>
#include <vector>

#include "edemajoint/gradnet.hpp"
#include "edemajoint/rng.hpp"

namespace edemajoint::objective {

enum class SimKind { dot, neg_l2, cosine };
enum class SimMode { ranking, direct };
enum class Phase { embedding_only, joint };

SimKind sim_kind_from_name(const std::string& name);
const char* sim_kind_name(SimKind k);

struct ObjectiveConfig {
    SimKind kind = SimKind::dot;
    SimMode mode = SimMode::ranking;
    double unlabeled_margin = 0.5;
    Phase phase = Phase::joint;
};

// dot = a.b ; neg_l2 = -|a-b| ; cosine = a.b/(|a||b|)
double similarity(const std::vector<double>& a, const std::vector<double>& b, SimKind kind);

// |y_j - y_s| when both labels exist, the constant margin otherwise.
double margin(std::optional<int> y_j, std::optional<int> y_s, const ObjectiveConfig& config);

// Two-sided hinge against the impostor pair; in direct mode the matched-pair
// similarity is minimized directly and the impostors are ignored.
double ranking_loss(const std::vector<double>& i_j, const std::vector<double>& r_j,
                    const std::vector<double>& i_s, const std::vector<double>& r_s, double eta,
                    SimKind kind, SimMode mode = SimMode::ranking);

// -log p_img[y] - log p_txt[y], probabilities floored at 1e-12.
double cross_entropy_pair(const std::vector<double>& p_img, const std::vector<double>& p_txt,
                          int y);

// Uniform permutation of {0..n-1} (Fisher-Yates), resampled every epoch.
std::vector<int> sample_impostor_map(int n, Rng& rng);

// Tape-side counterparts used by the training loss graph.
gradnet::Var similarity_node(gradnet::Tape& tape, gradnet::Var a, gradnet::Var b, SimKind kind);
gradnet::Var ranking_term_node(gradnet::Tape& tape, gradnet::Var i_j, gradnet::Var r_j,
                               gradnet::Var i_s, gradnet::Var r_s, double eta, SimKind kind,
                               SimMode mode);

}  // namespace edemajoint::objective
