#include "edemajoint/objective.hpp"

#include <cmath>

namespace edemajoint::objective {

SimKind sim_kind_from_name(const std::string& name) {
    if (name == "dot") return SimKind::dot;
    if (name == "l2" || name == "neg_l2") return SimKind::neg_l2;
    if (name == "cosine") return SimKind::cosine;
    throw ConfigError("unknown similarity kind: " + name);
}

const char* sim_kind_name(SimKind k) {
    switch (k) {
        case SimKind::dot: return "dot";
        case SimKind::neg_l2: return "l2";
        case SimKind::cosine: return "cosine";
    }
    return "?";
}

double similarity(const std::vector<double>& a, const std::vector<double>& b, SimKind kind) {
    if (a.size() != b.size()) throw ShapeError("similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    switch (kind) {
        case SimKind::dot: return dot;
        case SimKind::neg_l2: return -std::sqrt(d2);
        case SimKind::cosine:
            if (na == 0.0 || nb == 0.0)
                throw DegenerateInputError("cosine similarity of a zero vector");
            return dot / (std::sqrt(na) * std::sqrt(nb));
    }
    return 0.0;
}

double margin(std::optional<int> y_j, std::optional<int> y_s, const ObjectiveConfig& config) {
    if (y_j && (*y_j < 0 || *y_j > 3)) throw ParameterError("margin: label outside 0..3");
    if (y_s && (*y_s < 0 || *y_s > 3)) throw ParameterError("margin: label outside 0..3");
    if (y_j && y_s) return std::abs(*y_j - *y_s);
    return config.unlabeled_margin;
}

double ranking_loss(const std::vector<double>& i_j, const std::vector<double>& r_j,
                    const std::vector<double>& i_s, const std::vector<double>& r_s, double eta,
                    SimKind kind, SimMode mode) {
    const double matched = similarity(i_j, r_j, kind);
    if (mode == SimMode::direct) return -matched;
    const double text_impostor = similarity(i_j, r_s, kind);
    const double image_impostor = similarity(i_s, r_j, kind);
    return std::max(0.0, text_impostor - matched + eta) +
           std::max(0.0, image_impostor - matched + eta);
}

double cross_entropy_pair(const std::vector<double>& p_img, const std::vector<double>& p_txt,
                          int y) {
    if (y < 0 || y > 3) throw ParameterError("cross_entropy_pair: label outside 0..3");
    if (p_img.size() != 4 || p_txt.size() != 4)
        throw ShapeError("cross_entropy_pair: expected 4-class distributions");
    constexpr double kFloor = 1e-12;
    return -std::log(std::max(p_img[static_cast<std::size_t>(y)], kFloor)) -
           std::log(std::max(p_txt[static_cast<std::size_t>(y)], kFloor));
}

std::vector<int> sample_impostor_map(int n, Rng& rng) {
    if (n < 1) throw ParameterError("sample_impostor_map: n must be positive");
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = 0; i + 1 < perm.size(); ++i) {
        const std::size_t j = i + rng.uniform_int(perm.size() - i);
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

gradnet::Var similarity_node(gradnet::Tape& tape, gradnet::Var a, gradnet::Var b, SimKind kind) {
    switch (kind) {
        case SimKind::dot: return tape.dot(a, b);
        case SimKind::neg_l2: return tape.scale(tape.norm(tape.sub(a, b)), -1.0);
        case SimKind::cosine: return tape.cosine(a, b);
    }
    throw ConfigError("similarity_node: bad kind");
}

gradnet::Var ranking_term_node(gradnet::Tape& tape, gradnet::Var i_j, gradnet::Var r_j,
                               gradnet::Var i_s, gradnet::Var r_s, double eta, SimKind kind,
                               SimMode mode) {
    gradnet::Var matched = similarity_node(tape, i_j, r_j, kind);
    if (mode == SimMode::direct) return tape.scale(matched, -1.0);
    gradnet::Var eta_node = tape.constant(Tensor::scalar(eta));
    gradnet::Var h1 = tape.hinge(
        tape.s_add(tape.s_sub(similarity_node(tape, i_j, r_s, kind), matched), eta_node));
    gradnet::Var h2 = tape.hinge(
        tape.s_add(tape.s_sub(similarity_node(tape, i_s, r_j, kind), matched), eta_node));
    return tape.s_add(h1, h2);
}

}  // namespace edemajoint::objective
