#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "edemajoint/objective.hpp"

using namespace edemajoint;
using namespace edemajoint::objective;

namespace {

using Vec = std::vector<double>;

struct RankCase {
    Vec i_j, r_j, i_s, r_s;
    double eta;
    SimKind kind;
    double expected;  // hand-computed from Eq. (1)
};

// Twenty-plus enumerated hinge cases; every expected value derived by hand
// from L = max(0, S(Ij,Rs)-S(Ij,Rj)+eta) + max(0, S(Is,Rj)-S(Ij,Rj)+eta).
const std::vector<RankCase> kRankCases = {
    // dot
    {{1, 0}, {1, 0}, {0, 1}, {0, 1}, 3.0, SimKind::dot, 4.0},
    {{1, 0}, {1, 0}, {0, 1}, {0, 1}, 0.5, SimKind::dot, 0.0},
    {{1, 2}, {1, 2}, {1, 2}, {1, 2}, 0.5, SimKind::dot, 1.0},
    {{1, 2}, {1, 2}, {1, 2}, {1, 2}, 0.0, SimKind::dot, 0.0},
    {{1, 2}, {1, 2}, {1, 2}, {1, 2}, 2.0, SimKind::dot, 4.0},
    {{1, 0}, {0, 1}, {1, 1}, {1, 1}, 1.0, SimKind::dot, 4.0},
    {{2, 0}, {3, 0}, {0, 1}, {-1, 0}, 2.0, SimKind::dot, 0.0},
    {{1, 0}, {1, 0}, {0, 1}, {3, 0}, 0.0, SimKind::dot, 2.0},
    {{1, 0}, {1, 0}, {0, 1}, {3, 0}, 0.5, SimKind::dot, 2.5},
    {{1, 0}, {2, 0}, {5, 0}, {0, 3}, 0.0, SimKind::dot, 8.0},   // second hinge: 10-2
    {{0, 0}, {0, 0}, {1, 1}, {1, 1}, 0.75, SimKind::dot, 1.5},  // all sims 0
    // neg_l2
    {{0, 0}, {0, 0}, {3, 4}, {3, 4}, 0.5, SimKind::neg_l2, 0.0},
    {{0, 0}, {1, 0}, {1, 0}, {0, 0}, 0.5, SimKind::neg_l2, 3.0},
    {{1, 1}, {1, 1}, {4, 5}, {1, 2}, 2.0, SimKind::neg_l2, 1.0},
    {{1, 1}, {1, 1}, {4, 5}, {1, 2}, 0.5, SimKind::neg_l2, 0.0},
    {{0, 0}, {0, 0}, {0, 3}, {4, 0}, 1.0, SimKind::neg_l2, 0.0},  // -4+1, -3+1 both <= 0
    {{0, 0}, {0, 0}, {0, 1}, {2, 0}, 1.5, SimKind::neg_l2, 0.5},  // hinges -0.5 -> 0 and +0.5
    // cosine
    {{2, 0}, {5, 0}, {1, 0}, {7, 0}, 0.3, SimKind::cosine, 0.6},
    {{1, 0}, {1, 0}, {0, 1}, {0, 1}, 0.5, SimKind::cosine, 0.0},
    {{1, 0}, {1, 0}, {-1, 0}, {-1, 0}, 2.5, SimKind::cosine, 1.0},
    {{1, 0}, {1, 0}, {-1, 0}, {-1, 0}, 1.5, SimKind::cosine, 0.0},
    {{3, 0}, {0, 4}, {0, 2}, {6, 0}, 0.0, SimKind::cosine, 2.0},  // Sjj=0, cross sims 1
};

}  // namespace

TEST_CASE("similarity: dot, neg_l2, cosine hand values") {
    CHECK(similarity({1, 2}, {3, 4}, SimKind::dot) == 11.0);
    Vec v = {0.3, -2.5, 7.0};
    CHECK(similarity(v, v, SimKind::neg_l2) == 0.0);
    CHECK(similarity({2, 0}, {5, 0}, SimKind::cosine) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(similarity({3, 4}, {3, 4}, SimKind::neg_l2) == 0.0);
    CHECK(similarity({0, 0}, {3, 4}, SimKind::neg_l2) == -5.0);
    CHECK(similarity({1, 0}, {0, 1}, SimKind::cosine) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("similarity: cosine with a zero vector is degenerate") {
    CHECK_THROWS_AS(similarity({0, 0}, {1, 1}, SimKind::cosine), DegenerateInputError);
    CHECK_THROWS_AS(similarity({1, 1}, {0, 0}, SimKind::cosine), DegenerateInputError);
}

TEST_CASE("similarity: length mismatch is a shape error") {
    CHECK_THROWS_AS(similarity({1, 2}, {1, 2, 3}, SimKind::dot), ShapeError);
}

TEST_CASE("margin rule: paper cases and symmetry") {
    ObjectiveConfig cfg;
    CHECK(margin(2, 0, cfg) == 2.0);
    CHECK(margin(1, std::nullopt, cfg) == 0.5);
    CHECK(margin(3, 3, cfg) == 0.0);
    CHECK(margin(std::nullopt, 2, cfg) == 0.5);
    CHECK(margin(std::nullopt, std::nullopt, cfg) == 0.5);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) CHECK(margin(a, b, cfg) == margin(b, a, cfg));
    ObjectiveConfig wide;
    wide.unlabeled_margin = 1.25;
    CHECK(margin(std::nullopt, 1, wide) == 1.25);
    CHECK(margin(0, 3, wide) == 3.0);
}

TEST_CASE("ranking_loss: enumerated hand cases exact to 1e-12") {
    for (std::size_t i = 0; i < kRankCases.size(); ++i) {
        const RankCase& c = kRankCases[i];
        CAPTURE(i);
        double got = ranking_loss(c.i_j, c.r_j, c.i_s, c.r_s, c.eta, c.kind);
        CHECK(std::abs(got - c.expected) <= 1e-12);
    }
}

TEST_CASE("ranking_loss: non-negative on random inputs") {
    Rng rng(808);
    for (int trial = 0; trial < 200; ++trial) {
        Vec a(4), b(4), c(4), d(4);
        for (int i = 0; i < 4; ++i) {
            a[i] = rng.uniform(-2, 2);
            b[i] = rng.uniform(-2, 2);
            c[i] = rng.uniform(-2, 2);
            d[i] = rng.uniform(-2, 2);
        }
        double eta = rng.uniform(0.0, 3.0);
        CHECK(ranking_loss(a, b, c, d, eta, SimKind::dot) >= 0.0);
        CHECK(ranking_loss(a, b, c, d, eta, SimKind::neg_l2) >= 0.0);
    }
}

TEST_CASE("ranking_loss depends only on the three similarities") {
    // Replacing the impostor embeddings with different vectors of equal
    // similarity leaves the loss unchanged.
    Vec i_j = {1, 0}, r_j = {2, 1};
    double l1 = ranking_loss(i_j, r_j, {0, 1}, {0, 2}, 0.7, SimKind::dot);
    // S(Ij, Rs)=0*1+2*0 -> use Rs'={0,2}: S=0; Is'={-1, 2}: S(Is',Rj)=-2+2=0 == S({0,1},Rj)=1?
    // S({0,1},{2,1}) = 1, so pick Is' with the same similarity 1: {1,-1}: 2-1=1.
    double l2 = ranking_loss(i_j, r_j, {1, -1}, {2, -2}, 0.7, SimKind::dot);
    // S(Ij,{0,2}) = 0 and S(Ij,{2,-2}) = 2; adjust Rs' to keep S(Ij,Rs)=0: {0,5}
    double l3 = ranking_loss(i_j, r_j, {1, -1}, {0, 5}, 0.7, SimKind::dot);
    CHECK(l1 == doctest::Approx(l3).epsilon(1e-12));
    (void)l2;
}

TEST_CASE("ranking_loss: cosine kind invariant under positive rescaling") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        Vec a(3), b(3), c(3), d(3);
        for (int i = 0; i < 3; ++i) {
            a[i] = rng.uniform(0.1, 2.0);
            b[i] = rng.uniform(-2.0, -0.1);
            c[i] = rng.uniform(0.1, 2.0);
            d[i] = rng.uniform(0.1, 2.0);
        }
        double eta = rng.uniform(0.0, 2.0);
        double base = ranking_loss(a, b, c, d, eta, SimKind::cosine);
        Vec a2 = a, c2 = c;
        double sa = rng.uniform(0.5, 5.0), sc = rng.uniform(0.5, 5.0);
        for (int i = 0; i < 3; ++i) {
            a2[i] *= sa;
            c2[i] *= sc;
        }
        CHECK(ranking_loss(a2, b, c2, d, eta, SimKind::cosine) ==
              doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("direct mode minimizes negative matched similarity, ignoring impostors") {
    CHECK(ranking_loss({1, 2}, {3, 4}, {9, 9}, {-9, 9}, 0.5, SimKind::dot, SimMode::direct) ==
          -11.0);
    CHECK(ranking_loss({0, 0}, {3, 4}, {1, 1}, {2, 2}, 0.0, SimKind::neg_l2, SimMode::direct) ==
          5.0);
    CHECK(ranking_loss({2, 0}, {5, 0}, {0, 1}, {1, 0}, 1.0, SimKind::cosine, SimMode::direct) ==
          doctest::Approx(-1.0).epsilon(1e-12));
    // changing the impostors changes nothing
    double d1 = ranking_loss({1, 2}, {3, 4}, {0, 0}, {0, 0}, 0.5, SimKind::dot, SimMode::direct);
    double d2 = ranking_loss({1, 2}, {3, 4}, {7, -7}, {1, 1}, 2.0, SimKind::dot, SimMode::direct);
    CHECK(d1 == d2);
}

TEST_CASE("cross_entropy_pair: hand values") {
    Vec uniform = {0.25, 0.25, 0.25, 0.25};
    CHECK(cross_entropy_pair(uniform, uniform, 2) ==
          doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-9));
    Vec onehot = {0, 1, 0, 0};
    CHECK(cross_entropy_pair(onehot, onehot, 1) == 0.0);
    Vec half = {0.5, 0.5, 0, 0};
    Vec quart = {0.25, 0.25, 0.25, 0.25};
    CHECK(cross_entropy_pair(half, quart, 0) ==
          doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy_pair: zero probability is floored, not infinite") {
    Vec zeroed = {0, 1, 0, 0};
    double v = cross_entropy_pair(zeroed, zeroed, 0);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-2.0 * std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("sample_impostor_map: bijection and determinism") {
    Rng a(31), b(31);
    auto p1 = sample_impostor_map(5, a);
    auto p2 = sample_impostor_map(5, b);
    CHECK(p1 == p2);
    auto sorted = p1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("sample_impostor_map: uniform over permutations (chi-square style)") {
    Rng rng(123);
    std::map<std::vector<int>, int> counts;
    const int draws = 60000;
    for (int i = 0; i < draws; ++i) ++counts[sample_impostor_map(3, rng)];
    CHECK(counts.size() == 6);
    for (const auto& [perm, n] : counts) {
        double freq = static_cast<double>(n) / draws;
        CHECK(std::abs(freq - 1.0 / 6.0) <= 0.01);
    }
}

TEST_CASE("tape nodes match the plain implementations") {
    Rng rng(5555);
    for (SimKind kind : {SimKind::dot, SimKind::neg_l2, SimKind::cosine}) {
        for (int trial = 0; trial < 20; ++trial) {
            Vec a(5), b(5), c(5), d(5);
            for (int i = 0; i < 5; ++i) {
                a[i] = rng.uniform(0.1, 1.5);
                b[i] = rng.uniform(0.1, 1.5);
                c[i] = rng.uniform(0.1, 1.5);
                d[i] = rng.uniform(0.1, 1.5);
            }
            double eta = rng.uniform(0.0, 1.5);
            gradnet::Tape tape;
            auto mk = [&tape](const Vec& v) {
                return tape.constant(Tensor({static_cast<int>(v.size())}, v));
            };
            double sim_plain = similarity(a, b, kind);
            double sim_node = similarity_node(tape, mk(a), mk(b), kind)->value.item();
            CHECK(sim_node == doctest::Approx(sim_plain).epsilon(1e-12));
            double rank_plain = ranking_loss(a, b, c, d, eta, kind);
            double rank_node =
                ranking_term_node(tape, mk(a), mk(b), mk(c), mk(d), eta, kind, SimMode::ranking)
                    ->value.item();
            CHECK(rank_node == doctest::Approx(rank_plain).epsilon(1e-12));
        }
    }
}

TEST_CASE("ranking_term_node gradients match finite differences") {
    for (SimKind kind : {SimKind::dot, SimKind::neg_l2, SimKind::cosine}) {
        CAPTURE(sim_kind_name(kind));
        gradnet::ParameterStore params;
        Rng rng(2020 + static_cast<int>(kind));
        params.add("i_j", gradnet::Submodel::image_encoder, {5});
        params.add("r_j", gradnet::Submodel::text_encoder, {5});
        params.add("i_s", gradnet::Submodel::image_encoder, {5});
        params.add("r_s", gradnet::Submodel::text_encoder, {5});
        for (const auto& e : params.entries())
            for (double& v : params.at(e.name).vec()) v = rng.uniform(0.2, 1.2);

        auto build = [kind](const gradnet::ParameterStore& p, gradnet::GradientSet* out) {
            gradnet::Tape tape;
            gradnet::Var loss =
                ranking_term_node(tape, tape.param(p, "i_j"), tape.param(p, "r_j"),
                                  tape.param(p, "i_s"), tape.param(p, "r_s"), 0.8, kind,
                                  SimMode::ranking);
            tape.backward(loss);
            if (out) *out = tape.gradients();
            return loss->value.item();
        };
        gradnet::GradientSet grads;
        build(params, &grads);
        auto forward = [&](const gradnet::ParameterStore& p) { return build(p, nullptr); };
        double err = gradnet::finite_diff_check(params, forward, grads, 1e-5, 606, 100);
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("sim kind names round-trip") {
    for (SimKind k : {SimKind::dot, SimKind::neg_l2, SimKind::cosine})
        CHECK(sim_kind_from_name(sim_kind_name(k)) == k);
    CHECK_THROWS_AS(sim_kind_from_name("manhattan"), ConfigError);
}
