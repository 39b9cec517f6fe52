#include "edemajoint/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace edemajoint::evalkit {

std::optional<double> EvalReport::mean_auc() const {
    double acc = 0.0;
    int present = 0;
    for (const auto& a : auc) {
        if (!a) continue;
        acc += *a;
        ++present;
    }
    if (present == 0) return std::nullopt;
    return acc / present;
}

double dichotomize(const std::vector<double>& probs, int cut) {
    if (cut < 1 || cut > 3) throw ParameterError("dichotomize: cut outside {1,2,3}");
    if (probs.size() != 4) throw ShapeError("dichotomize: expected 4-class distribution");
    double acc = 0.0;
    for (int i = cut; i < 4; ++i) acc += probs[static_cast<std::size_t>(i)];
    return acc;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: length mismatch");
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateInputError("auc: need at least one positive and one negative");

    // Midrank formulation: AUC = (R_pos - nPos(nPos+1)/2) / (nPos*nNeg).
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold) {
    if (predicted.empty()) throw ParameterError("macro_f1: empty input");
    if (predicted.size() != gold.size()) throw ShapeError("macro_f1: length mismatch");
    double total = 0.0;
    for (int c = 0; c < 4; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            if (predicted[i] < 0 || predicted[i] > 3 || gold[i] < 0 || gold[i] > 3)
                throw ParameterError("macro_f1: class outside 0..3");
            if (predicted[i] == c && gold[i] == c) ++tp;
            if (predicted[i] == c && gold[i] != c) ++fp;
            if (predicted[i] != c && gold[i] == c) ++fn;
        }
        const double p = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double r = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
        total += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return total / 4.0;
}

EvalReport evaluate(const gradnet::ParameterStore& params, const encoders::ModelConfig& config,
                    const std::vector<synthgen::PairedExample>& examples) {
    EvalReport rep;
    std::vector<std::array<double, 3>> cut_scores;
    std::vector<int> golds, preds;
    for (const auto& ex : examples) {
        if (!ex.label) throw ParameterError("evaluate: dataset contains an unlabeled example");
        const auto probs =
            encoders::classify(encoders::encode_image(ex.image, params, config), params, config, "img");
        cut_scores.push_back({dichotomize(probs, 1), dichotomize(probs, 2), dichotomize(probs, 3)});
        int arg = 0;
        for (int i = 1; i < 4; ++i)
            if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(arg)]) arg = i;
        preds.push_back(arg);
        golds.push_back(*ex.label);
        rep.confusion[*ex.label][arg] += 1;
    }
    rep.n_examples = static_cast<int>(examples.size());
    for (int cut = 1; cut <= 3; ++cut) {
        std::vector<double> scores;
        std::vector<int> binary;
        for (std::size_t i = 0; i < golds.size(); ++i) {
            scores.push_back(cut_scores[i][static_cast<std::size_t>(cut - 1)]);
            binary.push_back(golds[i] >= cut ? 1 : 0);
        }
        const bool has_pos = std::count(binary.begin(), binary.end(), 1) > 0;
        const bool has_neg = std::count(binary.begin(), binary.end(), 0) > 0;
        if (has_pos && has_neg) rep.auc[static_cast<std::size_t>(cut - 1)] = auc(scores, binary);
    }
    rep.macro_f1 = macro_f1(preds, golds);
    return rep;
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j;
    const char* keys[3] = {"auc_0_vs_123", "auc_01_vs_23", "auc_012_vs_3"};
    for (int i = 0; i < 3; ++i) {
        if (r.auc[static_cast<std::size_t>(i)])
            j[keys[i]] = *r.auc[static_cast<std::size_t>(i)];
        else
            j[keys[i]] = nullptr;
    }
    j["macro_f1"] = r.macro_f1;
    j["n_examples"] = r.n_examples;
    auto conf = nlohmann::json::array();
    for (int g = 0; g < 4; ++g) {
        auto row = nlohmann::json::array();
        for (int p = 0; p < 4; ++p) row.push_back(r.confusion[g][p]);
        conf.push_back(row);
    }
    j["confusion"] = conf;
    return j.dump(2);
}

std::string report_table(const std::string& name, const EvalReport& r) {
    std::ostringstream os;
    os << "Method            AUC (0 vs 1,2,3)  AUC (0,1 vs 2,3)  AUC (0,1,2 vs 3)  macro-F1\n";
    os.setf(std::ios::fixed);
    os.precision(3);
    os << name;
    for (std::size_t i = name.size(); i < 18; ++i) os << ' ';
    for (int i = 0; i < 3; ++i) {
        if (r.auc[static_cast<std::size_t>(i)])
            os << *r.auc[static_cast<std::size_t>(i)];
        else
            os << "  n/a";
        os << "             ";
    }
    os << r.macro_f1 << "\n";
    return os.str();
}

}  // namespace edemajoint::evalkit
