#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "edemajoint/encoders.hpp"
#include "edemajoint/synthgen.hpp"

namespace edemajoint::evalkit {

struct EvalReport {
    // Dichotomized AUCs for cuts >=1, >=2, >=3; absent when a side is empty.
    std::array<std::optional<double>, 3> auc;
    double macro_f1 = 0.0;
    int confusion[4][4] = {};  // [gold][pred]
    int n_examples = 0;

    std::optional<double> mean_auc() const;
};

// P(severity >= cut) from the 4-class distribution.
double dichotomize(const std::vector<double>& probs, int cut);

// Mann-Whitney AUC; tied score pairs count one half.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted mean of per-class F1 over all four classes; a class with no
// predictions and no gold members contributes 0.
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold);

EvalReport evaluate(const gradnet::ParameterStore& params, const encoders::ModelConfig& config,
                    const std::vector<synthgen::PairedExample>& examples);

std::string report_json(const EvalReport& r);
std::string report_table(const std::string& name, const EvalReport& r);

}  // namespace edemajoint::evalkit
