#pragma once

#include <optional>
#include <string>
#include <vector>

#include "edemajoint/evalkit.hpp"
#include "edemajoint/trainkit.hpp"

namespace edemajoint::cli {

// Parses and validates a JSON train config file. Errors are aggregated into
// one ConfigError listing every problem; an empty file yields all defaults.
trainkit::TrainConfig validate_config(const std::string& path);

struct MatrixRow {
    std::string variant;
    std::array<std::optional<double>, 3> mean_auc;
    double mean_macro_f1 = 0.0;
    std::optional<double> mean_of_aucs;
};

struct MatrixResult {
    std::vector<MatrixRow> rows;
    // Set when image-only, ranking-dot and ranking-dot-semi all ran: whether
    // the strict ordering semi > joint > image-only held on mean AUC.
    std::optional<bool> strict_ordering_observed;
    std::string table;
};

trainkit::TrainConfig apply_variant(trainkit::TrainConfig base, const std::string& variant);

// Shared-data, shared-seed sweep over model variants; metrics are averaged
// over the seed list and computed on a held-out labeled test split.
MatrixResult run_experiment_matrix(const trainkit::TrainConfig& base,
                                   const std::vector<std::string>& variants,
                                   const synthgen::DatasetSplit& data,
                                   const std::vector<std::uint64_t>& seeds,
                                   double test_fraction = 0.25);

// Entry point behind main(); returns the process exit code.
int run(const std::vector<std::string>& args);

void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace edemajoint::cli
