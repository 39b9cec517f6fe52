#include "edemajoint/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "edemajoint/textlab.hpp"

namespace edemajoint::cli {

namespace fs = std::filesystem;

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw ConfigError("short write to " + tmp);
    }
    fs::rename(tmp, path);
}

trainkit::TrainConfig validate_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();
    const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
    return trainkit::train_config_from_json(blank ? "" : text);
}

trainkit::TrainConfig apply_variant(trainkit::TrainConfig base, const std::string& variant) {
    base.image_only = false;
    base.use_unlabeled = false;
    if (variant == "image-only") {
        base.image_only = true;
        return base;
    }
    std::string sim = variant;
    if (variant.rfind("ranking-", 0) == 0) {
        base.sim_mode = objective::SimMode::ranking;
        sim = variant.substr(8);
        if (sim == "dot-semi") {
            base.use_unlabeled = true;
            sim = "dot";
        }
    } else {
        base.sim_mode = objective::SimMode::direct;
    }
    try {
        base.sim_kind = objective::sim_kind_from_name(sim);
    } catch (const Error&) {
        throw ConfigError("unknown variant: " + variant);
    }
    return base;
}

MatrixResult run_experiment_matrix(const trainkit::TrainConfig& base,
                                   const std::vector<std::string>& variants,
                                   const synthgen::DatasetSplit& data,
                                   const std::vector<std::uint64_t>& seeds,
                                   double test_fraction) {
    if (seeds.empty()) throw ConfigError("matrix: need at least one seed");
    for (const auto& v : variants) (void)apply_variant(base, v);  // fail fast on bad names
    if (std::find(variants.begin(), variants.end(), "ranking-dot-semi") != variants.end() &&
        data.unlabeled.empty())
        throw ConfigError("matrix: ranking-dot-semi requires unlabeled data");

    // One shared train/test carve-out so every variant sees the same data.
    Rng split_rng = Rng::derive(data.config.seed, 0x7E57);
    auto [train_pool, test_pool] = synthgen::train_test_split(data.labeled, test_fraction, split_rng);
    synthgen::DatasetSplit train_data;
    train_data.labeled = train_pool;
    train_data.unlabeled = data.unlabeled;
    train_data.vocabulary = data.vocabulary;
    train_data.config = data.config;
    train_data.config.n_labeled = static_cast<int>(train_pool.size());

    MatrixResult out;
    for (const auto& variant : variants) {
        MatrixRow row;
        row.variant = variant;
        std::array<double, 3> auc_sum = {0, 0, 0};
        std::array<int, 3> auc_n = {0, 0, 0};
        double f1_sum = 0.0;
        for (std::uint64_t seed : seeds) {
            trainkit::TrainConfig cfg = apply_variant(base, variant);
            cfg.seed = seed;
            trainkit::TrainResult tr = trainkit::train(cfg, train_data);
            evalkit::EvalReport rep =
                evalkit::evaluate(tr.final.params, tr.final.config.model, test_pool);
            for (int i = 0; i < 3; ++i)
                if (rep.auc[static_cast<std::size_t>(i)]) {
                    auc_sum[static_cast<std::size_t>(i)] += *rep.auc[static_cast<std::size_t>(i)];
                    auc_n[static_cast<std::size_t>(i)] += 1;
                }
            f1_sum += rep.macro_f1;
        }
        for (int i = 0; i < 3; ++i)
            if (auc_n[static_cast<std::size_t>(i)] == static_cast<int>(seeds.size()))
                row.mean_auc[static_cast<std::size_t>(i)] =
                    auc_sum[static_cast<std::size_t>(i)] / static_cast<double>(seeds.size());
        row.mean_macro_f1 = f1_sum / static_cast<double>(seeds.size());
        if (row.mean_auc[0] && row.mean_auc[1] && row.mean_auc[2])
            row.mean_of_aucs = (*row.mean_auc[0] + *row.mean_auc[1] + *row.mean_auc[2]) / 3.0;
        out.rows.push_back(row);
    }

    auto find_row = [&](const std::string& name) -> const MatrixRow* {
        for (const auto& r : out.rows)
            if (r.variant == name) return &r;
        return nullptr;
    };
    const MatrixRow* semi = find_row("ranking-dot-semi");
    const MatrixRow* joint = find_row("ranking-dot");
    const MatrixRow* img = find_row("image-only");
    if (semi && joint && img && semi->mean_of_aucs && joint->mean_of_aucs && img->mean_of_aucs)
        out.strict_ordering_observed =
            *semi->mean_of_aucs > *joint->mean_of_aucs && *joint->mean_of_aucs > *img->mean_of_aucs;

    std::ostringstream os;
    os << "variant           auc_0v123  auc_01v23  auc_012v3  macro_f1\n";
    os.setf(std::ios::fixed);
    os.precision(3);
    for (const auto& r : out.rows) {
        os << r.variant;
        for (std::size_t i = r.variant.size(); i < 18; ++i) os << ' ';
        for (int i = 0; i < 3; ++i) {
            if (r.mean_auc[static_cast<std::size_t>(i)])
                os << *r.mean_auc[static_cast<std::size_t>(i)];
            else
                os << "  n/a";
            os << "      ";
        }
        os << r.mean_macro_f1 << "\n";
    }
    if (out.strict_ordering_observed)
        os << "strict ordering semi > joint > image-only: "
           << (*out.strict_ordering_observed ? "observed" : "not observed") << "\n";
    out.table = os.str();
    return out;
}

namespace {

textlab::Ruleset resolve_rules(const std::string& spec) {
    if (spec.empty() || spec == "default") return textlab::default_ruleset();
    return textlab::load_ruleset_file(spec);
}

std::vector<textlab::DocRecord> read_reports(const std::string& in) {
    std::vector<textlab::DocRecord> docs;
    if (fs::is_directory(in)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(in))
            if (entry.path().extension() == ".txt") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) {
            std::ifstream f(p);
            std::stringstream ss;
            ss << f.rdbuf();
            docs.push_back({p.stem().string(), ss.str()});
        }
        return docs;
    }
    std::ifstream f(in);
    if (!f) throw ConfigError("cannot open input: " + in);
    std::string line;
    while (std::getline(f, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    }
    return docs;
}

int cmd_label(const std::string& in, const std::string& rules_spec, const std::string& out) {
    const auto docs = read_reports(in);
    const auto result = textlab::label_corpus(docs, resolve_rules(rules_spec));

    std::ostringstream csv;
    csv << "id,level,evidence_count\n";
    for (const auto& d : result.docs) {
        csv << d.id << ",";
        if (!d.failed && d.result.level) csv << *d.result.level;
        csv << "," << (d.failed ? 0 : d.result.evidence.size()) << "\n";
    }
    write_file_atomic(out, csv.str());

    nlohmann::json summary = {
        {"per_level", {result.summary.per_level[0], result.summary.per_level[1],
                       result.summary.per_level[2], result.summary.per_level[3]}},
        {"unlabeled", result.summary.unlabeled},
        {"failed", result.summary.failed},
        {"total", result.docs.size()},
    };
    write_file_atomic(out + ".summary.json", summary.dump(2) + "\n");
    std::cout << "label: " << result.docs.size() << " reports -> " << out << " ("
              << result.summary.unlabeled << " unlabeled, " << result.summary.failed
              << " failed)\n";
    return 0;
}

int cmd_gen_data(const std::string& out, std::uint64_t seed, int n_labeled, int n_unlabeled,
                 int image_size) {
    synthgen::GenConfig cfg;
    cfg.seed = seed;
    cfg.n_labeled = n_labeled;
    cfg.n_unlabeled = n_unlabeled;
    cfg.image_size = image_size;
    synthgen::save_dataset(out, synthgen::gen_dataset(cfg));
    std::cout << "gen-data: " << (n_labeled + n_unlabeled) << " examples (" << n_labeled
              << " labeled) -> " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out,
              std::optional<std::uint64_t> seed) {
    trainkit::TrainConfig cfg =
        config_path.empty() ? trainkit::TrainConfig{} : validate_config(config_path);
    if (seed) cfg.seed = *seed;
    const auto data = synthgen::load_dataset(data_dir);
    std::cout << "train: " << data.labeled.size() << " labeled / " << data.unlabeled.size()
              << " unlabeled, seed " << cfg.seed << "\n";
    trainkit::TrainResult result = trainkit::train(cfg, data);
    trainkit::save_checkpoint(out, result.final);
    trainkit::save_checkpoint(out + ".best", result.best);
    write_file_atomic(out + ".metrics.csv", trainkit::metrics_csv(result.log));
    std::cout << "train: " << result.log.size() << " epochs -> " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& out) {
    const trainkit::Checkpoint ckpt = trainkit::load_checkpoint(ckpt_path);
    const auto data = synthgen::load_dataset(data_dir);
    const evalkit::EvalReport rep =
        evalkit::evaluate(ckpt.params, ckpt.config.model, data.labeled);
    write_file_atomic(out, evalkit::report_json(rep) + "\n");
    std::cout << evalkit::report_table(fs::path(ckpt_path).filename().string(), rep);
    std::cout << "eval: " << rep.n_examples << " examples -> " << out << "\n";
    return 0;
}

int cmd_explain(const std::string& ckpt_path, const std::string& data_dir, int example,
                const std::string& out_dir) {
    const trainkit::Checkpoint ckpt = trainkit::load_checkpoint(ckpt_path);
    const auto data = synthgen::load_dataset(data_dir);
    std::vector<const synthgen::PairedExample*> all;
    for (const auto& ex : data.labeled) all.push_back(&ex);
    for (const auto& ex : data.unlabeled) all.push_back(&ex);
    if (example < 0 || example >= static_cast<int>(all.size()))
        throw ParameterError("explain: example index out of range");
    const synthgen::PairedExample& ex = *all[static_cast<std::size_t>(example)];

    const auto probs = trainkit::infer_image(ckpt, ex.image);
    int cls = 0;
    for (int i = 1; i < 4; ++i)
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(cls)]) cls = i;

    fs::create_directories(out_dir);
    const Tensor heat = encoders::gradcam(ex.image, ckpt.params, ckpt.config.model, cls);
    encoders::write_pgm(out_dir + "/gradcam.pgm", heat);

    const auto weights = encoders::text_saliency(ex.tokens, ckpt.params, ckpt.config.model);
    nlohmann::json sal = nlohmann::json::array();
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const int id = ex.tokens[i];
        sal.push_back({{"token", data.vocabulary.words[static_cast<std::size_t>(id)]},
                       {"weight", weights[i]}});
    }
    write_file_atomic(out_dir + "/saliency.json", sal.dump(2) + "\n");
    std::cout << "explain: example " << example << " class " << cls << " -> " << out_dir << "\n";
    return 0;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_matrix(const std::string& config_path, const std::string& data_dir,
               const std::string& variants_csv, const std::string& seeds_csv,
               const std::string& out_dir) {
    trainkit::TrainConfig cfg =
        config_path.empty() ? trainkit::TrainConfig{} : validate_config(config_path);
    const auto data = synthgen::load_dataset(data_dir);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
    if (seeds.empty()) seeds.push_back(cfg.seed);
    const auto variants = split_csv(variants_csv);
    if (variants.empty()) throw ConfigError("matrix: no variants given");

    MatrixResult result = run_experiment_matrix(cfg, variants, data, seeds);
    fs::create_directories(out_dir);
    write_file_atomic(out_dir + "/matrix.txt", result.table);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : result.rows) {
        nlohmann::json row = {{"variant", r.variant}, {"macro_f1", r.mean_macro_f1}};
        const char* keys[3] = {"auc_0v123", "auc_01v23", "auc_012v3"};
        for (int i = 0; i < 3; ++i)
            row[keys[i]] = r.mean_auc[static_cast<std::size_t>(i)]
                               ? nlohmann::json(*r.mean_auc[static_cast<std::size_t>(i)])
                               : nlohmann::json(nullptr);
        j.push_back(row);
    }
    write_file_atomic(out_dir + "/matrix.json", j.dump(2) + "\n");
    std::cout << result.table;
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"edemajoint: joint image-text severity modeling on a synthetic corpus"};
    app.require_subcommand(1);

    std::string in, out, rules = "default", config, data, ckpt, variants, seeds_csv = "";
    std::uint64_t seed = 1;
    bool seed_given = false;
    int n_labeled = 400, n_unlabeled = 2000, image_size = 32, example = 0;

    auto* label = app.add_subcommand("label", "label reports with the severity ruleset");
    label->add_option("--in", in, "reports.jsonl or a directory of .txt files")->required();
    label->add_option("--rules", rules, "'default' or a ruleset JSON path");
    label->add_option("--out", out, "output CSV path")->required();

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
    gen->add_option("--out", out, "output dataset directory")->required();
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--n-labeled", n_labeled, "labeled example count");
    gen->add_option("--n-unlabeled", n_unlabeled, "unlabeled example count");
    gen->add_option("--image-size", image_size, "square image size");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config, "train config JSON (defaults when omitted)");
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--out", ckpt, "checkpoint output path")->required();
    train->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_given = true; });

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
    eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--out", out, "report JSON path")->required();

    auto* explain = app.add_subcommand("explain", "export Grad-CAM and text saliency");
    explain->add_option("--ckpt", ckpt, "checkpoint path")->required();
    explain->add_option("--data", data, "dataset directory")->required();
    explain->add_option("--example", example, "example index")->required();
    explain->add_option("--out", out, "output directory")->required();

    auto* matrix = app.add_subcommand("matrix", "train/evaluate a variant comparison table");
    matrix->add_option("--config", config, "train config JSON");
    matrix->add_option("--data", data, "dataset directory")->required();
    matrix->add_option("--variants", variants, "comma-separated variant names")->required();
    matrix->add_option("--seeds", seeds_csv, "comma-separated seeds");
    matrix->add_option("--out", out, "output directory")->required();

    try {
        std::vector<std::string> argv(args.rbegin(), args.rend());
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (label->parsed()) return cmd_label(in, rules, out);
        if (gen->parsed()) return cmd_gen_data(out, seed, n_labeled, n_unlabeled, image_size);
        if (train->parsed())
            return cmd_train(config, data, ckpt,
                             seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (eval->parsed()) return cmd_eval(ckpt, data, out);
        if (explain->parsed()) return cmd_explain(ckpt, data, example, out);
        if (matrix->parsed()) return cmd_matrix(config, data, variants, seeds_csv, out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace edemajoint::cli
