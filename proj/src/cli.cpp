#include "hqnn/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hqnn/checkpoint.hpp"
#include "hqnn/dataio.hpp"
#include "hqnn/errors.hpp"
#include "hqnn/log.hpp"
#include "hqnn/train.hpp"
#include "hqnn/version.hpp"

namespace hqnn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum class Command { train, eval, sweep, synth, report };

struct CliConfig {
    Command command = Command::train;
    std::string model = "nn4eo-v1";
    bool quantum = false;
    std::string manifest;
    std::size_t synthetic = 0; // samples per class; 0 = use manifest
    std::uint64_t data_seed = 42;
    std::string classes = "0,1";
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> split_seed;
    std::vector<std::uint64_t> seeds; // sweep; empty = default list
    std::size_t epochs = 20;
    double lr = 1e-4;
    std::string backend = "analytic";
    std::uint64_t shots = 1024;
    std::size_t jobs = 1;
    std::string output;
    std::string checkpoint;
    std::size_t synth_n = 100; // synth command
    std::string out_dir = "synthetic_data";
    std::vector<std::string> inputs; // report command
};

std::string display_name(const models::ModelSpec& spec) {
    std::string base;
    switch (spec.family) {
        case models::Family::nn4eo_v1: base = "NN4EOv1"; break;
        case models::Family::nn4eo_v2: base = "NN4EOv2"; break;
        case models::Family::nn4eo_v3: base = "NN4EOv3"; break;
        case models::Family::vit: base = "ViT"; break;
    }
    if (!spec.quantum_head) return base;
    return spec.family == models::Family::vit ? "HQViT" : "HQ" + base;
}

std::string canonical_family(const std::string& flag) {
    std::string s = flag;
    for (char& c : s)
        if (c == '-') c = '_';
    return s;
}

dataio::PairTask parse_classes(const std::string& spec) {
    const std::size_t comma = spec.find(',');
    if (comma == std::string::npos)
        throw ValidationError("classes must be 'a,b', got '" + spec + "'");
    int a = 0, b = 0;
    try {
        a = std::stoi(spec.substr(0, comma));
        b = std::stoi(spec.substr(comma + 1));
    } catch (const std::exception&) {
        throw ValidationError("classes must be two integers, got '" + spec +
                              "'");
    }
    if (a == b) throw ValidationError("classes must differ, got '" + spec + "'");
    if (a > b) std::swap(a, b);
    return dataio::make_pair(a, b);
}

models::ModelSpec model_spec_from(const CliConfig& cfg) {
    return models::ModelSpec::preset(
        models::family_from_name(canonical_family(cfg.model)), cfg.quantum);
}

qsim::QuantumBackend backend_from(const CliConfig& cfg) {
    if (cfg.backend == "analytic") return qsim::analytic_backend();
    if (cfg.backend == "sampled")
        return qsim::sampled_backend(cfg.shots, cfg.seed);
    throw ValidationError("backend must be analytic or sampled, got '" +
                          cfg.backend + "'");
}

std::vector<dataio::LabeledSample> load_pair_samples(
    const CliConfig& cfg, const dataio::PairTask& pair) {
    std::vector<dataio::Sample> samples;
    if (cfg.synthetic > 0) {
        if (pair.class_a != 0 || pair.class_b != 1)
            throw ValidationError(
                "the synthetic dataset only provides classes 0 and 1");
        samples = dataio::gen_synthetic(cfg.synthetic, cfg.data_seed);
        log::info("generated " + std::to_string(samples.size()) +
                  " synthetic samples (seed " + std::to_string(cfg.data_seed) +
                  ")");
    } else {
        samples = dataio::load_samples(cfg.manifest);
        log::info("loaded " + std::to_string(samples.size()) +
                  " samples from " + cfg.manifest);
    }
    return dataio::build_pair_task(samples, pair.class_a, pair.class_b);
}

json record_to_json(const train::TrainRecord& r) {
    json j;
    j["seed"] = r.seed;
    j["train_loss"] = r.train_loss;
    j["val_accuracy"] = r.val_accuracy;
    j["best_epoch"] = r.best_epoch;
    j["best_val_accuracy"] = r.best_val_accuracy;
    j["checkpoint_path"] = r.checkpoint_path;
    return j;
}

train::TrainRecord record_from_json(const json& j) {
    train::TrainRecord r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    r.checkpoint_path = j.value("checkpoint_path", "");
    return r;
}

json sweep_to_json(const train::SweepReport& s) {
    json j;
    j["seeds"] = s.seeds;
    j["accuracies"] = s.accuracies;
    j["best_epochs"] = s.best_epochs;
    j["mean_accuracy"] = s.mean_accuracy;
    j["variance"] = s.variance;
    json records = json::array();
    for (const train::TrainRecord& r : s.records)
        records.push_back(record_to_json(r));
    j["records"] = records;
    return j;
}

json config_echo(const CliConfig& cfg, const char* command) {
    json j;
    j["command"] = command;
    j["model"] = canonical_family(cfg.model);
    j["quantum"] = cfg.quantum;
    j["classes"] = cfg.classes;
    if (cfg.synthetic > 0) {
        j["synthetic_per_class"] = cfg.synthetic;
        j["data_seed"] = cfg.data_seed;
    } else {
        j["manifest"] = cfg.manifest;
    }
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["backend"] = cfg.backend;
    if (cfg.backend == "sampled") j["shots"] = cfg.shots;
    if (cfg.split_seed) j["split_seed"] = *cfg.split_seed;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw FormatError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw FormatError("failed writing " + path.string());
}

void write_report_json(const fs::path& path, json payload, double seconds) {
    json meta;
    meta["toolkit_version"] = kVersion;
    meta["duration_seconds"] = seconds;
    payload["meta"] = meta;
    write_text(path, payload.dump(2) + "\n");
    log::info("wrote " + path.string());
}

std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string sweep_csv(const train::SweepReport& s) {
    std::string csv = "seed,acc,k_star\n";
    for (std::size_t i = 0; i < s.seeds.size(); ++i)
        csv += std::to_string(s.seeds[i]) + "," +
               format_acc(s.accuracies[i]) + "," +
               std::to_string(s.best_epochs[i]) + "\n";
    return csv;
}

double mean_of(const std::vector<std::size_t>& xs) {
    double m = 0.0;
    for (std::size_t x : xs) m += static_cast<double>(x);
    return m / static_cast<double>(xs.size());
}

int cmd_train(const CliConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const dataio::PairTask pair = parse_classes(cfg.classes);
    const std::vector<dataio::LabeledSample> samples =
        load_pair_samples(cfg, pair);

    train::TrainConfig tc;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.seed = cfg.seed;
    tc.split_seed = cfg.split_seed;
    tc.pair = pair;
    tc.model = model_spec_from(cfg);
    const fs::path out =
        cfg.output.empty() ? fs::path("train_record.json") : fs::path(cfg.output);
    tc.checkpoint_path = cfg.checkpoint.empty()
                             ? out.parent_path() / (out.stem().string() + ".ckpt")
                             : fs::path(cfg.checkpoint);

    const dataio::SplitDataset split = dataio::split_train_val(
        samples, train::kValFraction, cfg.split_seed.value_or(cfg.seed));
    const train::TrainRecord record = train::train(tc, split);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    json j;
    j["schema"] = "hqnn-report-v1";
    j["config"] = config_echo(cfg, "train");
    j["train_record"] = record_to_json(record);
    write_report_json(out, j, seconds);

    std::cout << display_name(tc.model) << " pair " << pair.name()
              << ": best val acc " << format_acc(record.best_val_accuracy)
              << "% at epoch " << record.best_epoch << " of " << cfg.epochs
              << "\n";
    return 0;
}

int cmd_eval(const CliConfig& cfg) {
    if (cfg.checkpoint.empty())
        throw ValidationError("eval needs --checkpoint");
    const dataio::PairTask pair = parse_classes(cfg.classes);
    const models::Model model = train::load_checkpoint(cfg.checkpoint);
    const std::vector<dataio::LabeledSample> samples =
        load_pair_samples(cfg, pair);
    const double acc =
        train::evaluate_accuracy(model, samples, backend_from(cfg));
    std::cout << display_name(model.spec) << " pair " << pair.name() << ": "
              << format_acc(acc) << "% over " << samples.size()
              << " samples (" << cfg.backend << " backend)\n";
    if (!cfg.output.empty()) {
        json j;
        j["schema"] = "hqnn-report-v1";
        j["config"] = config_echo(cfg, "eval");
        j["accuracy"] = acc;
        j["n_samples"] = samples.size();
        write_report_json(cfg.output, j, 0.0);
    }
    return 0;
}

int cmd_sweep(const CliConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const dataio::PairTask pair = parse_classes(cfg.classes);
    std::vector<std::uint64_t> seeds =
        cfg.seeds.empty() ? train::kDefaultSeeds : cfg.seeds;
    {
        std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size())
            throw ValidationError("seed list contains duplicates");
    }
    const std::vector<dataio::LabeledSample> samples =
        load_pair_samples(cfg, pair);

    train::TrainConfig base;
    base.lr = cfg.lr;
    base.epochs = cfg.epochs;
    base.split_seed = cfg.split_seed;
    base.pair = pair;
    base.model = model_spec_from(cfg);
    if (!cfg.checkpoint.empty()) base.checkpoint_path = cfg.checkpoint;

    const train::SweepReport report =
        train::seed_sweep(base, samples, seeds, cfg.jobs);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    const fs::path out =
        cfg.output.empty() ? fs::path("sweep_report.json") : fs::path(cfg.output);
    json j;
    j["schema"] = "hqnn-report-v1";
    j["config"] = config_echo(cfg, "sweep");
    j["sweep_report"] = sweep_to_json(report);
    write_report_json(out, j, seconds);
    fs::path csv_path = out;
    csv_path.replace_extension(".csv");
    write_text(csv_path, sweep_csv(report));
    log::info("wrote " + csv_path.string());

    std::cout << "model,pair,mean_acc,variance,mean_k_star\n"
              << display_name(base.model) << "," << pair.name() << ","
              << format_acc(report.mean_accuracy) << ","
              << format_acc(report.variance) << ","
              << format_acc(mean_of(report.best_epochs)) << "\n";
    return 0;
}

int cmd_synth(const CliConfig& cfg) {
    const fs::path dir = cfg.out_dir;
    const std::vector<dataio::Sample> samples =
        dataio::gen_synthetic(cfg.synth_n, cfg.data_seed);
    fs::create_directories(dir / "class0");
    fs::create_directories(dir / "class1");
    std::string manifest = "path,label\n";
    std::size_t counter[2] = {0, 0};
    for (const dataio::Sample& s : samples) {
        char rel[64];
        std::snprintf(rel, sizeof(rel), "class%d/%04zu.png", s.class_id,
                      counter[s.class_id]++);
        dataio::encode_image_rgb(dir / rel, s.pixels);
        manifest += std::string(rel) + "," + std::to_string(s.class_id) + "\n";
    }
    write_text(dir / "manifest.csv", manifest);
    std::cout << "wrote " << samples.size() << " images and manifest.csv to "
              << dir.string() << "\n";
    return 0;
}

int cmd_report(const CliConfig& cfg) {
    if (cfg.inputs.empty())
        throw ValidationError("report needs at least one JSON input");
    std::string csv = "model,mean_acc,variance,mean_k_star,n_seeds\n";
    std::string text;
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s %12s %12s %10s %8s\n", "model",
                  "mean_acc", "variance", "mean_k*", "seeds");
    text += line;
    for (const std::string& in_path : cfg.inputs) {
        std::ifstream in(in_path);
        if (!in) throw FormatError("cannot open report " + in_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw FormatError("invalid JSON in " + in_path + ": " + e.what());
        }
        if (!j.contains("config"))
            throw FormatError(in_path + " is not a toolkit report (no config)");
        const std::string model = j["config"].value("model", "?");
        const bool quantum = j["config"].value("quantum", false);
        models::ModelSpec spec =
            models::ModelSpec::preset(models::family_from_name(model), quantum);
        const std::string name = display_name(spec);
        double mean = 0.0, var = 0.0, kstar = 0.0;
        std::size_t n = 0;
        if (j.contains("sweep_report")) {
            const json& s = j["sweep_report"];
            const auto acc = s.at("accuracies").get<std::vector<double>>();
            const auto ks = s.at("best_epochs").get<std::vector<std::size_t>>();
            const auto [m, v] = train::variance_stats(acc);
            mean = m;
            var = v;
            kstar = mean_of(ks);
            n = acc.size();
        } else if (j.contains("train_record")) {
            const train::TrainRecord r = record_from_json(j["train_record"]);
            mean = r.best_val_accuracy;
            var = 0.0;
            kstar = static_cast<double>(r.best_epoch);
            n = 1;
        } else {
            throw FormatError(in_path + " holds neither a train record nor a "
                                        "sweep report");
        }
        csv += name + "," + format_acc(mean) + "," + format_acc(var) + "," +
               format_acc(kstar) + "," + std::to_string(n) + "\n";
        std::snprintf(line, sizeof(line), "%-12s %12.6f %12.6f %10.3f %8zu\n",
                      name.c_str(), mean, var, kstar, n);
        text += line;
    }
    std::cout << text;
    if (!cfg.output.empty()) {
        write_text(cfg.output, csv);
        log::info("wrote " + cfg.output);
    }
    return 0;
}

void add_data_flags(CLI::App* cmd, CliConfig& cfg) {
    cmd->add_option("--manifest", cfg.manifest,
                    "CSV manifest (header path,label) resolving PNGs");
    cmd->add_option("--synthetic", cfg.synthetic,
                    "use N generated samples per class instead of a manifest");
    cmd->add_option("--data-seed", cfg.data_seed,
                    "seed for the synthetic generator")
        ->capture_default_str();
    cmd->add_option("--classes", cfg.classes, "binary pair as 'a,b'")
        ->capture_default_str();
}

void add_model_flags(CLI::App* cmd, CliConfig& cfg) {
    cmd->add_option("--model", cfg.model,
                    "nn4eo-v1 | nn4eo-v2 | nn4eo-v3 | vit")
        ->capture_default_str();
    cmd->add_flag("--quantum", cfg.quantum,
                  "use the single-qubit head instead of sigmoid");
}

} // namespace

int run(int argc, const char* const* argv) {
    CliConfig cfg;
    CLI::App app{"hybrid quantum-classical binary classifiers for 64x64 RGB "
                 "imagery"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CLI::App* train_cmd =
        app.add_subcommand("train", "train one model on one class pair");
    add_model_flags(train_cmd, cfg);
    add_data_flags(train_cmd, cfg);
    train_cmd->add_option("--seed", cfg.seed, "master seed for the run")
        ->capture_default_str();
    train_cmd->add_option("--split-seed", cfg.split_seed,
                          "pin the train/val split separately from --seed");
    train_cmd->add_option("--epochs", cfg.epochs, "training epochs")
        ->capture_default_str();
    train_cmd->add_option("--lr", cfg.lr, "Adam learning rate")
        ->capture_default_str();
    train_cmd->add_option("--output", cfg.output,
                          "record JSON path (default train_record.json)");
    train_cmd->add_option("--checkpoint", cfg.checkpoint,
                          "best-model checkpoint path");

    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate a checkpoint on labeled data");
    add_data_flags(eval_cmd, cfg);
    eval_cmd->add_option("--checkpoint", cfg.checkpoint,
                         "checkpoint produced by train/sweep")
        ->required();
    eval_cmd->add_option("--backend", cfg.backend, "analytic | sampled")
        ->capture_default_str();
    eval_cmd->add_option("--shots", cfg.shots,
                         "shots per sample for the sampled backend")
        ->capture_default_str();
    eval_cmd->add_option("--seed", cfg.seed, "base seed for sampled draws")
        ->capture_default_str();
    eval_cmd->add_option("--output", cfg.output, "optional result JSON path");

    CLI::App* sweep_cmd = app.add_subcommand(
        "sweep", "train across a seed list and report stability stats");
    add_model_flags(sweep_cmd, cfg);
    add_data_flags(sweep_cmd, cfg);
    sweep_cmd
        ->add_option("--seeds", cfg.seeds,
                     "comma-separated seed list (default: the 10-seed "
                     "benchmark list)")
        ->delimiter(',');
    sweep_cmd->add_option("--split-seed", cfg.split_seed,
                          "pin one split for every run");
    sweep_cmd->add_option("--epochs", cfg.epochs, "training epochs")
        ->capture_default_str();
    sweep_cmd->add_option("--lr", cfg.lr, "Adam learning rate")
        ->capture_default_str();
    sweep_cmd->add_option("--jobs", cfg.jobs, "parallel training runs")
        ->capture_default_str();
    sweep_cmd->add_option("--output", cfg.output,
                          "report JSON path (default sweep_report.json); the "
                          "CSV lands next to it");
    sweep_cmd->add_option("--checkpoint", cfg.checkpoint,
                          "per-seed checkpoint path stem");

    CLI::App* synth_cmd = app.add_subcommand(
        "synth", "write the synthetic dataset as PNGs plus manifest");
    synth_cmd->add_option("--n", cfg.synth_n, "samples per class")
        ->capture_default_str();
    synth_cmd->add_option("--seed", cfg.data_seed, "generator seed")
        ->capture_default_str();
    synth_cmd->add_option("--out", cfg.out_dir, "output directory")
        ->capture_default_str();

    CLI::App* report_cmd = app.add_subcommand(
        "report", "summarize stored result JSONs into one table");
    report_cmd
        ->add_option("inputs", cfg.inputs, "train/sweep report JSON files")
        ->expected(-1);
    report_cmd->add_option("--output", cfg.output, "summary CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(cfg);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg);
        if (app.got_subcommand(sweep_cmd)) return cmd_sweep(cfg);
        if (app.got_subcommand(synth_cmd)) return cmd_synth(cfg);
        if (app.got_subcommand(report_cmd)) return cmd_report(cfg);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace hqnn::cli
