// SPDX-License-Identifier: Apache-2.0
//
// adamoe CLI: train / sweep / analyze / fit-costmodel.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adamoe/config.hpp"
#include "adamoe/cost_model.hpp"
#include "adamoe/data_io.hpp"
#include "adamoe/trainer.hpp"

namespace {

using namespace adamoe;
namespace fs = std::filesystem;

void apply_policy_override(RunConfig& cfg, const std::string& policy) {
    if (policy == "top1") cfg.policy.kind = GateKind::kTop1;
    else if (policy == "top2") cfg.policy.kind = GateKind::kTop2;
    else if (policy == "adaptive") cfg.policy.kind = GateKind::kAdaptive;
    else throw ConfigError("--policy must be top1, top2 or adaptive");
}

int cmd_train(const std::string& config_path, const std::string& output_dir,
              const std::string& policy, double threshold, int epochs, long seed) {
    RunConfig cfg = load_run_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!policy.empty()) apply_policy_override(cfg, policy);
    if (threshold >= 0.0) cfg.policy.threshold = threshold;
    if (epochs >= 0) cfg.epochs = epochs;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.validate();

    TrainResult r = run_training(cfg);
    std::printf("run directory: %s\n", r.run_dir.c_str());
    std::printf("steps: %ld (%ld per epoch)\n", r.total_steps, r.steps_per_epoch);
    std::printf("final train loss: %s\n", format_double(r.final_train_loss).c_str());
    if (r.final_val_loss) {
        std::printf("final val loss: %s\n", format_double(*r.final_val_loss).c_str());
    }
    std::printf("mean frac_top1: %s  (norm compute %s)\n",
                format_double(r.mean_frac_top1).c_str(),
                format_double(normalized_compute(r.mean_frac_top1)).c_str());
    std::printf("total expert FLOPs: %s\n", format_double(r.total_expert_flops).c_str());
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& thresholds_arg,
              const std::string& output_dir) {
    RunConfig base = load_run_config(config_path);
    if (!output_dir.empty()) base.output_dir = output_dir;

    std::vector<double> thresholds;
    std::stringstream ss(thresholds_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            thresholds.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("--thresholds: \"" + item + "\" is not a number");
        }
    }
    if (thresholds.empty()) throw ConfigError("--thresholds: need at least one value");

    fs::create_directories(base.output_dir);
    std::string table_path = (fs::path(base.output_dir) / "sweep.csv").string();
    std::ofstream table(table_path, std::ios::binary);
    if (!table) throw std::runtime_error("cannot write " + table_path);
    table << "threshold,final_train_loss,final_val_loss,mean_frac_top1,mean_frac_top2,"
             "norm_compute\n";
    std::printf("%10s %18s %16s %14s %14s %12s\n", "threshold", "final_train_loss",
                "final_val_loss", "mean_frac_top1", "mean_frac_top2", "norm_compute");

    for (double t : thresholds) {
        RunConfig cfg = base;  // shared seed: T is the only varying factor
        cfg.policy.kind = GateKind::kAdaptive;
        cfg.policy.threshold = t;
        std::ostringstream dir;
        dir << "T_" << format_double(t);
        cfg.output_dir = (fs::path(base.output_dir) / dir.str()).string();
        cfg.validate();
        TrainResult r = run_training(cfg);
        double nc = normalized_compute(r.mean_frac_top1);
        std::string val = r.final_val_loss ? format_double(*r.final_val_loss) : "";
        table << format_double(t) << "," << format_double(r.final_train_loss) << ","
              << val << "," << format_double(r.mean_frac_top1) << ","
              << format_double(r.mean_frac_top2) << "," << format_double(nc) << "\n";
        std::printf("%10.4g %18.6f %16s %14.6f %14.6f %12.6f\n", t, r.final_train_loss,
                    val.empty() ? "-" : val.c_str(), r.mean_frac_top1, r.mean_frac_top2,
                    nc);
    }
    std::printf("sweep table: %s\n", table_path.c_str());
    return 0;
}

int cmd_analyze(const std::string& run_dir) {
    std::string metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    if (!fs::exists(metrics_path)) {
        throw std::runtime_error("missing metrics file: expected " + metrics_path);
    }
    std::vector<StepMetrics> records = parse_metrics_csv(metrics_path);
    if (records.empty()) {
        std::printf("no steps recorded in %s\n", metrics_path.c_str());
        return 0;
    }
    int layers = static_cast<int>(records[0].per_layer_top2.size());

    // plot-ready per-step percentages
    std::string out_path = (fs::path(run_dir) / "analysis.csv").string();
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << "step,epoch";
    for (int L = 0; L < layers; ++L) out << ",top2_pct_layer" << L;
    out << "\n";
    for (const StepMetrics& m : records) {
        out << m.step << "," << m.epoch;
        for (int L = 0; L < layers; ++L) {
            out << "," << format_double(100.0 * m.per_layer_top2[static_cast<std::size_t>(L)]);
        }
        out << "\n";
    }

    // epoch means
    std::map<int, std::pair<long, std::vector<double>>> by_epoch;
    for (const StepMetrics& m : records) {
        auto& [count, sums] = by_epoch[m.epoch];
        sums.resize(static_cast<std::size_t>(layers), 0.0);
        ++count;
        for (int L = 0; L < layers; ++L)
            sums[static_cast<std::size_t>(L)] += m.per_layer_top2[static_cast<std::size_t>(L)];
    }
    std::printf("top-2 token percentage per layer (epoch means)\n");
    std::printf("%6s", "epoch");
    for (int L = 0; L < layers; ++L) std::printf("  layer%-3d", L);
    std::printf("\n");
    for (const auto& [epoch, data] : by_epoch) {
        std::printf("%6d", epoch);
        for (int L = 0; L < layers; ++L) {
            std::printf("  %8.3f",
                        100.0 * data.second[static_cast<std::size_t>(L)] /
                            static_cast<double>(data.first));
        }
        std::printf("\n");
    }

    // cross-check against stored per-token decisions when present
    std::string decisions_path = (fs::path(run_dir) / "decisions.csv").string();
    if (fs::exists(decisions_path)) {
        std::ifstream din(decisions_path, std::ios::binary);
        std::string line;
        std::getline(din, line);  // header
        // recount: (step, layer) -> [top2, total]
        std::map<std::pair<long, int>, std::pair<long, long>> counts;
        while (std::getline(din, line)) {
            if (line.empty()) continue;
            std::stringstream ls(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ls, cell, ',')) cells.push_back(cell);
            long step = std::stol(cells[0]);
            int layer = std::stoi(cells[1]);
            bool is_top2 = cells[4] == "1";
            auto& [top2, total] = counts[{step, layer}];
            if (is_top2) ++top2;
            ++total;
        }
        long checked = 0;
        for (const StepMetrics& m : records) {
            for (int L = 0; L < layers; ++L) {
                auto it = counts.find({m.step, L});
                if (it == counts.end()) continue;
                double recount = static_cast<double>(it->second.first) /
                                 static_cast<double>(it->second.second);
                if (std::fabs(recount - m.per_layer_top2[static_cast<std::size_t>(L)]) >
                    1e-12) {
                    throw std::runtime_error(
                        "analysis mismatch: step " + std::to_string(m.step) + " layer " +
                        std::to_string(L) + " metrics says " +
                        format_double(m.per_layer_top2[static_cast<std::size_t>(L)]) +
                        " but decisions recount gives " + format_double(recount));
                }
                ++checked;
            }
        }
        std::printf("decision recount: %ld (step,layer) cells match metrics\n", checked);
    }
    std::printf("per-step percentages: %s\n", out_path.c_str());
    return 0;
}

int cmd_fit_costmodel() {
    const auto& pairs = reference_pairs();
    CostFit fit = fit_overhead_share(pairs);
    std::printf("overhead share (least squares): %s\n",
                format_double(fit.overhead_share).c_str());
    std::printf("%14s %12s %12s %12s\n", "norm_compute", "time(ref)", "time(model)",
                "residual");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        double modeled = pairs[i].norm_compute +
                         fit.overhead_share * (1.0 - pairs[i].norm_compute);
        std::printf("%14.4f %12.4f %12.4f %+12.5f\n", pairs[i].norm_compute,
                    pairs[i].norm_time, modeled, fit.residuals[i]);
    }
    std::printf("max |residual|: %s\n", format_double(fit.max_abs_residual).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive-gating mixture-of-experts training engine"};
    app.require_subcommand(1);

    std::string config_path, output_dir, policy, thresholds, run_dir;
    double threshold = -1.0;
    int epochs = -1;
    long seed = -1;

    CLI::App* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "config file (JSON)")->required();
    train->add_option("--output-dir", output_dir, "override output_dir");
    train->add_option("--policy", policy, "override routing policy (top1|top2|adaptive)");
    train->add_option("--threshold", threshold, "override adaptive threshold");
    train->add_option("--epochs", epochs, "override epoch count");
    train->add_option("--seed", seed, "override seed");

    CLI::App* sweep = app.add_subcommand("sweep", "train once per threshold, shared seed");
    sweep->add_option("--config", config_path, "config file (JSON)")->required();
    sweep->add_option("--thresholds", thresholds, "comma-separated thresholds")->required();
    sweep->add_option("--output-dir", output_dir, "override output_dir");

    CLI::App* analyze = app.add_subcommand("analyze", "per-layer top-2 report for a run");
    analyze->add_option("--run", run_dir, "run directory")->required();

    app.add_subcommand("fit-costmodel", "fit the step-time overhead share");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("train")) {
            return cmd_train(config_path, output_dir, policy, threshold, epochs, seed);
        }
        if (app.got_subcommand("sweep")) {
            return cmd_sweep(config_path, thresholds, output_dir);
        }
        if (app.got_subcommand("analyze")) {
            return cmd_analyze(run_dir);
        }
        return cmd_fit_costmodel();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
