// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

// hyperlab: run adapter comparisons and inspect, merge or rank-analyze their outputs.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/experiment.hpp"
#include "hyperlab/io.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;
constexpr int kIoExit = 4;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) {
            continue;
        }
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            throw hyperlab::ConfigError(fmt::format("--seeds: '{}' is not an integer", item));
        }
        seeds.push_back(v);
    }
    return seeds;
}

template <typename Fn>
int guarded(Fn&& fn) {
    using namespace hyperlab;
    try {
        return fn();
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kConfigExit;
    } catch (const StructuralError& e) {
        fmt::print(stderr, "structural error: {}\n", e.what());
        return kConfigExit;
    } catch (const NumericError& e) {
        fmt::print(stderr, "numeric failure at iteration {}: {}\n", e.iteration(), e.what());
        return kNumericExit;
    } catch (const ParseError& e) {
        fmt::print(stderr, "parse error at byte {}: {}\n", e.byte_offset(), e.what());
        return kIoExit;
    } catch (const IoError& e) {
        fmt::print(stderr, "i/o error: {}\n", e.what());
        return kIoExit;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(stderr, "i/o error: {}\n", e.what());
        return kIoExit;
    } catch (const DimensionError& e) {
        fmt::print(stderr, "structural error: {}\n", e.what());
        return kConfigExit;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diagonal-scaling adapter laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> output_dir;
    std::optional<std::string> seeds_text;
    std::optional<std::size_t> threads;
    bool no_svg = false;
    auto* run = app.add_subcommand("run", "Train every (adapter, seed) cell of an experiment");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--output", output_dir, "Override output_dir");
    run->add_option("--seeds", seeds_text, "Comma-separated seeds overriding the config");
    run->add_option("--threads", threads, "Worker threads (falls back to HYPERLAB_THREADS)");
    run->add_flag("--no-svg", no_svg, "Skip SVG rank charts");

    std::string checkpoint_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize an adapter checkpoint");
    inspect->add_option("checkpoint", checkpoint_path, "checkpoint.json")->required();

    std::string merge_ckpt;
    std::string merge_base;
    std::string merge_out;
    auto* merge = app.add_subcommand("merge", "Fold a checkpoint into dense base weights");
    merge->add_option("checkpoint", merge_ckpt, "checkpoint.json")->required();
    merge->add_option("base", merge_base, "Base weight directory")->required();
    merge->add_option("out", merge_out, "Output weight directory")->required();

    std::string before_dir;
    std::string after_dir;
    double threshold = hyperlab::kDefaultRankThreshold;
    std::optional<std::string> rank_out;
    auto* rank = app.add_subcommand("rank", "Normalized update rank between two weight directories");
    rank->add_option("before", before_dir, "Weights before tuning")->required();
    rank->add_option("after", after_dir, "Weights after tuning")->required();
    rank->add_option("--threshold", threshold, "Absolute singular-value cutoff");
    rank->add_option("--output", rank_out, "Directory for rank.json/csv/svg");
    rank->add_flag("--no-svg", no_svg, "Skip the SVG chart");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigExit;
    }

    using namespace hyperlab;
    if (*run) {
        return guarded([&] {
            const std::string text = read_file(config_path);
            const ExperimentConfig config = parse_experiment_config(text);
            RunOptions options;
            if (output_dir) {
                options.output_dir = *output_dir;
            }
            if (seeds_text) {
                options.seeds = parse_seed_list(*seeds_text);
            }
            options.threads = resolve_threads(threads);
            options.no_svg = no_svg;
            const RunOutcome outcome = run_experiment(config, text, options);
            if (!outcome.ok()) {
                for (const auto& f : outcome.failures) {
                    fmt::print(stderr, "failed: {}\n", f);
                }
                return kNumericExit;
            }
            std::cout << summary_csv(outcome.rows);
            fmt::print("results in {}\n", outcome.output_dir.string());
            return kOk;
        });
    }
    if (*inspect) {
        return guarded([&] {
            std::cout << inspect_checkpoint(read_file(checkpoint_path));
            return kOk;
        });
    }
    if (*merge) {
        return guarded([&] {
            merge_checkpoint(merge_ckpt, merge_base, merge_out);
            fmt::print("merged weights written to {}\n", merge_out);
            return kOk;
        });
    }
    return guarded([&] {
        const RankReport report = rank_between(before_dir, after_dir, threshold);
        if (rank_out) {
            const std::filesystem::path dir = *rank_out;
            write_file(dir / "rank.json", to_json(report).dump(1) + "\n");
            write_file(dir / "rank.csv", to_csv(report));
            if (!no_svg) {
                write_file(dir / "rank.svg", to_svg(report));
            }
        }
        std::cout << to_csv(report);
        for (const auto& w : report.warnings) {
            fmt::print(stderr, "warning: {}\n", w);
        }
        return kOk;
    });
}
