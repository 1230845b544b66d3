// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any
// fails. `acceptance 6 8` runs only the listed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include <fmt/core.h>
#include <json.hpp>

#include "fd_check.hpp"
#include "hyperlab/experiment.hpp"
#include "hyperlab/io.hpp"
#include "hyperlab/rank_analysis.hpp"
#include "hyperlab/tasks.hpp"
#include "test_support.hpp"

using namespace hyperlab;
using namespace hyperlab::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Verdict()> run;
};

Matrix dense_forward(const Matrix& x, const Matrix& w, const std::optional<Vector>& bias) {
    Matrix y = naive_product(x, transpose(w));
    if (bias) {
        for (std::size_t r = 0; r < y.rows(); ++r) {
            for (std::size_t c = 0; c < y.cols(); ++c) {
                y(r, c) += (*bias)[c];
            }
        }
    }
    return y;
}

Model random_model(Rng& rng) {
    if (rng.index(2) == 0) {
        MlpSpec spec;
        spec.widths = {2 + rng.index(12), 2 + rng.index(12), 1 + rng.index(8)};
        spec.activation = rng.index(2) == 0 ? Activation::Gelu : Activation::Tanh;
        spec.bias = rng.index(2) == 0;
        return Model::init(spec, rng.next());
    }
    TransformerSpec spec;
    spec.vocab = 4 + rng.index(6);
    spec.d_model = 4 + rng.index(12);
    spec.n_layers = 1 + rng.index(2);
    spec.d_ff = 4 + rng.index(12);
    spec.max_seq = 2 + rng.index(6);
    return Model::init(spec, rng.next());
}

Dataset random_inputs(const Model& model, Rng& rng) {
    const std::size_t count = 1 + rng.index(4);
    if (const auto* tf = std::get_if<TransformerSpec>(&model.architecture())) {
        SequenceData d;
        d.count = count;
        d.len = 1 + rng.index(tf->max_seq);
        d.vocab = tf->vocab;
        for (std::size_t k = 0; k < count * d.len; ++k) {
            d.tokens.push_back(static_cast<int>(rng.index(tf->vocab)));
            d.targets.push_back(0);
        }
        return d;
    }
    const auto& mlp = std::get<MlpSpec>(model.architecture());
    return RegressionData{random_matrix(rng, count, mlp.widths.front()),
                          Matrix(count, mlp.widths.back())};
}

Matrix outputs(const Model& model, const Dataset& x) {
    if (const auto* seq = std::get_if<SequenceData>(&x)) {
        return model.logits(*seq);
    }
    return model.predict(std::get<RegressionData>(x).x);
}

Verdict rank_bound() {
    Rng rng(101);
    std::size_t violations = 0;
    std::size_t tight = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(47);
        const std::size_t m = 2 + rng.index(47);
        const std::size_t r = 1 + rng.index(std::min(n, m));
        const Matrix w0 = random_rank_matrix(rng, n, m, r);
        const RankBound res =
            verify_rank_bound(w0, random_vector(rng, n, 0.5, 2), random_vector(rng, m, 0.5, 2));
        violations += (res.holds && res.bound == std::min({2 * r, n, m})) ? 0 : 1;
        tight += res.rank_dw == res.bound ? 1 : 0;
    }
    return {violations == 0, fmt::format("1000 trials, {} violations, {} at the bound", violations, tight)};
}

Verdict identity_noop() {
    Rng rng(102);
    std::size_t mismatched = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Model base = random_model(rng);
        const AdapterKind kinds[] = {AdapterKind::hyper(), AdapterKind::lora(2), AdapterKind::full()};
        AdapterMap map;
        for (const auto& name : linear_layer_names(base.architecture())) {
            map[name] = kinds[rng.index(3)];
        }
        const Model tuned = base.adapted(map, AdapterOptions{}, rng.next());
        for (int probe = 0; probe < 5; ++probe) {
            const Dataset x = random_inputs(base, rng);
            mismatched += outputs(base, x) == outputs(tuned, x) ? 0 : 1;
        }
    }
    return {mismatched == 0, fmt::format("50 models x 5 inputs, {} not bitwise equal", mismatched)};
}

Verdict merge_equivalence() {
    Rng rng(103);
    const AdapterKind kinds[] = {AdapterKind::hyper(), AdapterKind::lora(1), AdapterKind::lora(4),
                                 AdapterKind::full()};
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const Model base = random_model(rng);
        AdapterMap map;
        for (const auto& name : linear_layer_names(base.architecture())) {
            map[name] = kinds[rng.index(4)];
        }
        AdapterOptions opts;
        opts.train_bias = rng.index(2) == 0;
        Model tuned = base.adapted(map, opts, rng.next());
        for (auto& slot : tuned.trainable_params()) {
            for (double& v : slot.values) {
                v = slot.identity_value + rng.normal(0.0, 0.3);
            }
        }
        const Model merged = tuned.merged();
        for (int probe = 0; probe < 100; ++probe) {
            const Dataset x = random_inputs(base, rng);
            worst = std::max(worst, rel_diff(outputs(merged, x), outputs(tuned, x)));
        }
        // Layer level: merged dense weight against an independent dense product.
        for (std::size_t l = 0; l < tuned.linear_count(); ++l) {
            const AdapterLayer& layer = tuned.linear(l);
            const Matrix x = random_matrix(rng, 3, layer.cols());
            worst = std::max(worst, rel_diff(layer.forward(x),
                                             dense_forward(x, layer.effective_weight(), layer.bias())));
        }
    }
    return {worst < 1e-12, fmt::format("40 models x 100 inputs, worst relative difference {:.3g}", worst)};
}

Verdict budgets() {
    std::size_t wrong = 0;
    for (std::size_t n = 1; n <= 64; ++n) {
        for (std::size_t m = 1; m <= 64; ++m) {
            wrong += trainable_count(AdapterKind::hyper(), n, m) == n + m ? 0 : 1;
            wrong += trainable_count(AdapterKind::full(), n, m) == n * m ? 0 : 1;
            for (std::size_t r = 1; r <= 64; r *= 2) {
                const std::size_t lora = trainable_count(AdapterKind::lora(r), n, m);
                wrong += lora == r * (n + m) ? 0 : 1;
                if (n == m) {
                    wrong += lora == r * trainable_count(AdapterKind::hyper(), n, m) ? 0 : 1;
                }
            }
            if (n % 9 == 1 && m % 13 == 1) {
                const Matrix w0(n, m, 0.5);
                for (const auto& kind : {AdapterKind::hyper(), AdapterKind::lora(3), AdapterKind::full()}) {
                    AdapterOptions opts;
                    opts.kind = kind;
                    wrong += AdapterLayer::make(w0, std::nullopt, opts).trainable_count() ==
                                     trainable_count(kind, n, m)
                                 ? 0
                                 : 1;
                }
            }
        }
    }
    return {wrong == 0, fmt::format("4096 shapes, r in 1..64, {} mismatches", wrong)};
}

Verdict gradients() {
    std::string failures;
    auto note = [&](const std::optional<std::string>& f) {
        if (f) {
            failures += (failures.empty() ? "" : "; ") + *f;
        }
    };
    note(layer_fd_failure(AdapterKind::hyper(), 201, 60));
    note(layer_fd_failure(AdapterKind::lora(3), 202, 60));
    note(layer_fd_failure(AdapterKind::full(), 203, 60));
    note(model_fd_failure(false, 204, 60));
    note(model_fd_failure(true, 205, 60));
    return {failures.empty(),
            failures.empty() ? "60 configs each: hyper, lora, full layers, mlp and transformer models"
                             : failures};
}

std::string teacher_config_text(const fs::path& out) {
    return R"({
  "model": {"kind": "mlp", "widths": [16, 16], "activation": "identity", "bias": false},
  "task": {"kind": "scaled_teacher", "n": 16, "m": 16, "n_train": 256, "n_eval": 256},
  "adapters": [{"kind": "hyper", "lr": 0.01}, {"kind": "lora", "r": 1, "lr": 0.01}],
  "train": {"batch_size": 64, "epochs": 500, "warmup_steps": 100, "schedule": "cosine"},
  "output_dir": ")" + out.generic_string() + R"(",
  "seeds": [0, 1, 2, 3, 4]
})";
}

struct TeacherCells {
    std::vector<double> hyper_mse, lora_mse, hyper_r_hat, lora_r_hat, hyper_mean, lora_mean;
};

const TeacherCells& teacher_runs() {
    static const TeacherCells cells = [] {
        const fs::path out = scratch_dir("acceptance_teacher");
        const std::string text = teacher_config_text(out);
        const RunOutcome run = run_experiment(parse_experiment_config(text), text);
        if (!run.ok()) {
            throw std::runtime_error("teacher run failed: " + run.failures.front());
        }
        TeacherCells c;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const std::string s = "seed_" + std::to_string(seed);
            auto eval = [&](const char* adapter) {
                return json::parse(read_file(out / adapter / s / "result.json")).at("eval_loss").get<double>();
            };
            auto ranks = [&](const char* adapter) {
                return json::parse(read_file(out / adapter / s / "rank.json"));
            };
            c.hyper_mse.push_back(eval("hyper"));
            c.lora_mse.push_back(eval("lora_1"));
            const json rh = ranks("hyper");
            const json rl = ranks("lora_1");
            c.hyper_r_hat.push_back(rh.at("layers").at(0).at("r_hat").get<double>());
            c.lora_r_hat.push_back(rl.at("layers").at(0).at("r_hat").get<double>());
            c.hyper_mean.push_back(rh.at("mean_r_hat").get<double>());
            c.lora_mean.push_back(rl.at("mean_r_hat").get<double>());
        }
        return c;
    }();
    return cells;
}

Verdict representability() {
    const TeacherCells& c = teacher_runs();
    bool pass = true;
    std::string detail;
    for (std::size_t s = 0; s < c.hyper_mse.size(); ++s) {
        pass = pass && c.hyper_mse[s] < 1e-6 && c.lora_mse[s] >= 10.0 * c.hyper_mse[s];
        detail += fmt::format("{}seed {}: hyper {:.2e} lora1 {:.2e}", s ? ", " : "", s, c.hyper_mse[s],
                              c.lora_mse[s]);
    }
    return {pass, "eval MSE " + detail};
}

Verdict rank_reproduction() {
    const TeacherCells& c = teacher_runs();
    bool pass = true;
    std::string detail;
    for (std::size_t s = 0; s < c.hyper_r_hat.size(); ++s) {
        pass = pass && c.hyper_r_hat[s] >= 0.9 && c.lora_r_hat[s] <= 2.0 / 16.0 &&
               c.hyper_mean[s] > c.lora_mean[s];
        detail += fmt::format("{}seed {}: {:.4g} vs {:.4g}", s ? ", " : "", s, c.hyper_r_hat[s],
                              c.lora_r_hat[s]);
    }
    return {pass, "r_hat hyper vs lora1 " + detail};
}

Verdict pretraining_dependence() {
    ModelSpec spec;
    spec.arch = TransformerSpec{8, 16, 1, 1, 32, 5};
    spec.adapter_map = uniform_adapter_map(spec.arch, AdapterKind::hyper());
    TaskSpec copy;
    copy.kind = TaskKind::SeqCopy;
    copy.vocab = 8;
    copy.seq_len = 5;
    copy.n_train = 2048;
    copy.n_eval = 256;
    TaskSpec sort = copy;
    sort.kind = TaskKind::SeqSort;
    AdaptConfigs configs;
    configs.pretrain.lr = 3e-3;
    configs.pretrain.batch_size = 32;
    configs.pretrain.epochs = 20;
    configs.pretrain.warmup_steps = 50;
    configs.adapt = configs.pretrain;
    configs.adapt.lr = 3e-2;
    configs.adapt.epochs = 40;
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TaskInstance pre = make_task(copy, derive_seed({seed, 1}));
        const TaskInstance post = make_task(sort, derive_seed({seed, 2}));
        configs.pretrain.seed = derive_seed({seed, 3});
        configs.adapt.seed = derive_seed({seed, 4});
        const PairedAdaptResult r = pretrain_then_adapt(spec, pre, post, configs, derive_seed({seed, 5}));
        const double with = *r.from_pretrained.eval_accuracy;
        const double without = *r.from_random.eval_accuracy;
        wins += with > without ? 1 : 0;
        detail += fmt::format("{}seed {}: copy {:.3f}, sort {:.3f} vs {:.3f} ({:+.3f})", seed ? ", " : "", seed,
                              *r.pretrain.eval_accuracy, with, without, with - without);
    }
    return {wins >= 4, fmt::format("{}/5 paired wins; {}", wins, detail)};
}

Verdict determinism() {
    std::string summaries[2];
    for (int k = 0; k < 2; ++k) {
        const fs::path out = scratch_dir("acceptance_determinism_" + std::to_string(k));
        const std::string text = teacher_config_text(out);
        RunOptions opts;
        opts.seeds = std::vector<std::uint64_t>{7, 8};
        opts.no_svg = true;
        run_experiment(parse_experiment_config(text), text, opts);
        summaries[k] = read_file(out / "summary.csv");
    }
    return {!summaries[0].empty() && summaries[0] == summaries[1],
            fmt::format("two runs, {} bytes, {}", summaries[0].size(),
                        summaries[0] == summaries[1] ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "rank bound", 60, rank_bound},
        {2, "identity no-op", 10, identity_noop},
        {3, "merge equivalence", 10, merge_equivalence},
        {4, "parameter budgets", 60, budgets},
        {5, "gradient correctness", 120, gradients},
        {6, "scaled teacher representability", 300, representability},
        {7, "normalized update rank", 300, rank_reproduction},
        {8, "pretraining dependence", 900, pretraining_dependence},
        {9, "summary determinism", 60, determinism},
    };
    std::set<int> only;
    for (int k = 1; k < argc; ++k) {
        only.insert(std::atoi(argv[k]));
    }
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.contains(c.id)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds <= c.budget_seconds;
        const bool pass = v.pass && in_time;
        failed += pass ? 0 : 1;
        fmt::print("{} criterion {}: {} ({}) [{:.1f}s of {:.0f}s{}]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                   v.detail, seconds, c.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
