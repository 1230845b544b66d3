// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/rng.hpp"
#include "hyperlab/svd.hpp"

namespace hyperlab {

namespace {

enum Stream : std::uint64_t { kBase = 1, kTeacher, kTrain, kEval, kNoise };

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = rng.normal(0.0, stddev);
    }
    return m;
}

Matrix full_rank_base(std::size_t n, std::size_t m, std::uint64_t seed) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(m));
    for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
        Rng rng(derive_seed({seed, kBase, attempt}));
        Matrix w0 = gaussian(rng, n, m, stddev);
        if (exact_rank(w0) == std::min(n, m)) {
            return w0;
        }
    }
    throw NumericError("could not draw a full-rank base weight", 16);
}

RegressionData sample_pairs(const Matrix& teacher, std::size_t count, std::uint64_t seed,
                            Stream stream, double noise_std) {
    Rng rng(derive_seed({seed, stream}));
    Matrix x = gaussian(rng, count, teacher.cols(), 1.0);
    Matrix y = matmul_nt(x, teacher);
    if (noise_std > 0.0) {
        Rng noise(derive_seed({seed, stream, kNoise}));
        for (double& v : y.values()) {
            v += noise.normal(0.0, noise_std);
        }
    }
    return {std::move(x), std::move(y)};
}

double hyper_mse(const Matrix& w0, const Vector& a, const Vector& b, const RegressionData& data) {
    const Matrix pred = matmul_nt(data.x, scale_rows_cols(w0, a, b));
    double total = 0.0;
    auto p = pred.values();
    auto t = data.y.values();
    for (std::size_t k = 0; k < p.size(); ++k) {
        total += (p[k] - t[k]) * (p[k] - t[k]);
    }
    return total / static_cast<double>(p.size());
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::ScaledTeacher:
        return "scaled_teacher";
    case TaskKind::LowRankTeacher:
        return "lowrank_teacher";
    case TaskKind::SeqCopy:
        return "seq_copy";
    case TaskKind::SeqSort:
        return "seq_sort";
    }
    return "scaled_teacher";
}

TaskKind parse_task_kind(const std::string& name) {
    for (TaskKind k : {TaskKind::ScaledTeacher, TaskKind::LowRankTeacher, TaskKind::SeqCopy,
                       TaskKind::SeqSort}) {
        if (task_kind_name(k) == name) {
            return k;
        }
    }
    throw ConfigError(fmt::format("unknown task kind '{}'", name));
}

TeacherTask make_scaled_teacher(std::size_t n, std::size_t m, std::uint64_t seed,
                                std::size_t n_train, std::size_t n_eval, double noise_std) {
    if (n < 2 || m < 2) {
        throw ConfigError("scaled teacher needs n, m >= 2");
    }
    TeacherTask task;
    task.w0 = full_rank_base(n, m, seed);
    Rng rng(derive_seed({seed, kTeacher}));
    const double lo = std::log(0.5);
    const double hi = std::log(2.0);
    task.a_star = Vector(n);
    task.b_star = Vector(m);
    for (double& v : task.a_star.values()) {
        v = std::exp(rng.uniform(lo, hi));
    }
    for (double& v : task.b_star.values()) {
        v = std::exp(rng.uniform(lo, hi));
    }
    task.teacher = scale_rows_cols(task.w0, task.a_star, task.b_star);
    task.train = sample_pairs(task.teacher, n_train, seed, kTrain, noise_std);
    task.eval = sample_pairs(task.teacher, n_eval, seed, kEval, noise_std);
    return task;
}

TeacherTask make_lowrank_teacher(std::size_t n, std::size_t m, std::size_t r_true,
                                 std::uint64_t seed, std::size_t n_train, std::size_t n_eval,
                                 double noise_std) {
    if (n < 2 || m < 2 || r_true >= std::min(n, m)) {
        throw ConfigError("low-rank teacher needs n, m >= 2 and r_true < min(n, m)");
    }
    TeacherTask task;
    task.w0 = full_rank_base(n, m, seed);
    Rng rng(derive_seed({seed, kTeacher}));
    task.b_factor = gaussian(rng, n, r_true,
                             r_true == 0 ? 0.0 : 0.5 / std::sqrt(static_cast<double>(r_true)));
    task.a_factor = gaussian(rng, r_true, m, 1.0 / std::sqrt(static_cast<double>(m)));
    task.teacher = r_true == 0 ? task.w0 : add(task.w0, matmul(task.b_factor, task.a_factor));
    task.train = sample_pairs(task.teacher, n_train, seed, kTrain, noise_std);
    task.eval = sample_pairs(task.teacher, n_eval, seed, kEval, noise_std);
    return task;
}

SequenceData make_seq_task(TaskKind kind, std::size_t vocab, std::size_t seq_len,
                           std::size_t n_examples, std::uint64_t seed,
                           const SequenceData* exclude) {
    if (kind != TaskKind::SeqCopy && kind != TaskKind::SeqSort) {
        throw ConfigError("make_seq_task needs seq_copy or seq_sort");
    }
    if (vocab < 4 || seq_len < 2) {
        throw ConfigError("sequence tasks need vocab >= 4 and seq_len >= 2");
    }
    std::set<std::vector<int>> banned;
    if (exclude) {
        for (std::size_t i = 0; i < exclude->size(); ++i) {
            auto s = exclude->sequence(i);
            banned.emplace(s.begin(), s.end());
        }
    }
    const double space = std::pow(static_cast<double>(vocab), static_cast<double>(seq_len));
    if (n_examples > 0 && static_cast<double>(banned.size()) >= space) {
        throw ConfigError("every sequence is excluded; the disjoint split is empty");
    }
    SequenceData out;
    out.count = n_examples;
    out.len = seq_len;
    out.vocab = vocab;
    Rng rng(seed);
    std::vector<int> seq(seq_len);
    for (std::size_t i = 0; i < n_examples; ++i) {
        do {
            for (int& t : seq) {
                t = static_cast<int>(rng.index(vocab));
            }
        } while (!banned.empty() && banned.contains(seq));
        out.tokens.insert(out.tokens.end(), seq.begin(), seq.end());
        std::vector<int> target = seq;
        if (kind == TaskKind::SeqSort) {
            std::sort(target.begin(), target.end());
        }
        out.targets.insert(out.targets.end(), target.begin(), target.end());
    }
    return out;
}

TaskInstance make_task(const TaskSpec& spec, std::uint64_t seed) {
    TaskInstance inst;
    inst.spec = spec;
    switch (spec.kind) {
    case TaskKind::ScaledTeacher:
    case TaskKind::LowRankTeacher: {
        TeacherTask t = spec.kind == TaskKind::ScaledTeacher
                            ? make_scaled_teacher(spec.n, spec.m, seed, spec.n_train, spec.n_eval,
                                                  spec.noise_std)
                            : make_lowrank_teacher(spec.n, spec.m, spec.r_true, seed, spec.n_train,
                                                   spec.n_eval, spec.noise_std);
        inst.train = t.train;
        inst.eval = t.eval;
        inst.teacher = std::move(t);
        return inst;
    }
    case TaskKind::SeqCopy:
    case TaskKind::SeqSort: {
        SequenceData train = make_seq_task(spec.kind, spec.vocab, spec.seq_len, spec.n_train,
                                           derive_seed({seed, kTrain}));
        SequenceData eval = make_seq_task(spec.kind, spec.vocab, spec.seq_len, spec.n_eval,
                                          derive_seed({seed, kEval}), &train);
        inst.train = std::move(train);
        inst.eval = std::move(eval);
        return inst;
    }
    }
    throw std::logic_error("unhandled task kind");
}

HyperFit fit_hyper_alternating(const Matrix& w0, const RegressionData& data,
                               std::size_t max_iterations, double tolerance) {
    const std::size_t n = w0.rows();
    const std::size_t m = w0.cols();
    if (data.x.cols() != m || data.y.cols() != n) {
        throw DimensionError("fit_hyper_alternating: data does not match the base weight");
    }
    HyperFit fit{Vector(n, 1.0), Vector(m, 1.0), 0.0, 0};
    const Matrix xtx = matmul_tn(data.x, data.x);  // m x m
    const Matrix xty = matmul_tn(data.x, data.y);  // m x n
    double previous = hyper_mse(w0, fit.a, fit.b, data);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        // Rows decouple once b is fixed: a_i is a scalar least-squares fit.
        Matrix wb = scale_rows_cols(w0, Vector(n, 1.0), fit.b);
        const Matrix z = matmul_nt(data.x, wb);  // N x n
        for (std::size_t i = 0; i < n; ++i) {
            double num = 0.0;
            double den = 0.0;
            for (std::size_t k = 0; k < z.rows(); ++k) {
                num += z(k, i) * data.y(k, i);
                den += z(k, i) * z(k, i);
            }
            if (den > 0.0) {
                fit.a[i] = num / den;
            }
        }
        // With a fixed, b solves (XᵀX ∘ W0ᵀ diag(a²) W0) b = diag(W0ᵀ diag(a) XᵀY).
        Matrix gram(m, m);
        std::vector<double> rhs(m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double a2 = fit.a[i] * fit.a[i];
            for (std::size_t j = 0; j < m; ++j) {
                rhs[j] += fit.a[i] * w0(i, j) * xty(j, i);
                const double wij = a2 * w0(i, j);
                if (wij == 0.0) {
                    continue;
                }
                for (std::size_t l = 0; l < m; ++l) {
                    gram(j, l) += wij * w0(i, l);
                }
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t l = 0; l < m; ++l) {
                gram(j, l) *= xtx(j, l);
            }
        }
        fit.b = Vector(solve_linear(std::move(gram), std::move(rhs)));
        fit.iterations = it + 1;
        const double current = hyper_mse(w0, fit.a, fit.b, data);
        fit.mse = current;
        if (previous - current <= tolerance * std::max(previous, 1e-300)) {
            break;
        }
        previous = current;
    }
    return fit;
}

void ModelSpec::validate() const {
    const auto names = linear_layer_names(arch);
    if (adapter_map.size() != names.size()) {
        throw ConfigError(fmt::format("adapter map has {} entries, model has {} linear layers",
                                      adapter_map.size(), names.size()));
    }
    for (const auto& name : names) {
        if (!adapter_map.contains(name)) {
            throw ConfigError(fmt::format("adapter map lacks layer '{}'", name));
        }
    }
}

PairedAdaptResult pretrain_then_adapt(const ModelSpec& spec, const TaskInstance& pretrain_task,
                                      const TaskInstance& adapt_task, const AdaptConfigs& configs,
                                      std::uint64_t init_seed) {
    spec.validate();
    const Model base = Model::init(spec.arch, init_seed);

    PairedAdaptResult out;
    Model pretrained = base.adapted(uniform_adapter_map(spec.arch, AdapterKind::full(),
                                                        AdapterKind::full()));
    pretrained.set_aux_trainable(true);
    out.pretrain = train(pretrained, pretrain_task.train, configs.pretrain, &pretrain_task.eval);

    Model from_pretrained = pretrained.adapted(spec.adapter_map, configs.options, init_seed);
    out.from_pretrained =
        train(from_pretrained, adapt_task.train, configs.adapt, &adapt_task.eval);

    Model from_random = base.adapted(spec.adapter_map, configs.options, init_seed);
    out.from_random = train(from_random, adapt_task.train, configs.adapt, &adapt_task.eval);
    return out;
}

}  // namespace hyperlab
