// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/svd.hpp"
#include "hyperlab/tasks.hpp"
#include "test_support.hpp"

using namespace hyperlab;
using namespace hyperlab::testing;

namespace {

Model teacher_base(const TeacherTask& task) {
    const Architecture arch = MlpSpec{{task.w0.cols(), task.w0.rows()}};
    return Model(arch, {"fc0"}, {AdapterLayer(FrozenLinear(task.w0))}, {});
}

TrainConfig teacher_config(double lr, std::size_t steps) {
    TrainConfig c;
    c.lr = lr;
    c.batch_size = 64;
    c.warmup_steps = 100;
    c.epochs = steps / 4;  // 256 examples, 4 steps per epoch
    c.seed = 1;
    return c;
}

double train_mse(const TeacherTask& task, AdapterKind kind, double lr, std::size_t steps,
                 Model* out = nullptr) {
    Model m = teacher_base(task).adapted(uniform_adapter_map(MlpSpec{{task.w0.cols(), task.w0.rows()}}, kind));
    const TrainResult r = train(m, task.train, teacher_config(lr, steps));
    if (out) {
        *out = m;
    }
    return r.final_loss;
}

// Lower Cholesky factor of a symmetric positive definite matrix.
Matrix cholesky(const Matrix& s) {
    const std::size_t n = s.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = s(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                acc -= l(i, k) * l(j, k);
            }
            l(i, j) = i == j ? std::sqrt(acc) : acc / l(j, j);
        }
    }
    return l;
}

// Smallest training MSE any W0 + (rank-k update) can reach: with Σ = XᵀX / N = L Lᵀ,
// MSE(W) = ‖(W - T) L‖² / n, so the optimum drops all but the top-k singular values of (T - W0) L.
double eckart_young_mse(const TeacherTask& task, std::size_t k) {
    const RegressionData& d = task.train;
    const Matrix sigma = scaled(naive_product(transpose(d.x), d.x), 1.0 / static_cast<double>(d.size()));
    const Matrix target = naive_product(subtract(task.teacher, task.w0), cholesky(sigma));
    const Spectrum s = svd_values(target);
    double tail = 0.0;
    for (std::size_t i = k; i < s.values.size(); ++i) {
        tail += s.values[i] * s.values[i];
    }
    return tail / static_cast<double>(task.w0.rows());
}

}  // namespace

TEST(SeqTask, CopyAndSortTargets) {
    for (TaskKind kind : {TaskKind::SeqCopy, TaskKind::SeqSort}) {
        const SequenceData d = make_seq_task(kind, 4, 3, 2000, 5);
        bool saw_example = false;
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::vector<int> seq(d.sequence(i).begin(), d.sequence(i).end());
            std::vector<int> tgt(d.target(i).begin(), d.target(i).end());
            std::vector<int> expected = seq;
            if (kind == TaskKind::SeqSort) {
                std::sort(expected.begin(), expected.end());
            }
            ASSERT_EQ(tgt, expected);
            if (seq == std::vector<int>{3, 1, 2}) {
                saw_example = true;
                EXPECT_EQ(tgt, kind == TaskKind::SeqSort ? (std::vector<int>{1, 2, 3})
                                                         : (std::vector<int>{3, 1, 2}));
            }
            for (int t : seq) {
                ASSERT_GE(t, 0);
                ASSERT_LT(t, 4);
            }
        }
        EXPECT_TRUE(saw_example);
    }
}

TEST(SeqTask, DeterministicAndDisjointSplits) {
    TaskSpec spec;
    spec.kind = TaskKind::SeqSort;
    spec.vocab = 5;
    spec.seq_len = 4;
    spec.n_train = 300;
    spec.n_eval = 200;
    const TaskInstance a = make_task(spec, 9);
    const TaskInstance b = make_task(spec, 9);
    const auto& ta = std::get<SequenceData>(a.train);
    const auto& ea = std::get<SequenceData>(a.eval);
    EXPECT_EQ(ta.tokens, std::get<SequenceData>(b.train).tokens);
    EXPECT_EQ(ea.tokens, std::get<SequenceData>(b.eval).tokens);
    EXPECT_NE(ta.tokens, std::get<SequenceData>(make_task(spec, 10).train).tokens);
    std::set<std::vector<int>> train_set;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        train_set.emplace(ta.sequence(i).begin(), ta.sequence(i).end());
    }
    for (std::size_t i = 0; i < ea.size(); ++i) {
        EXPECT_FALSE(train_set.contains(std::vector<int>(ea.sequence(i).begin(), ea.sequence(i).end())));
    }
}

TEST(SeqTask, RejectsInvalidSizes) {
    EXPECT_THROW(make_seq_task(TaskKind::SeqCopy, 3, 4, 10, 0), ConfigError);
    EXPECT_THROW(make_seq_task(TaskKind::SeqCopy, 4, 1, 10, 0), ConfigError);
    EXPECT_THROW(make_seq_task(TaskKind::ScaledTeacher, 4, 4, 10, 0), ConfigError);
}

TEST(TeacherTask, ScaledTeacherConstruction) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TeacherTask t = make_scaled_teacher(16, 12, seed);
        EXPECT_EQ(exact_rank(t.w0), 12u);
        EXPECT_EQ(t.teacher, scale_rows_cols(t.w0, t.a_star, t.b_star));
        for (double v : t.a_star.values()) {
            EXPECT_GE(v, 0.5);
            EXPECT_LE(v, 2.0);
        }
        for (double v : t.b_star.values()) {
            EXPECT_GE(v, 0.5);
            EXPECT_LE(v, 2.0);
        }
        EXPECT_LT(rel_diff(t.train.y, naive_product(t.train.x, transpose(t.teacher))), 1e-13);
        EXPECT_NE(t.train.x, t.eval.x);
    }
    const TeacherTask a = make_scaled_teacher(6, 6, 3);
    const TeacherTask b = make_scaled_teacher(6, 6, 3);
    EXPECT_EQ(a.teacher, b.teacher);
    EXPECT_EQ(a.train.x, b.train.x);
    EXPECT_THROW(make_scaled_teacher(1, 5, 0), ConfigError);
}

TEST(TeacherTask, IdentityTeacherIsOptimalAtInit) {
    // Unit scales make the teacher equal to W0.
    TeacherTask t = make_scaled_teacher(8, 8, 4);
    t.teacher = t.w0;
    t.train.y = matmul_nt(t.train.x, t.w0);
    for (const auto& kind : {AdapterKind::hyper(), AdapterKind::lora(1), AdapterKind::full()}) {
        const Model m = teacher_base(t).adapted(uniform_adapter_map(MlpSpec{{8, 8}}, kind));
        EXPECT_EQ(m.loss(t.train), 0.0) << kind.label();
    }
    const TeacherTask zero = make_lowrank_teacher(8, 8, 0, 4);
    EXPECT_EQ(zero.teacher, zero.w0);
    const Model m = teacher_base(zero).adapted(uniform_adapter_map(MlpSpec{{8, 8}}, AdapterKind::lora(2)));
    EXPECT_EQ(m.loss(zero.train), 0.0);
    EXPECT_THROW(make_lowrank_teacher(8, 8, 8, 0), ConfigError);
}

TEST(TeacherTask, HyperRecoversScaleProducts) {
    const TeacherTask t = make_scaled_teacher(16, 16, 11);
    Model tuned = teacher_base(t);
    const double mse = train_mse(t, AdapterKind::hyper(), 1e-2, 2000, &tuned);
    EXPECT_LT(mse, 1e-6);
    const auto& layer = std::get<HyperAdaptLinear>(tuned.linear(0).impl());
    double worst = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            if (t.w0(i, j) != 0.0) {
                worst = std::max(worst, std::abs(layer.a()[i] * layer.b()[j] - t.a_star[i] * t.b_star[j]));
            }
        }
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(TeacherTask, LoRARankOneRespectsEckartYoungOracle) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const TeacherTask t = make_scaled_teacher(16, 16, seed);
        const double oracle = eckart_young_mse(t, 1);
        const double lora = train_mse(t, AdapterKind::lora(1), 1e-2, 2000);
        const double hyper = train_mse(t, AdapterKind::hyper(), 1e-2, 2000);
        EXPECT_GT(oracle, 1e-3);
        EXPECT_GE(lora, oracle * (1.0 - 1e-9));
        EXPECT_GE(lora, 10.0 * hyper);
    }
}

TEST(TeacherTask, LowRankTeacherIsRepresentableByLoRA) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const TeacherTask t = make_lowrank_teacher(16, 16, 2, seed);
        EXPECT_LE(exact_rank(subtract(t.teacher, t.w0)), 2u);
        EXPECT_LT(eckart_young_mse(t, 2), 1e-20);
        const double lora = train_mse(t, AdapterKind::lora(2), 1e-2, 4000);
        EXPECT_LT(lora, 1e-6) << "seed " << seed;
    }
}

TEST(TeacherTask, HyperCannotBeatItsAlternatingOracle) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const TeacherTask t = make_lowrank_teacher(12, 10, 3, seed);
        const HyperFit fit = fit_hyper_alternating(t.w0, t.train);
        const double hyper = train_mse(t, AdapterKind::hyper(), 1e-2, 2000);
        EXPECT_GE(hyper, fit.mse - 1e-6);
        EXPECT_GT(fit.mse, 0.0);
        // The oracle improves on the identity start.
        const Model base = teacher_base(t);
        EXPECT_LT(fit.mse, base.loss(t.train));
    }
}

TEST(TeacherTask, AlternatingOracleIsExactOnScaledTeacher) {
    const TeacherTask t = make_scaled_teacher(10, 8, 2);
    const HyperFit fit = fit_hyper_alternating(t.w0, t.train);
    EXPECT_LT(fit.mse, 1e-20);
}

TEST(Datasets, JsonLinesRoundTrip) {
    const TeacherTask t = make_scaled_teacher(3, 4, 1, 5, 5);
    const Dataset reg = t.train;
    const Dataset back = dataset_from_jsonl(to_jsonl(reg));
    EXPECT_EQ(std::get<RegressionData>(back).x, t.train.x);
    EXPECT_EQ(std::get<RegressionData>(back).y, t.train.y);
    const Dataset seq = make_seq_task(TaskKind::SeqSort, 6, 5, 7, 3);
    const Dataset seq_back = dataset_from_jsonl(to_jsonl(seq));
    EXPECT_EQ(std::get<SequenceData>(seq_back).tokens, std::get<SequenceData>(seq).tokens);
    EXPECT_EQ(std::get<SequenceData>(seq_back).targets, std::get<SequenceData>(seq).targets);
    EXPECT_THROW(dataset_from_jsonl("{\"x\": [1, 2]\n{broken"), ParseError);
}

TEST(PretrainThenAdapt, IdenticalTasksStartWhereTheyStopped) {
    ModelSpec spec;
    spec.arch = TransformerSpec{6, 16, 1, 1, 16, 4};
    spec.adapter_map = uniform_adapter_map(spec.arch, AdapterKind::hyper());
    TaskSpec ts;
    ts.kind = TaskKind::SeqCopy;
    ts.vocab = 6;
    ts.seq_len = 4;
    ts.n_train = 64;
    ts.n_eval = 32;
    const TaskInstance task = make_task(ts, 2);
    AdaptConfigs configs;
    configs.pretrain.lr = 1e-2;
    configs.pretrain.epochs = 5;
    configs.pretrain.warmup_steps = 2;
    configs.pretrain.batch_size = 16;
    configs.adapt = configs.pretrain;
    const PairedAdaptResult r = pretrain_then_adapt(spec, task, task, configs, 3);
    EXPECT_EQ(r.from_pretrained.initial_loss, r.pretrain.final_loss);
    // The random-init arm starts from the untrained model.
    EXPECT_EQ(r.from_random.initial_loss, r.pretrain.initial_loss);
    EXPECT_LT(r.pretrain.final_loss, r.pretrain.initial_loss);
}

TEST(ModelSpec, ValidateRequiresExactLayerNames) {
    ModelSpec spec;
    spec.arch = TransformerSpec{};
    spec.adapter_map = uniform_adapter_map(spec.arch, AdapterKind::hyper());
    EXPECT_NO_THROW(spec.validate());
    const auto names = linear_layer_names(spec.arch);
    ASSERT_EQ(names.size(), 8u);
    EXPECT_EQ(names[0], "blocks.0.q_proj");
    EXPECT_EQ(names[6], "blocks.0.down_proj");
    EXPECT_EQ(names[7], "lm_head");
    spec.adapter_map.erase("blocks.0.q_proj");
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.adapter_map["blocks.0.attn"] = AdapterKind::hyper();
    EXPECT_THROW(spec.validate(), ConfigError);
}
