// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/hash.hpp"
#include "hyperlab/rng.hpp"

namespace hyperlab {

using nlohmann::json;

std::size_t TrainConfig::steps_per_epoch(std::size_t n_examples) const {
    if (batch_size == 0) {
        return 0;
    }
    return (n_examples + batch_size - 1) / batch_size;
}

std::size_t TrainConfig::total_steps(std::size_t n_examples) const {
    return epochs * steps_per_epoch(n_examples);
}

LrSchedule TrainConfig::schedule_for(std::size_t n_examples) const {
    return {lr, schedule, warmup_steps, total_steps(n_examples)};
}

void TrainConfig::validate(std::size_t n_examples) const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError(fmt::format("train.lr must be positive, got {}", lr));
    }
    if (batch_size == 0) {
        throw ConfigError("train.batch_size must be positive");
    }
    if (!(max_grad_norm > 0.0)) {
        throw ConfigError("train.max_grad_norm must be positive");
    }
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
        throw ConfigError("train.adamw betas must lie in [0, 1)");
    }
    if (!(adamw.eps > 0.0) || adamw.weight_decay < 0.0) {
        throw ConfigError("train.adamw eps must be positive and weight_decay non-negative");
    }
    const std::size_t total = total_steps(n_examples);
    if (total > 0 && warmup_steps > total) {
        throw ConfigError(
            fmt::format("train.warmup_steps {} exceeds the {} total steps", warmup_steps, total));
    }
}

json to_json(const TrainConfig& c) {
    return {
        {"optimizer",
         {{"name", "adamw"},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"decay_to_identity", c.adamw.decay_to_identity}}},
        {"lr", c.lr},
        {"schedule", c.schedule == ScheduleKind::Cosine ? "cosine" : "constant"},
        {"warmup_steps", c.warmup_steps},
        {"max_grad_norm", c.max_grad_norm},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seed", c.seed},
    };
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    const auto& opt = j.at("optimizer");
    c.adamw.beta1 = opt.at("beta1").get<double>();
    c.adamw.beta2 = opt.at("beta2").get<double>();
    c.adamw.eps = opt.at("eps").get<double>();
    c.adamw.weight_decay = opt.at("weight_decay").get<double>();
    c.adamw.decay_to_identity = opt.at("decay_to_identity").get<bool>();
    c.lr = j.at("lr").get<double>();
    c.schedule = j.at("schedule").get<std::string>() == "cosine" ? ScheduleKind::Cosine
                                                                 : ScheduleKind::Constant;
    c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    c.max_grad_norm = j.at("max_grad_norm").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

double dataset_loss(const Model& model, const Dataset& data) {
    constexpr std::size_t kChunk = 512;
    const std::size_t n = dataset_size(data);
    if (n == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
        const std::size_t count = std::min(kChunk, n - begin);
        const Dataset chunk = count == n ? data : slice(data, begin, count);
        total += model.loss(chunk) * static_cast<double>(count);
    }
    return total / static_cast<double>(n);
}

std::string frozen_checksum(const Model& model) {
    std::string bytes;
    auto append = [&bytes](std::span<const double> v) {
        bytes.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
    };
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
        append(model.linear(i).base_weight().values());
    }
    if (!model.aux_trainable()) {
        for (const auto& t : model.aux()) {
            append(t.value.values());
        }
    }
    return sha256_hex(bytes);
}

std::string trainable_checksum(Model& model) {
    std::string bytes;
    for (const auto& slot : model.trainable_params()) {
        bytes.append(reinterpret_cast<const char*>(slot.values.data()), slot.values.size_bytes());
    }
    return sha256_hex(bytes);
}

TrainResult train(Model& model, const Dataset& train_data, const TrainConfig& config,
                  const Dataset* eval_data) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = dataset_size(train_data);
    config.validate(n);
    const LrSchedule schedule = config.schedule_for(n);

    TrainResult result;
    result.frozen_checksum_before = frozen_checksum(model);
    result.initial_loss = dataset_loss(model, train_data);

    auto params = model.trainable_params();
    AdamWState state = AdamWState::zeros_like(params);
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed({config.seed, epoch, 0x73687566ULL}));
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
        for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, n - begin);
            const Dataset batch =
                gather(train_data, std::span<const std::size_t>(order.data() + begin, count));
            ForwardContext ctx{true, config.seed, step, 0};
            LossAndGrad lg = model.loss_and_grad(batch, ctx);
            if (!std::isfinite(lg.loss)) {
                throw NumericError(fmt::format("non-finite loss at step {}", step), step);
            }
            const double lr = lr_at(step, schedule);
            if (!params.empty()) {
                clip_global_norm(lg.grads, config.max_grad_norm);
                adamw_step(state, params, lg.grads, lr, config.adamw);
            }
            result.loss_curve.push_back(lg.loss);
            result.lr_curve.push_back(lr);
            ++step;
        }
    }

    result.final_loss = dataset_loss(model, train_data);
    if (!std::isfinite(result.final_loss)) {
        throw NumericError("non-finite loss after training", step);
    }
    if (eval_data) {
        result.eval_loss = dataset_loss(model, *eval_data);
        if (const auto* seq = std::get_if<SequenceData>(eval_data)) {
            result.eval_accuracy = model.accuracy(*seq);
        }
    }
    for (const auto& slot : params) {
        result.final_params.emplace_back(slot.values.begin(), slot.values.end());
    }
    result.frozen_checksum_after = frozen_checksum(model);
    result.trainable_checksum = trainable_checksum(model);
    result.wallclock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

json to_json(const TrainResult& r, const TrainConfig& config) {
    json j = {
        {"config", to_json(config)},
        {"steps", r.loss_curve.size()},
        {"loss_curve", r.loss_curve},
        {"initial_loss", r.initial_loss},
        {"final_loss", r.final_loss},
        {"wallclock_seconds", r.wallclock_seconds},
        {"checksums",
         {{"frozen_before", r.frozen_checksum_before},
          {"frozen_after", r.frozen_checksum_after},
          {"trainable", r.trainable_checksum}}},
    };
    j["eval_loss"] = r.eval_loss ? json(*r.eval_loss) : json(nullptr);
    j["eval_accuracy"] = r.eval_accuracy ? json(*r.eval_accuracy) : json(nullptr);
    return j;
}

std::string loss_curve_csv(const TrainResult& r) {
    std::string out = "step,lr,loss\n";
    for (std::size_t s = 0; s < r.loss_curve.size(); ++s) {
        out += fmt::format("{},{:.17g},{:.17g}\n", s, r.lr_curve[s], r.loss_curve[s]);
    }
    return out;
}

}  // namespace hyperlab
