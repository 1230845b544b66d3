// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/rng.hpp"

namespace hyperlab {

namespace {

constexpr double kNormEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

double activate(Activation a, double x) {
    switch (a) {
    case Activation::Identity:
        return x;
    case Activation::Relu:
        return x > 0.0 ? x : 0.0;
    case Activation::Tanh:
        return std::tanh(x);
    case Activation::Gelu:
        return gelu(x);
    }
    return x;
}

double activate_grad(Activation a, double x) {
    switch (a) {
    case Activation::Identity:
        return 1.0;
    case Activation::Relu:
        return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    case Activation::Gelu:
        return gelu_grad(x);
    }
    return 1.0;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = rng.normal(0.0, stddev);
    }
    return m;
}

void add_into(Matrix& dst, const Matrix& src) {
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t k = 0; k < d.size(); ++k) {
        d[k] += s[k];
    }
}

struct NormCache {
    Matrix normalized;            // x-hat
    std::vector<double> inv_std;  // per row
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, NormCache& cache) {
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    cache.normalized = Matrix(x.rows(), d);
    cache.inv_std.assign(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        cache.inv_std[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv;
            cache.normalized(r, j) = xhat;
            out(r, j) = xhat * gain(0, j) + bias(0, j);
        }
    }
    return out;
}

// Returns dL/dx and accumulates gain/bias gradients.
Matrix layer_norm_backward(const Matrix& g_out, const Matrix& gain, const NormCache& cache,
                           std::vector<double>& g_gain, std::vector<double>& g_bias) {
    const std::size_t d = g_out.cols();
    Matrix g_x(g_out.rows(), d);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < g_out.rows(); ++r) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double go = g_out(r, j);
            const double xhat = cache.normalized(r, j);
            g_gain[j] += go * xhat;
            g_bias[j] += go;
            dxhat[j] = go * gain(0, j);
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat;
        }
        mean_d /= static_cast<double>(d);
        mean_dx /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            g_x(r, j) = cache.inv_std[r] * (dxhat[j] - mean_d - cache.normalized(r, j) * mean_dx);
        }
    }
    return g_x;
}

// Mean cross-entropy over rows; optionally fills dL/dlogits.
double cross_entropy(const Matrix& logits, std::span<const int> targets, Matrix* grad) {
    const std::size_t rows = logits.rows();
    const double inv_rows = 1.0 / static_cast<double>(rows);
    if (grad) {
        *grad = Matrix(rows, logits.cols());
    }
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = logits.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double denom = 0.0;
        for (double v : row) {
            denom += std::exp(v - peak);
        }
        const auto target = static_cast<std::size_t>(targets[r]);
        total += std::log(denom) - (row[target] - peak);
        if (grad) {
            for (std::size_t j = 0; j < row.size(); ++j) {
                (*grad)(r, j) = std::exp(row[j] - peak) / denom * inv_rows;
            }
            (*grad)(r, target) -= inv_rows;
        }
    }
    return total * inv_rows;
}

double mean_squared_error(const Matrix& pred, const Matrix& target, Matrix* grad) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw DimensionError("mse: prediction and target shapes differ");
    }
    const double inv = 1.0 / static_cast<double>(pred.size());
    if (grad) {
        *grad = Matrix(pred.rows(), pred.cols());
    }
    double total = 0.0;
    auto p = pred.values();
    auto t = target.values();
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double diff = p[k] - t[k];
        total += diff * diff;
        if (grad) {
            grad->values()[k] = 2.0 * diff * inv;
        }
    }
    return total * inv;
}

ForwardContext with_layer(const ForwardContext& ctx, std::size_t layer) {
    ForwardContext out = ctx;
    out.layer_id = layer;
    return out;
}

// Transformer aux tensor layout.
constexpr std::size_t kTokEmb = 0;
constexpr std::size_t kPosEmb = 1;
std::size_t ln1_gain(std::size_t block) { return 2 + 4 * block; }
std::size_t ln2_gain(std::size_t block) { return 4 + 4 * block; }
std::size_t lnf_gain(std::size_t n_layers) { return 2 + 4 * n_layers; }

enum Proj : std::size_t { Q = 0, K, V, O, Gate, Up, Down, kProjCount };

std::size_t proj_index(std::size_t block, Proj p) { return block * kProjCount + p; }

struct BlockCache {
    Matrix x_in;
    NormCache norm1;
    Matrix h1;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per sequence, len x len
    Matrix att;
    Matrix x_mid;
    NormCache norm2;
    Matrix h2;
    Matrix gate, up, act;
};

struct TransformerCache {
    std::vector<BlockCache> blocks;
    NormCache norm_f;
    Matrix h_f;
    Matrix logits;
};

}  // namespace

std::string activation_name(Activation a) {
    switch (a) {
    case Activation::Identity:
        return "identity";
    case Activation::Relu:
        return "relu";
    case Activation::Tanh:
        return "tanh";
    case Activation::Gelu:
        return "gelu";
    }
    return "identity";
}

Activation parse_activation(const std::string& name) {
    for (Activation a : {Activation::Identity, Activation::Relu, Activation::Tanh,
                         Activation::Gelu}) {
        if (activation_name(a) == name) {
            return a;
        }
    }
    throw ConfigError(fmt::format("unknown activation '{}'", name));
}

std::vector<std::string> linear_layer_names(const Architecture& arch) {
    std::vector<std::string> names;
    if (const auto* mlp = std::get_if<MlpSpec>(&arch)) {
        for (std::size_t i = 0; i + 1 < mlp->widths.size(); ++i) {
            names.push_back(fmt::format("fc{}", i));
        }
        return names;
    }
    const auto& tf = std::get<TransformerSpec>(arch);
    for (std::size_t b = 0; b < tf.n_layers; ++b) {
        for (const char* suffix : kBlockLinearNames) {
            names.push_back(fmt::format("blocks.{}.{}", b, suffix));
        }
    }
    names.emplace_back("lm_head");
    return names;
}

AdapterMap uniform_adapter_map(const Architecture& arch, AdapterKind kind, AdapterKind head_kind) {
    AdapterMap map;
    for (const auto& name : linear_layer_names(arch)) {
        map[name] = name == "lm_head" ? head_kind : kind;
    }
    return map;
}

Model Model::init(const Architecture& arch, std::uint64_t seed) {
    Model model;
    model.arch_ = arch;
    model.names_ = linear_layer_names(arch);
    Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
    if (const auto* mlp = std::get_if<MlpSpec>(&arch)) {
        if (mlp->widths.size() < 2) {
            throw ConfigError("mlp needs at least input and output widths");
        }
        for (std::size_t i = 0; i + 1 < mlp->widths.size(); ++i) {
            const std::size_t in = mlp->widths[i];
            const std::size_t out = mlp->widths[i + 1];
            Matrix w = random_matrix(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
            std::optional<Vector> bias;
            if (mlp->bias) {
                bias = Vector(out, 0.0);
            }
            model.linears_.emplace_back(FrozenLinear(std::move(w), std::move(bias)));
        }
        return model;
    }
    const auto& tf = std::get<TransformerSpec>(arch);
    if (tf.n_heads != 1) {
        throw ConfigError("tiny transformer supports a single attention head");
    }
    const double d = static_cast<double>(tf.d_model);
    const double dff = static_cast<double>(tf.d_ff);
    for (std::size_t b = 0; b < tf.n_layers; ++b) {
        for (std::size_t p = 0; p < kProjCount; ++p) {
            Matrix w;
            if (p == Gate || p == Up) {
                w = random_matrix(rng, tf.d_ff, tf.d_model, 1.0 / std::sqrt(d));
            } else if (p == Down) {
                w = random_matrix(rng, tf.d_model, tf.d_ff, 1.0 / std::sqrt(dff));
            } else {
                w = random_matrix(rng, tf.d_model, tf.d_model, 1.0 / std::sqrt(d));
            }
            model.linears_.emplace_back(FrozenLinear(std::move(w)));
        }
    }
    model.linears_.emplace_back(
        FrozenLinear(random_matrix(rng, tf.vocab, tf.d_model, 1.0 / std::sqrt(d))));

    model.aux_.push_back({"tok_emb", random_matrix(rng, tf.vocab, tf.d_model, 1.0)});
    model.aux_.push_back({"pos_emb", random_matrix(rng, tf.max_seq, tf.d_model, 1.0)});
    for (std::size_t b = 0; b < tf.n_layers; ++b) {
        for (const char* norm : {"ln1", "ln2"}) {
            model.aux_.push_back({fmt::format("blocks.{}.{}.gain", b, norm),
                                  Matrix(1, tf.d_model, 1.0)});
            model.aux_.push_back({fmt::format("blocks.{}.{}.bias", b, norm),
                                  Matrix(1, tf.d_model, 0.0)});
        }
    }
    model.aux_.push_back({"ln_f.gain", Matrix(1, tf.d_model, 1.0)});
    model.aux_.push_back({"ln_f.bias", Matrix(1, tf.d_model, 0.0)});
    return model;
}

Model::Model(Architecture arch, std::vector<std::string> names, std::vector<AdapterLayer> linears,
             std::vector<AuxTensor> aux)
    : arch_(std::move(arch)),
      names_(std::move(names)),
      linears_(std::move(linears)),
      aux_(std::move(aux)) {
    if (names_ != linear_layer_names(arch_) || linears_.size() != names_.size()) {
        throw StructuralError("model layers do not match the architecture");
    }
    const Model reference = init(arch_, 0);
    if (reference.aux_.size() != aux_.size()) {
        throw StructuralError("model aux tensors do not match the architecture");
    }
    for (std::size_t i = 0; i < aux_.size(); ++i) {
        const auto& want = reference.aux_[i];
        if (aux_[i].name != want.name || aux_[i].value.rows() != want.value.rows() ||
            aux_[i].value.cols() != want.value.cols()) {
            throw StructuralError(fmt::format("aux tensor '{}' has the wrong name or shape",
                                              aux_[i].name));
        }
    }
    for (std::size_t i = 0; i < linears_.size(); ++i) {
        const auto& want = reference.linears_[i];
        if (linears_[i].rows() != want.rows() || linears_[i].cols() != want.cols() ||
            linears_[i].bias().has_value() != want.bias().has_value()) {
            throw StructuralError(fmt::format("layer '{}' is {}x{}, architecture expects {}x{}",
                                              names_[i], linears_[i].rows(), linears_[i].cols(),
                                              want.rows(), want.cols()));
        }
    }
}

const AdapterLayer& Model::linear(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) {
        throw StructuralError(fmt::format("no linear layer named '{}'", name));
    }
    return linears_[static_cast<std::size_t>(it - names_.begin())];
}

AdapterLayer& Model::linear(const std::string& name) {
    return const_cast<AdapterLayer&>(std::as_const(*this).linear(name));
}

AdapterMap Model::adapter_map() const {
    AdapterMap map;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        map[names_[i]] = linears_[i].kind();
    }
    return map;
}

const AuxTensor& Model::aux_tensor(const std::string& name) const {
    for (const auto& t : aux_) {
        if (t.name == name) {
            return t;
        }
    }
    throw StructuralError(fmt::format("no aux tensor named '{}'", name));
}

Model Model::adapted(const AdapterMap& map, const AdapterOptions& base, std::uint64_t seed) const {
    if (map.size() != names_.size()) {
        throw ConfigError(fmt::format("adapter map has {} entries, model has {} linear layers",
                                      map.size(), names_.size()));
    }
    Model out;
    out.arch_ = arch_;
    out.names_ = names_;
    out.aux_ = aux_;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        auto it = map.find(names_[i]);
        if (it == map.end()) {
            throw ConfigError(fmt::format("adapter map lacks layer '{}'", names_[i]));
        }
        AdapterOptions options = base;
        options.kind = it->second;
        options.init_seed = derive_seed({seed, i, 0x4c6f5241ULL});
        out.linears_.push_back(
            AdapterLayer::make(linears_[i].effective_weight(), linears_[i].bias(), options));
    }
    return out;
}

Model Model::merged() const {
    Model out;
    out.arch_ = arch_;
    out.names_ = names_;
    out.aux_ = aux_;
    for (const auto& layer : linears_) {
        out.linears_.emplace_back(FrozenLinear(layer.effective_weight(), layer.bias()));
    }
    return out;
}

std::vector<ParamSlot> Model::trainable_params() {
    std::vector<ParamSlot> out;
    for (std::size_t i = 0; i < linears_.size(); ++i) {
        for (auto& slot : linears_[i].trainable_params()) {
            slot.name = names_[i] + "." + slot.name;
            out.push_back(std::move(slot));
        }
    }
    if (aux_trainable_) {
        for (auto& t : aux_) {
            const bool gain = t.name.ends_with(".gain");
            out.push_back({t.name, t.value.values(), gain ? 1.0 : 0.0});
        }
    }
    return out;
}

std::size_t Model::trainable_count() const {
    std::size_t total = 0;
    for (const auto& layer : linears_) {
        total += layer.trainable_count();
    }
    if (aux_trainable_) {
        for (const auto& t : aux_) {
            total += t.value.size();
        }
    }
    return total;
}

std::size_t Model::total_param_count() const {
    std::size_t total = 0;
    for (const auto& layer : linears_) {
        total += layer.base_weight().size();
        if (layer.bias()) {
            total += layer.bias()->size();
        }
    }
    for (const auto& t : aux_) {
        total += t.value.size();
    }
    return total;
}

namespace {

struct MlpPass {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation outputs
};

Matrix mlp_forward(const MlpSpec& spec, const std::vector<AdapterLayer>& layers, const Matrix& x,
                   const ForwardContext& ctx, MlpPass* pass) {
    Matrix h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Matrix z = layers[i].forward(h, with_layer(ctx, i));
        if (pass) {
            pass->inputs.push_back(h);
        }
        if (i + 1 == layers.size()) {
            if (pass) {
                pass->pre.push_back(z);
            }
            return z;
        }
        Matrix next = z;
        for (double& v : next.values()) {
            v = activate(spec.activation, v);
        }
        if (pass) {
            pass->pre.push_back(std::move(z));
        }
        h = std::move(next);
    }
    return h;
}

void check_tokens(const TransformerSpec& spec, const SequenceData& batch) {
    if (batch.len == 0 || batch.len > spec.max_seq) {
        throw DimensionError(fmt::format("sequence length {} outside 1..{}", batch.len,
                                         spec.max_seq));
    }
    for (std::size_t k = 0; k < batch.tokens.size(); ++k) {
        if (batch.tokens[k] < 0 || static_cast<std::size_t>(batch.tokens[k]) >= spec.vocab ||
            batch.targets[k] < 0 || static_cast<std::size_t>(batch.targets[k]) >= spec.vocab) {
            throw DimensionError("token id outside the vocabulary");
        }
    }
}

Matrix transformer_forward(const TransformerSpec& spec, const std::vector<AdapterLayer>& layers,
                           const std::vector<AuxTensor>& aux, const SequenceData& batch,
                           const ForwardContext& ctx, TransformerCache& cache) {
    check_tokens(spec, batch);
    const std::size_t len = batch.len;
    const std::size_t rows = batch.count * len;
    const std::size_t d = spec.d_model;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix x(rows, d);
    const Matrix& tok = aux[kTokEmb].value;
    const Matrix& pos = aux[kPosEmb].value;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto t = static_cast<std::size_t>(batch.tokens[r]);
        for (std::size_t j = 0; j < d; ++j) {
            x(r, j) = tok(t, j) + pos(r % len, j);
        }
    }

    cache.blocks.assign(spec.n_layers, {});
    for (std::size_t b = 0; b < spec.n_layers; ++b) {
        BlockCache& bc = cache.blocks[b];
        auto layer = [&](Proj p) -> const AdapterLayer& { return layers[proj_index(b, p)]; };
        auto lctx = [&](Proj p) { return with_layer(ctx, proj_index(b, p)); };

        bc.x_in = x;
        bc.h1 = layer_norm(x, aux[ln1_gain(b)].value, aux[ln1_gain(b) + 1].value, bc.norm1);
        bc.q = layer(Q).forward(bc.h1, lctx(Q));
        bc.k = layer(K).forward(bc.h1, lctx(K));
        bc.v = layer(V).forward(bc.h1, lctx(V));
        bc.att = Matrix(rows, d);
        bc.probs.assign(batch.count, Matrix(len, len));
        for (std::size_t s = 0; s < batch.count; ++s) {
            Matrix& p = bc.probs[s];
            const std::size_t off = s * len;
            for (std::size_t i = 0; i < len; ++i) {
                double peak = -INFINITY;
                for (std::size_t j = 0; j < len; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        acc += bc.q(off + i, c) * bc.k(off + j, c);
                    }
                    p(i, j) = acc * scale;
                    peak = std::max(peak, p(i, j));
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    p(i, j) = std::exp(p(i, j) - peak);
                    denom += p(i, j);
                }
                for (std::size_t j = 0; j < len; ++j) {
                    p(i, j) /= denom;
                    const double w = p(i, j);
                    for (std::size_t c = 0; c < d; ++c) {
                        bc.att(off + i, c) += w * bc.v(off + j, c);
                    }
                }
            }
        }
        x = add(x, layer(O).forward(bc.att, lctx(O)));

        bc.x_mid = x;
        bc.h2 = layer_norm(x, aux[ln2_gain(b)].value, aux[ln2_gain(b) + 1].value, bc.norm2);
        bc.gate = layer(Gate).forward(bc.h2, lctx(Gate));
        bc.up = layer(Up).forward(bc.h2, lctx(Up));
        bc.act = Matrix(rows, spec.d_ff);
        for (std::size_t k = 0; k < bc.act.size(); ++k) {
            bc.act.values()[k] = gelu(bc.gate.values()[k]) * bc.up.values()[k];
        }
        x = add(x, layer(Down).forward(bc.act, lctx(Down)));
    }
    const std::size_t f = lnf_gain(spec.n_layers);
    cache.h_f = layer_norm(x, aux[f].value, aux[f + 1].value, cache.norm_f);
    cache.logits = layers.back().forward(cache.h_f, with_layer(ctx, layers.size() - 1));
    return cache.logits;
}

}  // namespace

Matrix Model::predict(const Matrix& x, const ForwardContext& ctx) const {
    const auto* mlp = std::get_if<MlpSpec>(&arch_);
    if (!mlp) {
        throw StructuralError("predict() needs an MLP; use logits() for sequence models");
    }
    return mlp_forward(*mlp, linears_, x, ctx, nullptr);
}

Matrix Model::logits(const SequenceData& batch, const ForwardContext& ctx) const {
    const auto* tf = std::get_if<TransformerSpec>(&arch_);
    if (!tf) {
        throw StructuralError("logits() needs a transformer");
    }
    TransformerCache cache;
    return transformer_forward(*tf, linears_, aux_, batch, ctx, cache);
}

double Model::loss(const Dataset& batch, const ForwardContext& ctx) const {
    if (const auto* reg = std::get_if<RegressionData>(&batch)) {
        return mean_squared_error(predict(reg->x, ctx), reg->y, nullptr);
    }
    const auto& seq = std::get<SequenceData>(batch);
    return cross_entropy(logits(seq, ctx), seq.targets, nullptr);
}

double Model::accuracy(const SequenceData& batch) const {
    const Matrix out = logits(batch);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        hits += best == batch.targets[r] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(out.rows());
}

LossAndGrad Model::loss_and_grad(const Dataset& batch, const ForwardContext& ctx) const {
    LossAndGrad result;
    std::vector<GradientBundle> per_layer(linears_.size());

    if (const auto* reg = std::get_if<RegressionData>(&batch)) {
        const auto* mlp = std::get_if<MlpSpec>(&arch_);
        if (!mlp) {
            throw StructuralError("regression batch given to a sequence model");
        }
        MlpPass pass;
        const Matrix out = mlp_forward(*mlp, linears_, reg->x, ctx, &pass);
        Matrix g;
        result.loss = mean_squared_error(out, reg->y, &g);
        for (std::size_t i = linears_.size(); i-- > 0;) {
            if (i + 1 != linears_.size()) {
                auto gv = g.values();
                auto zv = pass.pre[i].values();
                for (std::size_t k = 0; k < gv.size(); ++k) {
                    gv[k] *= activate_grad(mlp->activation, zv[k]);
                }
            }
            LayerGrad lg = linears_[i].backward(pass.inputs[i], g, with_layer(ctx, i));
            per_layer[i] = std::move(lg.params);
            g = std::move(lg.g_x);
        }
        for (auto& bundle : per_layer) {
            result.grads.append(std::move(bundle));
        }
        return result;
    }

    const auto* tf = std::get_if<TransformerSpec>(&arch_);
    if (!tf) {
        throw StructuralError("sequence batch given to an MLP");
    }
    const auto& seq = std::get<SequenceData>(batch);
    TransformerCache cache;
    transformer_forward(*tf, linears_, aux_, seq, ctx, cache);
    Matrix g_logits;
    result.loss = cross_entropy(cache.logits, seq.targets, &g_logits);

    std::vector<std::vector<double>> aux_grads;
    for (const auto& t : aux_) {
        aux_grads.emplace_back(t.value.size(), 0.0);
    }

    const std::size_t head = linears_.size() - 1;
    LayerGrad lg = linears_[head].backward(cache.h_f, g_logits, with_layer(ctx, head));
    per_layer[head] = std::move(lg.params);
    const std::size_t f = lnf_gain(tf->n_layers);
    Matrix g_x = layer_norm_backward(lg.g_x, aux_[f].value, cache.norm_f, aux_grads[f],
                                     aux_grads[f + 1]);

    const std::size_t len = seq.len;
    const std::size_t d = tf->d_model;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t b = tf->n_layers; b-- > 0;) {
        const BlockCache& bc = cache.blocks[b];
        auto layer_at = [&](Proj p) -> const AdapterLayer& { return linears_[proj_index(b, p)]; };
        auto lctx = [&](Proj p) { return with_layer(ctx, proj_index(b, p)); };

        // Feed-forward branch.
        LayerGrad down = layer_at(Down).backward(bc.act, g_x, lctx(Down));
        per_layer[proj_index(b, Down)] = std::move(down.params);
        Matrix g_gate(bc.gate.rows(), bc.gate.cols());
        Matrix g_up(bc.up.rows(), bc.up.cols());
        for (std::size_t k = 0; k < g_gate.size(); ++k) {
            const double ga = down.g_x.values()[k];
            const double z = bc.gate.values()[k];
            g_gate.values()[k] = ga * bc.up.values()[k] * gelu_grad(z);
            g_up.values()[k] = ga * gelu(z);
        }
        LayerGrad gate = layer_at(Gate).backward(bc.h2, g_gate, lctx(Gate));
        LayerGrad up = layer_at(Up).backward(bc.h2, g_up, lctx(Up));
        per_layer[proj_index(b, Gate)] = std::move(gate.params);
        per_layer[proj_index(b, Up)] = std::move(up.params);
        Matrix g_h2 = add(gate.g_x, up.g_x);
        add_into(g_x, layer_norm_backward(g_h2, aux_[ln2_gain(b)].value, bc.norm2,
                                          aux_grads[ln2_gain(b)], aux_grads[ln2_gain(b) + 1]));

        // Attention branch.
        LayerGrad out = layer_at(O).backward(bc.att, g_x, lctx(O));
        per_layer[proj_index(b, O)] = std::move(out.params);
        const Matrix& g_att = out.g_x;
        Matrix g_q(bc.q.rows(), d);
        Matrix g_k(bc.k.rows(), d);
        Matrix g_v(bc.v.rows(), d);
        std::vector<double> g_p(len);
        for (std::size_t s = 0; s < seq.count; ++s) {
            const Matrix& p = bc.probs[s];
            const std::size_t off = s * len;
            for (std::size_t i = 0; i < len; ++i) {
                double weighted = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        acc += g_att(off + i, c) * bc.v(off + j, c);
                        g_v(off + j, c) += p(i, j) * g_att(off + i, c);
                    }
                    g_p[j] = acc;
                    weighted += acc * p(i, j);
                }
                for (std::size_t j = 0; j < len; ++j) {
                    const double g_s = p(i, j) * (g_p[j] - weighted) * scale;
                    if (g_s == 0.0) {
                        continue;
                    }
                    for (std::size_t c = 0; c < d; ++c) {
                        g_q(off + i, c) += g_s * bc.k(off + j, c);
                        g_k(off + j, c) += g_s * bc.q(off + i, c);
                    }
                }
            }
        }
        LayerGrad q = layer_at(Q).backward(bc.h1, g_q, lctx(Q));
        LayerGrad k = layer_at(K).backward(bc.h1, g_k, lctx(K));
        LayerGrad v = layer_at(V).backward(bc.h1, g_v, lctx(V));
        per_layer[proj_index(b, Q)] = std::move(q.params);
        per_layer[proj_index(b, K)] = std::move(k.params);
        per_layer[proj_index(b, V)] = std::move(v.params);
        Matrix g_h1 = add(add(q.g_x, k.g_x), v.g_x);
        add_into(g_x, layer_norm_backward(g_h1, aux_[ln1_gain(b)].value, bc.norm1,
                                          aux_grads[ln1_gain(b)], aux_grads[ln1_gain(b) + 1]));
    }

    for (std::size_t r = 0; r < g_x.rows(); ++r) {
        const auto t = static_cast<std::size_t>(seq.tokens[r]);
        const std::size_t p = r % len;
        for (std::size_t j = 0; j < d; ++j) {
            aux_grads[kTokEmb][t * d + j] += g_x(r, j);
            aux_grads[kPosEmb][p * d + j] += g_x(r, j);
        }
    }

    for (auto& bundle : per_layer) {
        result.grads.append(std::move(bundle));
    }
    if (aux_trainable_) {
        for (auto& g : aux_grads) {
            result.grads.slots.push_back(std::move(g));
        }
    }
    return result;
}

}  // namespace hyperlab
