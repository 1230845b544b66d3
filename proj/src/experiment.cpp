// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/hash.hpp"
#include "hyperlab/io.hpp"
#include "hyperlab/rng.hpp"

namespace hyperlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPretrainStream = 0x70726574ULL;

std::size_t line_at(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(
                   std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Resolves error positions by walking quoted key names through the source text.
class ConfigReader {
public:
    explicit ConfigReader(const std::string& text) : text_(text) {}

    [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
        std::size_t pos = 0;
        for (const auto& key : path) {
            const auto hit = text_.find("\"" + key + "\"", pos);
            if (hit == std::string::npos) {
                break;
            }
            pos = hit;
        }
        const std::size_t line = line_at(text_, pos);
        throw ConfigError(fmt::format("config:{}: {}", line, msg), line);
    }

    void only(const json& j, std::initializer_list<const char*> allowed,
              const std::vector<std::string>& path) const {
        if (!j.is_object()) {
            fail(path, fmt::format("'{}' must be an object", join(path)));
        }
        const std::set<std::string> keys(allowed.begin(), allowed.end());
        for (const auto& item : j.items()) {
            if (!keys.contains(item.key())) {
                auto where = path;
                where.push_back(item.key());
                fail(where, fmt::format("unknown key '{}'", join(where)));
            }
        }
    }

    template <typename T>
    void read(const json& j, const char* key, T& out, std::vector<std::string> path) const {
        if (!j.contains(key)) {
            return;
        }
        path.push_back(key);
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            fail(path, fmt::format("'{}' has the wrong type", join(path)));
        }
    }

    static std::string join(const std::vector<std::string>& path) {
        std::string out;
        for (const auto& p : path) {
            out += out.empty() ? p : "." + p;
        }
        return out;
    }

private:
    const std::string& text_;
};

TaskSpec read_task(const ConfigReader& r, const json& j, const std::vector<std::string>& path) {
    r.only(j, {"kind", "n", "m", "r_true", "vocab", "seq_len", "n_train", "n_eval", "noise_std"},
           path);
    TaskSpec spec;
    std::string kind;
    r.read(j, "kind", kind, path);
    if (kind.empty()) {
        r.fail(path, fmt::format("'{}.kind' is required", ConfigReader::join(path)));
    }
    try {
        spec.kind = parse_task_kind(kind);
    } catch (const ConfigError& e) {
        auto where = path;
        where.push_back("kind");
        r.fail(where, e.what());
    }
    r.read(j, "n", spec.n, path);
    r.read(j, "m", spec.m, path);
    r.read(j, "r_true", spec.r_true, path);
    r.read(j, "vocab", spec.vocab, path);
    r.read(j, "seq_len", spec.seq_len, path);
    r.read(j, "n_train", spec.n_train, path);
    r.read(j, "n_eval", spec.n_eval, path);
    r.read(j, "noise_std", spec.noise_std, path);
    return spec;
}

TrainConfig read_train(const ConfigReader& r, const json& j, const std::vector<std::string>& path) {
    r.only(j,
           {"lr", "schedule", "warmup_steps", "max_grad_norm", "batch_size", "epochs", "seed",
            "beta1", "beta2", "eps", "weight_decay", "decay_to_identity"},
           path);
    try {
        return train_config_from_partial_json(j);
    } catch (const ConfigError& e) {
        r.fail(path, e.what());
    } catch (const json::exception& e) {
        r.fail(path, fmt::format("'{}': {}", ConfigReader::join(path), e.what()));
    }
}

AdapterChoice read_adapter(const ConfigReader& r, const json& j, std::size_t index) {
    const std::vector<std::string> path = {"adapters"};
    AdapterChoice choice;
    try {
        if (j.is_string()) {
            choice.kind = AdapterKind::parse(j.get<std::string>());
            return choice;
        }
        r.only(j, {"kind", "r", "alpha", "dropout", "lr"}, path);
        std::string kind;
        r.read(j, "kind", kind, path);
        std::size_t rank = 0;
        r.read(j, "r", rank, path);
        if (kind == "lora") {
            choice.kind = AdapterKind::lora(rank);
        } else {
            choice.kind = AdapterKind::parse(kind);
        }
        if (choice.kind.type == AdapterType::LoRA && choice.kind.rank == 0) {
            r.fail(path, fmt::format("adapters[{}]: LoRA rank must be positive", index));
        }
        if (j.contains("alpha")) {
            double alpha = 0.0;
            r.read(j, "alpha", alpha, path);
            choice.lora_alpha = alpha;
        }
        r.read(j, "dropout", choice.lora_dropout, path);
        if (j.contains("lr")) {
            double lr = 0.0;
            r.read(j, "lr", lr, path);
            if (!(lr > 0.0)) {
                r.fail(path, fmt::format("adapters[{}].lr must be positive", index));
            }
            choice.lr = lr;
        }
    } catch (const ConfigError& e) {
        if (e.line() != 0) {
            throw;
        }
        r.fail(path, fmt::format("adapters[{}]: {}", index, e.what()));
    }
    if (!(choice.lora_dropout >= 0.0 && choice.lora_dropout < 1.0)) {
        r.fail(path, fmt::format("adapters[{}].dropout must lie in [0, 1)", index));
    }
    return choice;
}

double metric_of(const TrainResult& result, bool sequence_task) {
    if (sequence_task) {
        return result.eval_accuracy.value_or(0.0);
    }
    return result.eval_loss.value_or(result.final_loss);
}

bool is_sequence_task(TaskKind kind) {
    return kind == TaskKind::SeqCopy || kind == TaskKind::SeqSort;
}

// Frozen base for one seed: the teacher's W0, or a (possibly pretrained) random init.
Model base_model(const ExperimentConfig& config, const TaskInstance& task, std::uint64_t seed) {
    Model init = Model::init(config.model, seed);
    if (task.teacher) {
        std::vector<AdapterLayer> linears;
        linears.emplace_back(FrozenLinear(task.teacher->w0));
        return Model(config.model, init.linear_names(), std::move(linears), init.aux());
    }
    if (!config.pretrain) {
        return init;
    }
    const TaskInstance pre = make_task(config.pretrain->task, derive_seed({seed, kPretrainStream}));
    Model full = init.adapted(
        uniform_adapter_map(config.model, AdapterKind::full(), AdapterKind::full()));
    full.set_aux_trainable(true);
    TrainConfig tc = config.pretrain->train;
    tc.seed = derive_seed({tc.seed, seed, kPretrainStream});
    train(full, pre.train, tc, &pre.eval);
    return full.merged();
}

void clear_file(const fs::path& p) {
    std::error_code ec;
    fs::remove(p, ec);
}

struct CellResult {
    bool ok = false;
    std::string error;
    std::size_t trainable = 0;
    std::size_t total = 0;
    double metric = 0.0;
    double mean_r_hat = 0.0;
};

}  // namespace

TrainConfig train_config_from_partial_json(const json& j) {
    TrainConfig c;
    c.adamw.beta1 = j.value("beta1", c.adamw.beta1);
    c.adamw.beta2 = j.value("beta2", c.adamw.beta2);
    c.adamw.eps = j.value("eps", c.adamw.eps);
    c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    c.adamw.decay_to_identity = j.value("decay_to_identity", c.adamw.decay_to_identity);
    c.lr = j.value("lr", c.lr);
    const std::string schedule = j.value("schedule", std::string("cosine"));
    if (schedule == "cosine") {
        c.schedule = ScheduleKind::Cosine;
    } else if (schedule == "constant") {
        c.schedule = ScheduleKind::Constant;
    } else {
        throw ConfigError(fmt::format("unknown schedule '{}'", schedule));
    }
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    return c;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t line = line_at(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError(fmt::format("config:{}: malformed JSON ({})", line, e.what()), line);
    }
    const ConfigReader r(text);
    r.only(j,
           {"model", "head", "task", "adapters", "train", "analysis", "output_dir", "seeds",
            "pretrain"},
           {});
    ExperimentConfig c;
    if (!j.contains("model")) {
        r.fail({}, "'model' is required");
    }
    try {
        c.model = architecture_from_json(j["model"]);
    } catch (const ConfigError& e) {
        std::vector<std::string> path = {"model"};
        const std::string what = e.what();
        const auto quote = what.find('\'');
        if (quote != std::string::npos) {
            path.push_back(what.substr(quote + 1, what.find('\'', quote + 1) - quote - 1));
        }
        r.fail(path, what);
    }
    if (j.contains("head")) {
        std::string head;
        r.read(j, "head", head, {});
        try {
            c.head = AdapterKind::parse(head);
        } catch (const ConfigError& e) {
            r.fail({"head"}, e.what());
        }
    }
    if (!j.contains("task")) {
        r.fail({}, "'task' is required");
    }
    c.task = read_task(r, j["task"], {"task"});
    if (!j.contains("adapters") || !j["adapters"].is_array()) {
        r.fail({"adapters"}, "'adapters' must be a list");
    }
    for (std::size_t i = 0; i < j["adapters"].size(); ++i) {
        c.adapters.push_back(read_adapter(r, j["adapters"][i], i));
    }
    if (j.contains("train")) {
        c.train = read_train(r, j["train"], {"train"});
    }
    if (j.contains("analysis")) {
        r.only(j["analysis"], {"rank_threshold", "emit_svg"}, {"analysis"});
        r.read(j["analysis"], "rank_threshold", c.analysis.rank_threshold, {"analysis"});
        r.read(j["analysis"], "emit_svg", c.analysis.emit_svg, {"analysis"});
    }
    if (j.contains("output_dir")) {
        std::string dir;
        r.read(j, "output_dir", dir, {});
        c.output_dir = dir;
    }
    r.read(j, "seeds", c.seeds, {});
    if (j.contains("pretrain")) {
        r.only(j["pretrain"], {"task", "train"}, {"pretrain"});
        PretrainStage stage;
        if (!j["pretrain"].contains("task")) {
            r.fail({"pretrain"}, "'pretrain.task' is required");
        }
        stage.task = read_task(r, j["pretrain"]["task"], {"pretrain", "task"});
        if (j["pretrain"].contains("train")) {
            stage.train = read_train(r, j["pretrain"]["train"], {"pretrain", "train"});
        }
        c.pretrain = stage;
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        if (what.starts_with("seeds")) {
            r.fail({"seeds"}, what);
        }
        if (what.starts_with("adapters")) {
            r.fail({"adapters"}, what);
        }
        if (what.starts_with("analysis")) {
            r.fail({"analysis"}, what);
        }
        if (what.starts_with("pretrain")) {
            r.fail({"pretrain"}, what);
        }
        if (what.starts_with("train")) {
            r.fail({"train"}, what);
        }
        r.fail({"task"}, what);
    }
    return c;
}

namespace {

void validate_task_fit(const Architecture& model, const TaskSpec& task, const char* where) {
    if (is_sequence_task(task.kind)) {
        const auto* tf = std::get_if<TransformerSpec>(&model);
        if (tf == nullptr) {
            throw ConfigError(fmt::format("{}: sequence tasks need a tiny_transformer model", where));
        }
        if (task.vocab < 4 || task.seq_len < 2) {
            throw ConfigError(fmt::format("{}: sequence tasks need vocab >= 4 and seq_len >= 2",
                                          where));
        }
        if (task.vocab != tf->vocab || task.seq_len > tf->max_seq) {
            throw ConfigError(fmt::format(
                "{}: vocab must equal the model's ({}) and seq_len must not exceed max_seq ({})",
                where, tf->vocab, tf->max_seq));
        }
    } else {
        const auto* mlp = std::get_if<MlpSpec>(&model);
        if (mlp == nullptr || mlp->widths.size() != 2 || mlp->widths[0] != task.m ||
            mlp->widths[1] != task.n || mlp->bias) {
            throw ConfigError(fmt::format(
                "{}: teacher tasks need an mlp with widths [m, n] = [{}, {}] and no bias", where,
                task.m, task.n));
        }
        if (task.n < 2 || task.m < 2) {
            throw ConfigError(fmt::format("{}: teacher tasks need n, m >= 2", where));
        }
        if (task.kind == TaskKind::LowRankTeacher && task.r_true >= std::min(task.n, task.m)) {
            throw ConfigError(fmt::format("{}: r_true must be below min(n, m)", where));
        }
    }
    if (task.n_train == 0 || task.n_eval == 0) {
        throw ConfigError(fmt::format("{}: n_train and n_eval must be positive", where));
    }
    if (!(task.noise_std >= 0.0)) {
        throw ConfigError(fmt::format("{}: noise_std must be non-negative", where));
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) {
        throw ConfigError("seeds must list at least one seed");
    }
    if (adapters.empty()) {
        throw ConfigError("adapters must list at least one adapter kind");
    }
    std::set<std::string> labels;
    for (const auto& a : adapters) {
        if (!labels.insert(cell_dir_name(a)).second) {
            throw ConfigError(fmt::format("adapters lists '{}' twice", a.label()));
        }
    }
    if (!(analysis.rank_threshold > 0.0)) {
        throw ConfigError("analysis.rank_threshold must be positive");
    }
    validate_task_fit(model, task, "task");
    train.validate(task.n_train);
    if (pretrain) {
        if (!is_sequence_task(task.kind)) {
            throw ConfigError("pretrain is only supported for sequence tasks");
        }
        validate_task_fit(model, pretrain->task, "pretrain.task");
        pretrain->train.validate(pretrain->task.n_train);
    }
}

namespace {

json flat_train_json(const TrainConfig& t) {
    json j = to_json(t);
    for (const auto& [key, value] : j.at("optimizer").items()) {
        if (key != "name") {
            j[key] = value;
        }
    }
    j.erase("optimizer");
    return j;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
    json adapters = json::array();
    for (const auto& a : c.adapters) {
        json entry = {{"kind", a.kind.type == AdapterType::LoRA ? "lora" : a.kind.label()}};
        if (a.kind.type == AdapterType::LoRA) {
            entry["r"] = a.kind.rank;
            entry["dropout"] = a.lora_dropout;
            if (a.lora_alpha) {
                entry["alpha"] = *a.lora_alpha;
            }
        }
        if (a.lr) {
            entry["lr"] = *a.lr;
        }
        adapters.push_back(std::move(entry));
    }
    auto task_json = [](const TaskSpec& t) {
        return json{{"kind", task_kind_name(t.kind)}, {"n", t.n},
                    {"m", t.m},                       {"r_true", t.r_true},
                    {"vocab", t.vocab},               {"seq_len", t.seq_len},
                    {"n_train", t.n_train},           {"n_eval", t.n_eval},
                    {"noise_std", t.noise_std}};
    };
    json out = {{"model", to_json(c.model)},
                {"head", c.head.label()},
                {"task", task_json(c.task)},
                {"adapters", adapters},
                {"train", flat_train_json(c.train)},
                {"analysis",
                 {{"rank_threshold", c.analysis.rank_threshold}, {"emit_svg", c.analysis.emit_svg}}},
                {"output_dir", c.output_dir.generic_string()},
                {"seeds", c.seeds}};
    if (c.pretrain) {
        out["pretrain"] = {{"task", task_json(c.pretrain->task)},
                           {"train", flat_train_json(c.pretrain->train)}};
    }
    return out;
}

std::string cell_dir_name(const AdapterChoice& choice) {
    std::string name = choice.label();
    std::replace(name.begin(), name.end(), ':', '_');
    return name;
}

std::size_t resolve_threads(std::optional<std::size_t> flag) {
    if (flag) {
        if (*flag == 0) {
            throw ConfigError("--threads must be positive");
        }
        return *flag;
    }
    if (const char* env = std::getenv("HYPERLAB_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v <= 0) {
            throw ConfigError(fmt::format("HYPERLAB_THREADS must be a positive integer, got '{}'",
                                          env));
        }
        return static_cast<std::size_t>(v);
    }
    return 1;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "adapter,trainable_params,param_fraction,mean_final_loss_or_acc,std,mean_r_hat\n";
    for (const auto& row : rows) {
        out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", row.adapter,
                           row.trainable_params, row.param_fraction, row.mean_metric,
                           row.std_metric, row.mean_r_hat);
    }
    return out;
}

RunOutcome run_experiment(const ExperimentConfig& input, const std::string& config_text,
                          const RunOptions& options) {
    ExperimentConfig config = input;
    if (options.output_dir) {
        config.output_dir = *options.output_dir;
    }
    if (options.seeds) {
        config.seeds = *options.seeds;
    }
    if (options.no_svg) {
        config.analysis.emit_svg = false;
    }
    config.validate();

    const fs::path root = config.output_dir;
    fs::create_directories(root);
    clear_file(root / "summary.csv");
    clear_file(root / ".failed");
    write_file(root / "config.json", config_text);
    write_file(root / "resolved_config.json", to_json(config).dump(2) + "\n");
    const json header = {{"config_hash", content_hash(config_text)},
                         {"resolved_config_hash", content_hash(to_json(config).dump())},
                         {"threads", options.threads},
                         {"cells", config.adapters.size() * config.seeds.size()}};
    write_file(root / "run.json", header.dump(2) + "\n");

    const bool sequence = is_sequence_task(config.task.kind);
    const std::size_t n_seeds = config.seeds.size();
    const std::size_t n_cells = config.adapters.size() * n_seeds;
    std::vector<std::optional<TaskInstance>> tasks(n_seeds);
    std::vector<std::optional<Model>> bases(n_seeds);
    std::vector<CellResult> cells(n_cells);
    std::vector<std::string> base_errors(n_seeds);

    auto parallel_for = [&](std::size_t count, const auto& body) {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                }
            }
        };
        const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), count);
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < workers; ++t) {
            pool.emplace_back(worker);
        }
        worker();
        pool.clear();
        if (first_error) {
            std::rethrow_exception(first_error);
        }
    };

    parallel_for(n_seeds, [&](std::size_t s) {
        const std::uint64_t seed = config.seeds[s];
        tasks[s] = make_task(config.task, seed);
        try {
            bases[s] = base_model(config, *tasks[s], seed);
        } catch (const NumericError& e) {
            base_errors[s] = e.what();
            write_file(root / "base" / fmt::format("seed_{}", seed) / ".failed",
                       std::string(e.what()) + "\n");
            return;
        }
        save_weights(*bases[s], root / "base" / fmt::format("seed_{}", seed));
    });

    parallel_for(n_cells, [&](std::size_t c) {
        const std::size_t a = c / n_seeds;
        const std::size_t s = c % n_seeds;
        const AdapterChoice& choice = config.adapters[a];
        const std::uint64_t seed = config.seeds[s];
        const fs::path dir = root / cell_dir_name(choice) / fmt::format("seed_{}", seed);
        fs::create_directories(dir);
        clear_file(dir / ".failed");
        CellResult& cell = cells[c];
        if (!bases[s]) {
            cell.error = "base model failed: " + base_errors[s];
            write_file(dir / ".failed", cell.error + "\n");
            return;
        }
        const Model& base = *bases[s];
        AdapterOptions opts;
        opts.lora_alpha = choice.lora_alpha.value_or(0.0);
        opts.lora_dropout = choice.lora_dropout;
        Model model =
            base.adapted(uniform_adapter_map(config.model, choice.kind, config.head), opts, seed);
        TrainConfig tc = config.train;
        tc.lr = choice.lr.value_or(tc.lr);
        tc.seed = derive_seed({config.train.seed, seed});
        cell.trainable = model.trainable_count();
        cell.total = base.total_param_count();
        try {
            const TrainResult result = train(model, tasks[s]->train, tc, &tasks[s]->eval);
            write_file(dir / "checkpoint.json", checkpoint_to_string(model));
            write_file(dir / "result.json", to_json(result, tc).dump(1) + "\n");
            write_file(dir / "loss.csv", loss_curve_csv(result));
            const RankReport report = analyze_model(base, model, config.analysis.rank_threshold);
            write_file(dir / "rank.json", to_json(report).dump(1) + "\n");
            write_file(dir / "rank.csv", to_csv(report));
            if (config.analysis.emit_svg) {
                write_file(dir / "rank.svg",
                           to_svg(report, fmt::format("{} seed {}", choice.label(), seed)));
            } else {
                clear_file(dir / "rank.svg");
            }
            cell.metric = metric_of(result, sequence);
            cell.mean_r_hat = report.mean_r_hat();
            cell.ok = true;
        } catch (const NumericError& e) {
            cell.error = fmt::format("{} (iteration {})", e.what(), e.iteration());
            write_file(dir / ".failed", cell.error + "\n");
        }
    });

    RunOutcome outcome;
    outcome.output_dir = root;
    for (std::size_t a = 0; a < config.adapters.size(); ++a) {
        SummaryRow row;
        row.adapter = config.adapters[a].label();
        std::vector<double> metrics;
        double r_hat_total = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const CellResult& cell = cells[a * n_seeds + s];
            if (!cell.ok) {
                outcome.failures.push_back(fmt::format("{}/seed_{}: {}", row.adapter,
                                                       config.seeds[s], cell.error));
                continue;
            }
            row.trainable_params = cell.trainable;
            row.param_fraction =
                static_cast<double>(cell.trainable) / static_cast<double>(cell.total);
            metrics.push_back(cell.metric);
            r_hat_total += cell.mean_r_hat;
        }
        if (!metrics.empty()) {
            const double count = static_cast<double>(metrics.size());
            double mean = 0.0;
            for (double v : metrics) {
                mean += v;
            }
            mean /= count;
            double var = 0.0;
            for (double v : metrics) {
                var += (v - mean) * (v - mean);
            }
            row.mean_metric = mean;
            row.std_metric = metrics.size() > 1 ? std::sqrt(var / (count - 1.0)) : 0.0;
            row.mean_r_hat = r_hat_total / count;
        }
        outcome.rows.push_back(std::move(row));
    }
    if (outcome.ok()) {
        write_file(root / "summary.csv", summary_csv(outcome.rows));
    } else {
        std::string lines;
        for (const auto& f : outcome.failures) {
            lines += f + "\n";
        }
        write_file(root / ".failed", lines);
    }
    return outcome;
}

std::string inspect_checkpoint(std::string_view checkpoint_text) {
    const json doc = parse_checkpoint(checkpoint_text);
    std::string out;
    std::size_t total = 0;
    try {
        for (const auto& layer : doc.at("layers")) {
            const auto shape = layer.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2) {
                throw ParseError("checkpoint: layer shape must have two entries", 0);
            }
            const std::string kind = layer.at("kind").get<std::string>();
            const json& p = layer.at("params");
            std::size_t count = 0;
            std::string label = kind;
            std::string detail;
            auto stats = [](const std::string& name, const std::vector<double>& v) {
                if (v.empty()) {
                    return fmt::format("  {}: empty\n", name);
                }
                double lo = v.front();
                double hi = v.front();
                double sum = 0.0;
                double dist = 0.0;
                for (double x : v) {
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                    sum += x;
                    dist = std::max(dist, std::abs(x - 1.0));
                }
                return fmt::format("  {}: min={:.17g} max={:.17g} mean={:.17g} max|x-1|={:.17g}\n",
                                   name, lo, hi, sum / static_cast<double>(v.size()), dist);
            };
            if (kind == "hyper") {
                const auto a = p.at("a").get<std::vector<double>>();
                const auto b = p.at("b").get<std::vector<double>>();
                count = a.size() + b.size();
                detail = stats("a", a) + stats("b", b);
            } else if (kind == "lora") {
                count = p.at("B").size() + p.at("A").size();
                label = fmt::format("lora:{}", p.at("r").get<std::size_t>());
                detail = fmt::format("  alpha={:.17g} dropout={:.17g}\n",
                                     p.at("alpha").get<double>(), p.at("dropout").get<double>());
            } else if (kind == "full") {
                count = p.at("W").size();
            } else if (kind != "frozen") {
                throw ParseError(fmt::format("checkpoint: unknown layer kind '{}'", kind), 0);
            }
            if (layer.value("train_bias", false) && layer.contains("bias")) {
                count += layer["bias"].size();
            }
            total += count;
            out += fmt::format("{} kind={} shape={}x{} params={}\n",
                               layer.at("name").get<std::string>(), label, shape[0], shape[1],
                               count);
            out += detail;
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("checkpoint: {}", e.what()), 0);
    }
    out += fmt::format("total trainable params: {}\n", total);
    return out;
}

void merge_checkpoint(const fs::path& checkpoint, const fs::path& base, const fs::path& out) {
    const Model base_model = load_weights(base);
    const Model adapted = apply_checkpoint(base_model, parse_checkpoint(read_file(checkpoint)));
    save_weights(adapted.merged(), out);
}

RankReport rank_between(const fs::path& before, const fs::path& after, double threshold) {
    RankReport report = analyze_model(load_weights(before), load_weights(after), threshold);
    // Dense weight files carry no adapter kind.
    for (auto& rec : report.layers) {
        rec.kind = "dense";
    }
    return report;
}

}  // namespace hyperlab
