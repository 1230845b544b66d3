// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/rank_analysis.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/svd.hpp"

namespace hyperlab {

using nlohmann::json;

LayerRankRecord analyze_layer(const Matrix& w0, const Matrix& w_prime, double threshold,
                              std::size_t top_k) {
    if (!(threshold > 0.0)) {
        throw std::invalid_argument("analyze_layer: threshold must be positive");
    }
    if (w0.rows() != w_prime.rows() || w0.cols() != w_prime.cols()) {
        throw DimensionError(fmt::format("analyze_layer: W0 is {}x{} but W' is {}x{}", w0.rows(),
                                         w0.cols(), w_prime.rows(), w_prime.cols()));
    }
    LayerRankRecord rec;
    rec.n = w0.rows();
    rec.m = w0.cols();
    rec.rank_w0 = exact_rank(w0);
    const Spectrum delta = svd_values(subtract(w_prime, w0));
    rec.count_nontrivial = count_at_or_above(delta, threshold);
    rec.bound = std::min({2 * rec.rank_w0, rec.n, rec.m});
    rec.bound_violated = rec.count_nontrivial > rec.bound;
    rec.top_sigmas.assign(delta.values.begin(),
                          delta.values.begin() +
                              static_cast<std::ptrdiff_t>(std::min(top_k, delta.values.size())));
    if (rec.rank_w0 == 0) {
        rec.skipped = true;
        return rec;
    }
    rec.r_hat = static_cast<double>(rec.count_nontrivial) / static_cast<double>(rec.rank_w0);
    return rec;
}

RankReport analyze_model(const Model& before, const Model& after, double threshold) {
    if (before.architecture() != after.architecture() ||
        before.linear_names() != after.linear_names()) {
        throw StructuralError("analyze_model: models do not share an architecture");
    }
    RankReport report;
    report.threshold = threshold;
    report.rank_relative_tolerance = kExactRankRelTol;
    for (std::size_t i = 0; i < before.linear_count(); ++i) {
        const std::string& name = before.linear_names()[i];
        LayerRankRecord rec = analyze_layer(before.linear(i).effective_weight(),
                                            after.linear(i).effective_weight(), threshold);
        rec.layer_name = name;
        rec.kind = after.linear(i).kind().label();
        if (rec.skipped) {
            report.warnings.push_back(fmt::format("{}: W0 has rank 0, layer skipped", name));
            continue;
        }
        if (rec.bound_violated && after.linear(i).kind().type == AdapterType::Hyper) {
            throw NumericError(fmt::format("{}: {} non-trivial singular values exceed the "
                                           "diagonal-scaling rank bound {}",
                                           name, rec.count_nontrivial, rec.bound),
                               i);
        }
        report.layers.push_back(std::move(rec));
    }
    return report;
}

double RankReport::mean_r_hat() const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& rec : layers) {
        if (rec.kind != "frozen") {
            total += rec.r_hat;
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

json to_json(const RankReport& report) {
    json layers = json::array();
    for (const auto& rec : report.layers) {
        layers.push_back({{"layer", rec.layer_name},
                          {"kind", rec.kind},
                          {"n", rec.n},
                          {"m", rec.m},
                          {"rank_w0", rec.rank_w0},
                          {"count_nontrivial", rec.count_nontrivial},
                          {"r_hat", rec.r_hat},
                          {"bound", rec.bound},
                          {"bound_violated", rec.bound_violated},
                          {"top_sigmas", rec.top_sigmas}});
    }
    return {{"threshold_abs", report.threshold},
            {"rank_w0_threshold_rel", report.rank_relative_tolerance},
            {"mean_r_hat", report.mean_r_hat()},
            {"layers", layers},
            {"warnings", report.warnings}};
}

std::string to_csv(const RankReport& report) {
    std::string out = "layer,n,m,rank_w0,count,r_hat\n";
    for (const auto& rec : report.layers) {
        out += fmt::format("{},{},{},{},{},{:.17g}\n", rec.layer_name, rec.n, rec.m, rec.rank_w0,
                           rec.count_nontrivial, rec.r_hat);
    }
    return out;
}

std::string to_svg(const RankReport& report, const std::string& title) {
    // Group by the trailing component: blocks.1.q_proj -> q_proj.
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<const LayerRankRecord*>> groups;
    for (const auto& rec : report.layers) {
        const auto dot = rec.layer_name.rfind('.');
        std::string key = dot == std::string::npos ? rec.layer_name : rec.layer_name.substr(dot + 1);
        if (!groups.contains(key)) {
            group_order.push_back(key);
        }
        groups[key].push_back(&rec);
    }

    constexpr double kBar = 14.0;
    constexpr double kGap = 4.0;
    constexpr double kGroupGap = 24.0;
    constexpr double kPlotHeight = 200.0;
    constexpr double kLeft = 50.0;
    constexpr double kTop = 40.0;
    double top_value = 1.0;
    for (const auto& rec : report.layers) {
        top_value = std::max(top_value, rec.r_hat);
    }

    std::string bars;
    double x = kLeft + kGroupGap / 2.0;
    for (const auto& key : group_order) {
        const double group_start = x;
        for (const auto* rec : groups[key]) {
            const double h = kPlotHeight * rec->r_hat / top_value;
            bars += fmt::format(
                "  <rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" "
                "fill=\"#3b6fb6\"><title>{} r_hat={:.4f}</title></rect>\n",
                x, kTop + kPlotHeight - h, kBar, h, rec->layer_name, rec->r_hat);
            x += kBar + kGap;
        }
        bars += fmt::format(
            "  <text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            (group_start + x - kGap) / 2.0, kTop + kPlotHeight + 16.0, key);
        x += kGroupGap;
    }
    const double width = std::max(x + kLeft / 2.0, 240.0);
    const double height = kTop + kPlotHeight + 40.0;

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
        "viewBox=\"0 0 {:.0f} {:.0f}\" font-family=\"sans-serif\">\n",
        width, height, width, height);
    svg += fmt::format("  <text x=\"{:.1f}\" y=\"20\" font-size=\"14\">{} (threshold {:g})</text>\n",
                       kLeft, title, report.threshold);
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = top_value * tick / 4.0;
        const double y = kTop + kPlotHeight - kPlotHeight * tick / 4.0;
        svg += fmt::format(
            "  <line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n"
            "  <text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"end\">{:.2f}</text>\n",
            kLeft, y, width - kLeft / 2.0, y, kLeft - 4.0, y + 3.0, v);
    }
    svg += bars;
    svg += "</svg>\n";
    return svg;
}

}  // namespace hyperlab
