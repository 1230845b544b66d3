// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlab/matrix.hpp"
#include "hyperlab/model.hpp"

namespace hyperlab {

inline constexpr double kDefaultRankThreshold = 1e-2;

/// Spectrum summary of one update ΔW = W' - W0.
struct LayerRankRecord {
    std::string layer_name;
    std::string kind;  // adapter label of the tuned layer
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t rank_w0 = 0;           // relative cutoff
    std::size_t count_nontrivial = 0;  // sigma_i >= threshold, absolute
    double r_hat = 0.0;                // count_nontrivial / rank_w0
    std::size_t bound = 0;             // min(2 rank_w0, n, m)
    bool bound_violated = false;
    bool skipped = false;  // rank_w0 == 0
    std::vector<double> top_sigmas;
};

struct RankReport {
    double threshold = kDefaultRankThreshold;
    double rank_relative_tolerance = 0.0;
    std::vector<LayerRankRecord> layers;
    std::vector<std::string> warnings;

    /// Mean r̂ over layers whose tuned kind is not frozen; 0 if none.
    double mean_r_hat() const;
};

LayerRankRecord analyze_layer(const Matrix& w0, const Matrix& w_prime,
                              double threshold = kDefaultRankThreshold, std::size_t top_k = 8);

/// One record per linear layer in forward order. Throws StructuralError on an
/// architecture mismatch and NumericError if a Hyper layer breaks the rank bound.
RankReport analyze_model(const Model& before, const Model& after,
                         double threshold = kDefaultRankThreshold);

nlohmann::json to_json(const RankReport& report);
/// "layer,n,m,rank_w0,count,r_hat" rows.
std::string to_csv(const RankReport& report);
/// Bar chart of r̂ per layer, grouped by projection name.
std::string to_svg(const RankReport& report, const std::string& title = "normalized update rank");

}  // namespace hyperlab
