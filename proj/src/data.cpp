// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/data.hpp"

#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "hyperlab/errors.hpp"

namespace hyperlab {

using nlohmann::json;

std::size_t dataset_size(const Dataset& data) {
    return std::visit([](const auto& d) { return d.size(); }, data);
}

Dataset gather(const Dataset& data, std::span<const std::size_t> indices) {
    if (const auto* reg = std::get_if<RegressionData>(&data)) {
        Matrix x(indices.size(), reg->x.cols());
        Matrix y(indices.size(), reg->y.cols());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            auto sx = reg->x.row(indices[r]);
            auto sy = reg->y.row(indices[r]);
            std::copy(sx.begin(), sx.end(), x.row(r).begin());
            std::copy(sy.begin(), sy.end(), y.row(r).begin());
        }
        return RegressionData{std::move(x), std::move(y)};
    }
    const auto& seq = std::get<SequenceData>(data);
    SequenceData out;
    out.count = indices.size();
    out.len = seq.len;
    out.vocab = seq.vocab;
    out.tokens.reserve(out.count * out.len);
    out.targets.reserve(out.count * out.len);
    for (std::size_t i : indices) {
        auto t = seq.sequence(i);
        auto g = seq.target(i);
        out.tokens.insert(out.tokens.end(), t.begin(), t.end());
        out.targets.insert(out.targets.end(), g.begin(), g.end());
    }
    return out;
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    return gather(data, idx);
}

std::string to_jsonl(const Dataset& data) {
    std::string out;
    if (const auto* reg = std::get_if<RegressionData>(&data)) {
        for (std::size_t r = 0; r < reg->size(); ++r) {
            auto x = reg->x.row(r);
            auto y = reg->y.row(r);
            json line = {{"x", std::vector<double>(x.begin(), x.end())},
                         {"y", std::vector<double>(y.begin(), y.end())}};
            out += line.dump();
            out += '\n';
        }
        return out;
    }
    const auto& seq = std::get<SequenceData>(data);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        auto t = seq.sequence(i);
        auto g = seq.target(i);
        json line = {{"tokens", std::vector<int>(t.begin(), t.end())},
                     {"target", std::vector<int>(g.begin(), g.end())}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> ys;
    SequenceData seq;
    bool is_seq = false;
    bool first = true;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (line.empty()) {
            continue;
        }
        json row;
        try {
            row = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(fmt::format("dataset: {}", e.what()), line_start + e.byte);
        }
        if (first) {
            is_seq = row.contains("tokens");
            first = false;
        }
        try {
            if (is_seq) {
                auto tokens = row.at("tokens").get<std::vector<int>>();
                auto target = row.at("target").get<std::vector<int>>();
                if (seq.count == 0) {
                    seq.len = tokens.size();
                }
                if (tokens.size() != seq.len || target.size() != seq.len) {
                    throw ParseError("dataset: ragged sequence lengths", line_start);
                }
                for (int t : tokens) {
                    seq.vocab = std::max(seq.vocab, static_cast<std::size_t>(t) + 1);
                }
                seq.tokens.insert(seq.tokens.end(), tokens.begin(), tokens.end());
                seq.targets.insert(seq.targets.end(), target.begin(), target.end());
                ++seq.count;
            } else {
                xs.push_back(row.at("x").get<std::vector<double>>());
                ys.push_back(row.at("y").get<std::vector<double>>());
                if (xs.back().size() != xs.front().size() || ys.back().size() != ys.front().size()) {
                    throw ParseError("dataset: ragged feature widths", line_start);
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("dataset: {}", e.what()), line_start);
        }
    }
    if (is_seq) {
        return seq;
    }
    const std::size_t in_dim = xs.empty() ? 0 : xs.front().size();
    const std::size_t out_dim = ys.empty() ? 0 : ys.front().size();
    std::vector<double> xflat;
    std::vector<double> yflat;
    for (std::size_t r = 0; r < xs.size(); ++r) {
        xflat.insert(xflat.end(), xs[r].begin(), xs[r].end());
        yflat.insert(yflat.end(), ys[r].begin(), ys[r].end());
    }
    return RegressionData{Matrix(xs.size(), in_dim, std::move(xflat)),
                          Matrix(ys.size(), out_dim, std::move(yflat))};
}

}  // namespace hyperlab
