#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "streamnas/errors.hpp"

namespace streamnas {

/// Prediction/ground-truth pairs for one evaluation.
struct PredictionSet {
    struct Entry {
        std::string clip_id;
        double predicted = 0.0;
        double truth = 0.0;
    };
    std::vector<Entry> entries;

    void add(std::string clip_id, double predicted, double truth) {
        entries.push_back({std::move(clip_id), predicted, truth});
    }

    void validate() const {
        if (entries.empty()) throw ContractError("prediction set is empty");
        std::set<std::string> ids;
        for (const auto& entry : entries) {
            if (!std::isfinite(entry.predicted) || !std::isfinite(entry.truth))
                throw ContractError("prediction set contains a non-finite value for clip '" +
                                    entry.clip_id + "'");
            if (!ids.insert(entry.clip_id).second)
                throw ContractError("duplicate clip_id '" + entry.clip_id + "' in prediction set");
        }
    }
};

inline double rmse(const PredictionSet& preds) {
    preds.validate();
    double sum_sq = 0.0;
    for (const auto& entry : preds.entries) {
        const double err = entry.predicted - entry.truth;
        sum_sq += err * err;
    }
    return std::sqrt(sum_sq / static_cast<double>(preds.entries.size()));
}

inline double mae(const PredictionSet& preds) {
    preds.validate();
    double sum_abs = 0.0;
    for (const auto& entry : preds.entries)
        sum_abs += std::abs(entry.predicted - entry.truth);
    return sum_abs / static_cast<double>(preds.entries.size());
}

}  // namespace streamnas
