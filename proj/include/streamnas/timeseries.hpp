#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "streamnas/errors.hpp"

namespace streamnas {

/// Canonical attribute identifiers. Landmark series keep their original
/// values through preprocessing; every other attribute is median-centred.
inline bool is_landmark_attribute(const std::string& attribute_id) {
    return attribute_id == "landmarks";
}

/// Variable-length multi-channel per-clip signal for one facial attribute.
/// Row-major frame storage: frame t's channels live at [t*channels, (t+1)*channels).
struct AttributeTimeSeries {
    std::string attribute_id;
    std::size_t channels = 0;
    std::vector<double> frames;        // length * channels values
    std::vector<double> confidence;    // length entries in [0,1]
    std::vector<std::uint8_t> success; // length entries

    std::size_t length() const { return channels == 0 ? 0 : frames.size() / channels; }

    double at(std::size_t frame, std::size_t channel) const {
        return frames[frame * channels + channel];
    }
    double& at(std::size_t frame, std::size_t channel) {
        return frames[frame * channels + channel];
    }

    void validate() const {
        if (channels == 0) throw ContractError("time series: channel count must be positive");
        if (frames.size() % channels != 0)
            throw ContractError("time series: frame buffer not divisible by channel count");
        const std::size_t len = length();
        if (confidence.size() != len || success.size() != len)
            throw ContractError("time series: confidence/success length mismatch");
    }
};

inline double channel_median(std::vector<double> values) {
    const std::size_t n = values.size();
    auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    double m = *mid;
    if (n % 2 == 0) {
        const double lower = *std::max_element(values.begin(), mid);
        m = 0.5 * (m + lower);
    }
    return m;
}

struct PreprocessOptions {
    double confidence_threshold = 0.8;
    std::size_t k_min = 16;  // spectra below this frame count are meaningless
};

/// Drop failed/low-confidence frames, then centre each channel on its median
/// (landmark series are left unshifted to retain spatial information).
/// Clips with fewer than 2*k_min surviving frames are rejected.
inline AttributeTimeSeries preprocess(const AttributeTimeSeries& raw, const PreprocessOptions& opts) {
    raw.validate();
    if (opts.confidence_threshold < 0.0 || opts.confidence_threshold > 1.0)
        throw ContractError("preprocess: confidence threshold must lie in [0,1]");

    AttributeTimeSeries out;
    out.attribute_id = raw.attribute_id;
    out.channels = raw.channels;
    const std::size_t len = raw.length();
    for (std::size_t t = 0; t < len; ++t) {
        if (!raw.success[t] || raw.confidence[t] < opts.confidence_threshold) continue;
        out.frames.insert(out.frames.end(), raw.frames.begin() + t * raw.channels,
                          raw.frames.begin() + (t + 1) * raw.channels);
        out.confidence.push_back(raw.confidence[t]);
        out.success.push_back(1);
    }

    const std::size_t kept = out.length();
    if (kept < 2 * opts.k_min)
        throw ClipRejected("preprocess: clip '" + raw.attribute_id + "' has " + std::to_string(kept) +
                           " usable frames, fewer than the minimum " + std::to_string(2 * opts.k_min));

    if (!is_landmark_attribute(out.attribute_id)) {
        for (std::size_t c = 0; c < out.channels; ++c) {
            std::vector<double> column(kept);
            for (std::size_t t = 0; t < kept; ++t) column[t] = out.at(t, c);
            const double median = channel_median(std::move(column));
            for (std::size_t t = 0; t < kept; ++t) out.at(t, c) -= median;
        }
    }
    return out;
}

}  // namespace streamnas
