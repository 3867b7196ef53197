#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "streamnas/dataset.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/rng.hpp"

namespace streamnas {

/// Planted-signal benchmark spec. Labels drive (a) the amplitude of one
/// frequency band in two designated AU channels, (b) a coherent oscillation
/// across one landmark region, and (c) a redundant copy of cue (a) in a pose
/// channel, so stream-specific learnability and fusion redundancy are both
/// exercised. Everything else is distractor oscillation plus Gaussian noise.
struct SyntheticSpec {
    std::size_t num_clips = 160;  // >= 107 training clips at the default split
    std::size_t min_frames = 200;
    std::size_t max_frames = 1200;

    std::size_t au_channels = 20;
    std::size_t gaze_channels = 4;
    std::size_t pose_channels = 3;
    std::size_t landmark_points = 68;
    std::size_t landmark_arity = 2;

    std::vector<std::size_t> au_cue_channels = {2, 7};
    double au_cue_cycles = 8.0;  // cycles per clip; lands near canonical bin 8
    std::size_t pose_cue_channel = 0;
    std::vector<std::size_t> landmark_cue_nodes = {48, 51, 54, 57};  // mouth corners/midpoints
    double landmark_cue_cycles = 5.0;

    double amp_base = 0.2;
    double amp_scale = 0.3;  // cue amplitude = base + scale * label
    double noise_sigma = 0.5;
    double distractor_amp = 1.0;

    double label_min = 0.0;
    double label_max = 24.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_clips == 0) throw ContractError("synthetic: need at least one clip");
        if (min_frames < 4 || max_frames < min_frames)
            throw ContractError("synthetic: bad frame range");
        if (label_max <= label_min) throw ContractError("synthetic: bad label range");
        for (std::size_t c : au_cue_channels)
            if (c >= au_channels) throw ContractError("synthetic: AU cue channel out of range");
        if (pose_cue_channel >= pose_channels)
            throw ContractError("synthetic: pose cue channel out of range");
        for (std::size_t n : landmark_cue_nodes)
            if (n >= landmark_points)
                throw ContractError("synthetic: landmark cue node out of range");
    }
};

namespace detail {

inline void add_tone(AttributeTimeSeries& series, std::size_t channel, double cycles,
                     double amplitude, double phase) {
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;
    const std::size_t len = series.length();
    for (std::size_t t = 0; t < len; ++t)
        series.at(t, channel) += amplitude * std::cos(two_pi * cycles * static_cast<double>(t) /
                                                          static_cast<double>(len) +
                                                      phase);
}

inline AttributeTimeSeries blank_series(const std::string& id, std::size_t channels,
                                        std::size_t length) {
    AttributeTimeSeries series;
    series.attribute_id = id;
    series.channels = channels;
    series.frames.assign(length * channels, 0.0);
    series.confidence.assign(length, 1.0);
    series.success.assign(length, 1);
    return series;
}

}  // namespace detail

inline std::vector<ClipRecord> generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    std::vector<ClipRecord> records;
    records.reserve(spec.num_clips);

    char id_buffer[16];
    for (std::size_t i = 0; i < spec.num_clips; ++i) {
        Rng rng = root.split(i);
        std::snprintf(id_buffer, sizeof(id_buffer), "clip%04zu", i);

        ClipRecord record;
        record.clip_id = id_buffer;
        record.label = rng.uniform(spec.label_min, spec.label_max);
        const double cue_amp = spec.amp_base + spec.amp_scale * record.label;
        const std::size_t length =
            spec.min_frames + rng.uniform_index(spec.max_frames - spec.min_frames + 1);

        // AUs: planted band amplitude in the cue channels, distractors elsewhere.
        AttributeTimeSeries aus = detail::blank_series("aus", spec.au_channels, length);
        for (std::size_t c = 0; c < spec.au_channels; ++c) {
            const bool is_cue =
                std::find(spec.au_cue_channels.begin(), spec.au_cue_channels.end(), c) !=
                spec.au_cue_channels.end();
            if (is_cue) {
                detail::add_tone(aus, c, spec.au_cue_cycles, cue_amp, rng.uniform(0.0, 6.28));
            } else {
                detail::add_tone(aus, c, 2.0 + rng.uniform_index(3), spec.distractor_amp,
                                 rng.uniform(0.0, 6.28));
            }
        }

        // Gaze carries no cue: distractors only.
        AttributeTimeSeries gaze = detail::blank_series("gaze", spec.gaze_channels, length);
        for (std::size_t c = 0; c < spec.gaze_channels; ++c)
            detail::add_tone(gaze, c, 1.0 + rng.uniform_index(4), spec.distractor_amp,
                             rng.uniform(0.0, 6.28));

        // Pose: redundant copy of the AU cue in one channel.
        AttributeTimeSeries pose = detail::blank_series("pose", spec.pose_channels, length);
        for (std::size_t c = 0; c < spec.pose_channels; ++c) {
            if (c == spec.pose_cue_channel)
                detail::add_tone(pose, c, spec.au_cue_cycles, cue_amp, rng.uniform(0.0, 6.28));
            else
                detail::add_tone(pose, c, 1.0 + rng.uniform_index(4), spec.distractor_amp,
                                 rng.uniform(0.0, 6.28));
        }

        // Landmarks: static face shape plus a coherent label-scaled oscillation
        // across the cue region's x coordinates (one shared phase per clip).
        AttributeTimeSeries landmarks = detail::blank_series(
            "landmarks", spec.landmark_points * spec.landmark_arity, length);
        const double coherent_phase = rng.uniform(0.0, 6.28);
        for (std::size_t p = 0; p < spec.landmark_points; ++p) {
            for (std::size_t d = 0; d < spec.landmark_arity; ++d) {
                const std::size_t channel = p * spec.landmark_arity + d;
                const double base_pos = 100.0 + 10.0 * std::cos(0.37 * static_cast<double>(p) +
                                                                1.3 * static_cast<double>(d));
                for (std::size_t t = 0; t < length; ++t) landmarks.at(t, channel) = base_pos;
                const bool is_cue_node =
                    std::find(spec.landmark_cue_nodes.begin(), spec.landmark_cue_nodes.end(), p) !=
                    spec.landmark_cue_nodes.end();
                if (is_cue_node && d == 0)
                    detail::add_tone(landmarks, channel, spec.landmark_cue_cycles, cue_amp,
                                     coherent_phase);
                else
                    detail::add_tone(landmarks, channel, 1.0 + rng.uniform_index(3),
                                     spec.distractor_amp, rng.uniform(0.0, 6.28));
            }
        }

        for (AttributeTimeSeries* series : {&aus, &gaze, &pose, &landmarks})
            for (double& v : series->frames) v += rng.normal(0.0, spec.noise_sigma);

        record.attributes["aus"] = std::move(aus);
        record.attributes["gaze"] = std::move(gaze);
        record.attributes["pose"] = std::move(pose);
        record.attributes["landmarks"] = std::move(landmarks);
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace streamnas
