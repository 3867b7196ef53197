#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "streamnas/errors.hpp"
#include "streamnas/timeseries.hpp"

namespace streamnas {

/// Fixed-size amplitude + phase spectra, K retained components per channel.
/// Row-major [channels, K] storage for both matrices; phase lies in (-pi, pi].
struct SpectralRepresentation {
    std::size_t channels = 0;
    std::size_t k = 0;
    std::vector<double> amplitude;  // channels * k
    std::vector<double> phase;      // channels * k

    double amp_at(std::size_t c, std::size_t j) const { return amplitude[c * k + j]; }
    double pha_at(std::size_t c, std::size_t j) const { return phase[c * k + j]; }
};

/// Amplitude rows stacked over phase rows: [2*channels, K].
struct HeatmapRepresentation {
    std::size_t channels = 0;  // source channel count C; matrix has 2C rows
    std::size_t k = 0;
    std::vector<double> matrix;

    std::size_t rows() const { return 2 * channels; }
};

/// Resample a channel to `target_len` samples by linear interpolation in
/// time, treating the clip as one period (sample i lands at source position
/// i*L/target). A tone with j cycles per clip keeps exactly j cycles per
/// canonical window for any L, so spectra of different-length clips are
/// bin-comparable. target_len == source length is an exact copy.
inline std::vector<double> resample_linear(const std::vector<double>& source, std::size_t target_len) {
    const std::size_t n = source.size();
    if (n < 2) throw ContractError("resample: need at least 2 samples");
    if (target_len < 2) throw ContractError("resample: need at least 2 output samples");
    if (n == target_len) return source;
    std::vector<double> out(target_len);
    const double scale = static_cast<double>(n) / static_cast<double>(target_len);
    for (std::size_t i = 0; i < target_len; ++i) {
        const double pos = static_cast<double>(i) * scale;
        std::size_t lo = static_cast<std::size_t>(pos);
        if (lo >= n - 1) lo = n - 1;  // hold the last sample past the end
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        out[i] = source[lo] * (1.0 - frac) + source[hi] * frac;
    }
    return out;
}

namespace detail {

/// One-sided DFT of a real sequence; emits exactly len/2 + 1 (amplitude, phase)
/// pairs, normalised so a unit cosine at an aligned bin reports amplitude 1.
inline void real_dft_one_sided(const std::vector<double>& x, std::vector<double>& amp,
                               std::vector<double>& pha, double near_zero_amp) {
    const std::size_t n = x.size();
    const std::size_t bins = n / 2 + 1;
    amp.resize(bins);
    pha.resize(bins);
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;
    for (std::size_t j = 0; j < bins; ++j) {
        double re = 0.0, im = 0.0;
        const double w = two_pi * static_cast<double>(j) / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            const double angle = w * static_cast<double>(t);
            re += x[t] * std::cos(angle);
            im -= x[t] * std::sin(angle);
        }
        const bool shared_bin = j > 0 && !(n % 2 == 0 && j == bins - 1);
        const double norm = (shared_bin ? 2.0 : 1.0) / static_cast<double>(n);
        const double magnitude = std::hypot(re, im) * norm;
        amp[j] = magnitude;
        if (magnitude < near_zero_amp) {
            pha[j] = 0.0;  // noise-driven phase is meaningless at zero amplitude
        } else {
            double angle = std::atan2(im, re);
            if (angle <= -3.141592653589793238462643383279502884) angle = -angle;
            pha[j] = angle;
        }
    }
}

}  // namespace detail

struct SpectralOptions {
    std::size_t k = 120;              // retained frequency components
    double near_zero_amp = 1e-9;      // below this, phase is forced to 0
};

/// Encode a preprocessed series to a fixed [C, K] spectral pair. Channels are
/// first resampled to the canonical length 2*(K-1) so clips of any length
/// produce bin-comparable spectra, then transformed with a one-sided DFT.
inline SpectralRepresentation encode_spectral(const AttributeTimeSeries& series,
                                              const SpectralOptions& opts) {
    series.validate();
    const std::size_t length = series.length();
    const std::size_t k = opts.k;
    if (k < 2)
        throw ResolutionError("encode_spectral: K=" + std::to_string(k) + " is below the minimum of 2");
    if (length < 2)
        throw ResolutionError("encode_spectral: clip length L=" + std::to_string(length) +
                              " cannot support K=" + std::to_string(k) + " components");

    const std::size_t canonical_len = 2 * (k - 1);
    SpectralRepresentation rep;
    rep.channels = series.channels;
    rep.k = k;
    rep.amplitude.resize(series.channels * k);
    rep.phase.resize(series.channels * k);

    std::vector<double> column(length);
    std::vector<double> amp, pha;
    for (std::size_t c = 0; c < series.channels; ++c) {
        for (std::size_t t = 0; t < length; ++t) column[t] = series.at(t, c);
        const std::vector<double> canonical = resample_linear(column, canonical_len);
        detail::real_dft_one_sided(canonical, amp, pha, opts.near_zero_amp);
        // canonical_len is even, so the one-sided spectrum has exactly k bins
        std::copy(amp.begin(), amp.end(), rep.amplitude.begin() + c * k);
        std::copy(pha.begin(), pha.end(), rep.phase.begin() + c * k);
    }
    return rep;
}

/// Row-stack [amplitude; phase] into a 2C x K heatmap.
inline HeatmapRepresentation to_heatmap(const SpectralRepresentation& rep) {
    HeatmapRepresentation map;
    map.channels = rep.channels;
    map.k = rep.k;
    map.matrix.reserve(2 * rep.channels * rep.k);
    map.matrix.insert(map.matrix.end(), rep.amplitude.begin(), rep.amplitude.end());
    map.matrix.insert(map.matrix.end(), rep.phase.begin(), rep.phase.end());
    return map;
}

/// Split a heatmap back into its spectral pair.
inline SpectralRepresentation from_heatmap(const HeatmapRepresentation& map) {
    SpectralRepresentation rep;
    rep.channels = map.channels;
    rep.k = map.k;
    const std::size_t half = map.channels * map.k;
    rep.amplitude.assign(map.matrix.begin(), map.matrix.begin() + half);
    rep.phase.assign(map.matrix.begin() + half, map.matrix.end());
    return rep;
}

}  // namespace streamnas
