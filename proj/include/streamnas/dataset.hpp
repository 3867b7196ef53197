#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "streamnas/checkpoint.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/landmark_graph.hpp"
#include "streamnas/rng.hpp"
#include "streamnas/spectral.hpp"
#include "streamnas/timeseries.hpp"

namespace streamnas {

/// One clip: every facial attribute's raw series plus the regression label.
struct ClipRecord {
    std::string clip_id;
    std::map<std::string, AttributeTimeSeries> attributes;
    double label = 0.0;
};

/// One clip after preprocessing + spectral encoding: fixed-size heatmaps per
/// attribute and a landmark graph where the layout applies.
struct EncodedClip {
    std::string clip_id;
    double label = 0.0;
    std::map<std::string, HeatmapRepresentation> heatmaps;
    std::map<std::string, LandmarkGraph> graphs;
};

struct EncodeOptions {
    PreprocessOptions preprocess;
    SpectralOptions spectral;
    LandmarkLayout layout = ibug68_layout(2);
};

inline EncodedClip encode_clip(const ClipRecord& record, const EncodeOptions& opts) {
    EncodedClip clip;
    clip.clip_id = record.clip_id;
    clip.label = record.label;
    for (const auto& [attr, series] : record.attributes) {
        const AttributeTimeSeries prepped = preprocess(series, opts.preprocess);
        const SpectralRepresentation rep = encode_spectral(prepped, opts.spectral);
        clip.heatmaps[attr] = to_heatmap(rep);
        if (rep.channels == opts.layout.num_points * opts.layout.coord_arity)
            clip.graphs[attr] = build_landmark_graph(rep, opts.layout);
    }
    return clip;
}

inline std::vector<EncodedClip> encode_dataset(const std::vector<ClipRecord>& records,
                                               const EncodeOptions& opts) {
    std::vector<EncodedClip> encoded;
    encoded.reserve(records.size());
    for (const auto& record : records) encoded.push_back(encode_clip(record, opts));
    return encoded;
}

// ---------------------------------------------------------------------------
// CSV contract. One file per clip per attribute with header
// frame,timestamp,confidence,success,<channel...>; labels.csv maps
// clip_id -> score. Doubles print as %.17g so writes are byte-stable and
// round-trip exactly.
// ---------------------------------------------------------------------------

namespace csvio {

inline std::string format_double(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

inline double parse_double(const std::string& field, const std::string& context) {
    try {
        std::size_t consumed = 0;
        const double value = std::stod(field, &consumed);
        if (consumed != field.size()) throw std::invalid_argument(field);
        return value;
    } catch (const std::exception&) {
        throw IngestError("malformed number '" + field + "' in " + context);
    }
}

}  // namespace csvio

inline void write_series_csv(const std::string& path, const AttributeTimeSeries& series,
                             double fps = 30.0) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "frame,timestamp,confidence,success";
    for (std::size_t c = 0; c < series.channels; ++c) out << ",ch" << c;
    out << "\n";
    const std::size_t len = series.length();
    for (std::size_t t = 0; t < len; ++t) {
        out << t << ',' << csvio::format_double(static_cast<double>(t) / fps) << ','
            << csvio::format_double(series.confidence[t]) << ',' << (series.success[t] ? 1 : 0);
        for (std::size_t c = 0; c < series.channels; ++c)
            out << ',' << csvio::format_double(series.at(t, c));
        out << "\n";
    }
}

inline AttributeTimeSeries read_series_csv(const std::string& path, const std::string& attribute_id) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IngestError("missing header row in " + path);
    const auto header = csvio::split_line(line);
    if (header.size() < 5 || header[0] != "frame")
        throw IngestError("bad header in " + path + " (expected frame,timestamp,confidence,success,...)");
    const std::size_t channels = header.size() - 4;

    AttributeTimeSeries series;
    series.attribute_id = attribute_id;
    series.channels = channels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = csvio::split_line(line);
        if (fields.size() != header.size())
            throw IngestError(path + ":" + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, header has " +
                              std::to_string(header.size()));
        const std::string context = path + ":" + std::to_string(line_no);
        series.confidence.push_back(csvio::parse_double(fields[2], context));
        series.success.push_back(csvio::parse_double(fields[3], context) != 0.0 ? 1 : 0);
        for (std::size_t c = 0; c < channels; ++c)
            series.frames.push_back(csvio::parse_double(fields[4 + c], context));
    }
    series.validate();
    return series;
}

inline void write_labels_csv(const std::string& path,
                             const std::vector<std::pair<std::string, double>>& labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "clip_id,score\n";
    for (const auto& [clip_id, score] : labels)
        out << clip_id << ',' << csvio::format_double(score) << "\n";
}

inline std::vector<std::pair<std::string, double>> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || csvio::split_line(line) != std::vector<std::string>{"clip_id", "score"})
        throw IngestError("bad labels header in " + path);
    std::vector<std::pair<std::string, double>> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = csvio::split_line(line);
        if (fields.size() != 2)
            throw IngestError(path + ":" + std::to_string(line_no) + " expected clip_id,score");
        labels.emplace_back(fields[0],
                            csvio::parse_double(fields[1], path + ":" + std::to_string(line_no)));
    }
    return labels;
}

/// Write a dataset as the CSV directory contract:
/// <dir>/labels.csv plus <dir>/<clip_id>/<attribute>.csv.
inline void write_dataset(const std::string& dir, const std::vector<ClipRecord>& records) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::pair<std::string, double>> labels;
    for (const auto& record : records) {
        labels.emplace_back(record.clip_id, record.label);
        const fs::path clip_dir = fs::path(dir) / record.clip_id;
        fs::create_directories(clip_dir);
        for (const auto& [attr, series] : record.attributes)
            write_series_csv((clip_dir / (attr + ".csv")).string(), series);
    }
    write_labels_csv((fs::path(dir) / "labels.csv").string(), labels);
}

// ---------------------------------------------------------------------------
// Ingestion.
// ---------------------------------------------------------------------------

struct IngestResult {
    std::vector<ClipRecord> records;
    std::vector<std::pair<std::string, std::string>> rejected;  // clip_id, reason
};

/// Read a CSV directory back into records. Structural problems (missing
/// labels, malformed CSV, duplicate ids) raise an itemized IngestError;
/// clips that fail preprocessing minimums land in the rejection report.
inline IngestResult ingest(const std::string& dir, const PreprocessOptions& preprocess_opts) {
    namespace fs = std::filesystem;
    IngestResult result;
    if (!fs::exists(dir)) throw IngestError("dataset directory does not exist: " + dir);
    const fs::path labels_path = fs::path(dir) / "labels.csv";
    if (!fs::exists(labels_path)) {
        // an empty directory yields an empty dataset and empty report
        bool any_clip_dir = false;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_directory()) any_clip_dir = true;
        if (!any_clip_dir) return result;
        throw IngestError("missing labels.csv in " + dir);
    }

    std::vector<std::string> problems;
    std::map<std::string, double> labels;
    for (const auto& [clip_id, score] : read_labels_csv(labels_path.string())) {
        if (labels.count(clip_id)) problems.push_back("duplicate clip_id '" + clip_id + "' in labels.csv");
        labels[clip_id] = score;
    }

    std::vector<std::string> clip_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) clip_dirs.push_back(entry.path().filename().string());
    std::sort(clip_dirs.begin(), clip_dirs.end());

    for (const std::string& clip_id : clip_dirs) {
        if (!labels.count(clip_id)) {
            problems.push_back("clip '" + clip_id + "' has no label");
            continue;
        }
        ClipRecord record;
        record.clip_id = clip_id;
        record.label = labels.at(clip_id);
        std::string rejection;
        try {
            for (const auto& file : fs::directory_iterator(fs::path(dir) / clip_id)) {
                if (file.path().extension() != ".csv") continue;
                const std::string attr = file.path().stem().string();
                record.attributes[attr] = read_series_csv(file.path().string(), attr);
            }
            if (record.attributes.empty()) {
                problems.push_back("clip '" + clip_id + "' has no attribute files");
                continue;
            }
            for (const auto& [attr, series] : record.attributes)
                preprocess(series, preprocess_opts);  // viability check only
        } catch (const ClipRejected& e) {
            result.rejected.emplace_back(clip_id, e.what());
            continue;
        } catch (const IngestError& e) {
            problems.push_back(e.what());
            continue;
        }
        result.records.push_back(std::move(record));
    }

    for (const auto& [clip_id, score] : labels)
        if (std::find(clip_dirs.begin(), clip_dirs.end(), clip_id) == clip_dirs.end())
            problems.push_back("label for '" + clip_id + "' has no clip directory");

    if (!problems.empty()) {
        std::string message = "ingest found " + std::to_string(problems.size()) + " problem(s):";
        for (const auto& p : problems) message += "\n  - " + p;
        throw IngestError(message);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Encoded-representation cache (checkpoint binary format, keyed by clip and
// attribute) and deterministic splits.
// ---------------------------------------------------------------------------

inline void save_encoded(const std::string& dir, const std::vector<EncodedClip>& clips) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::pair<std::string, double>> labels;
    for (const auto& clip : clips) {
        labels.emplace_back(clip.clip_id, clip.label);
        checkpoint::NamedTensors tensors;
        for (const auto& [attr, map] : clip.heatmaps) {
            const SpectralRepresentation rep = from_heatmap(map);
            tensors.emplace_back(attr + "/amp",
                                 Tensor(Shape{rep.channels, rep.k}, rep.amplitude));
            tensors.emplace_back(attr + "/pha", Tensor(Shape{rep.channels, rep.k}, rep.phase));
        }
        checkpoint::save((fs::path(dir) / (clip.clip_id + ".ckpt")).string(), tensors);
    }
    write_labels_csv((fs::path(dir) / "labels.csv").string(), labels);
}

inline std::vector<EncodedClip> load_encoded(const std::string& dir, const LandmarkLayout& layout) {
    namespace fs = std::filesystem;
    std::vector<EncodedClip> clips;
    for (const auto& [clip_id, label] : read_labels_csv((fs::path(dir) / "labels.csv").string())) {
        EncodedClip clip;
        clip.clip_id = clip_id;
        clip.label = label;
        std::map<std::string, SpectralRepresentation> reps;
        for (const auto& [name, tensor] :
             checkpoint::load((fs::path(dir) / (clip_id + ".ckpt")).string())) {
            const auto slash = name.find('/');
            if (slash == std::string::npos) throw IoError("encoded cache: bad tensor name " + name);
            const std::string attr = name.substr(0, slash);
            const std::string part = name.substr(slash + 1);
            SpectralRepresentation& rep = reps[attr];
            rep.channels = tensor.dim(0);
            rep.k = tensor.dim(1);
            if (part == "amp")
                rep.amplitude = tensor.data();
            else if (part == "pha")
                rep.phase = tensor.data();
            else
                throw IoError("encoded cache: unexpected tensor " + name);
        }
        for (const auto& [attr, rep] : reps) {
            if (rep.amplitude.size() != rep.phase.size() ||
                rep.amplitude.size() != rep.channels * rep.k)
                throw IoError("encoded cache: incomplete spectra for attribute " + attr);
            clip.heatmaps[attr] = to_heatmap(rep);
            if (rep.channels == layout.num_points * layout.coord_arity)
                clip.graphs[attr] = build_landmark_graph(rep, layout);
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic 3-way split by clip id: sort ids, shuffle with the seed,
/// then cut at the given fractions.
inline DatasetSplit split_dataset(const std::vector<EncodedClip>& clips, double train_frac,
                                  double val_frac, std::uint64_t seed) {
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return clips[a].clip_id < clips[b].clip_id;
    });
    Rng rng = Rng(seed).split(71);  // domain-separated from trial seeds
    rng.shuffle(order);
    const std::size_t n = clips.size();
    const std::size_t n_train = static_cast<std::size_t>(std::round(train_frac * n));
    const std::size_t n_val = static_cast<std::size_t>(std::round(val_frac * n));
    DatasetSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            split.train.push_back(order[i]);
        else if (i < n_train + n_val)
            split.val.push_back(order[i]);
        else
            split.test.push_back(order[i]);
    }
    return split;
}

}  // namespace streamnas
