#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "streamnas/dataset.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/orchestrator.hpp"
#include "streamnas/search_space.hpp"
#include "streamnas/synthetic.hpp"
#include "streamnas/toml.hpp"

namespace streamnas {

/// Everything a run needs; a run is reproducible from this plus its seeds.
struct RunConfig {
    std::string data_source = "synthetic";  // "synthetic" or "dir"
    std::string data_path;                  // CSV directory for source = dir
    SyntheticSpec synthetic;
    EncodeOptions encode;
    std::vector<StreamSearchSpace> spaces;
    FusionSearchSpace fusion;
    OrchestratorConfig orchestrator;
    std::string output_dir = "run";
    std::string config_text;  // original TOML, snapshotted into the run dir
};

namespace config_detail {

inline std::vector<std::string> string_array(const toml::Value& table, const std::string& key) {
    std::vector<std::string> out;
    if (!table.contains(key)) return out;
    for (const auto& item : table.at(key).array()) {
        if (item->is_string())
            out.push_back(item->as_string());
        else
            out.push_back(std::to_string(item->as_integer()));
    }
    return out;
}

inline std::vector<int> int_array(const toml::Value& table, const std::string& key) {
    std::vector<int> out;
    if (!table.contains(key)) return out;
    for (const auto& item : table.at(key).array())
        out.push_back(static_cast<int>(item->as_integer()));
    return out;
}

inline StreamSearchSpace parse_stream_space(const toml::Value& entry) {
    StreamSearchSpace space;
    space.stream_id = entry.get_string("id");
    space.attribute_id = entry.get_string("attribute", space.stream_id);
    space.kind = stream_kind_from_string(entry.get_string("kind", "cnn"));
    if (space.stream_id.empty()) throw IoError("spaces: stream entry needs an id");

    if (entry.contains("slot")) {
        // fully explicit slot list
        for (const auto& slot_entry : entry.at("slot").array()) {
            DecisionSlot slot;
            slot.slot_id = slot_entry->get_string("id");
            slot.choices = string_array(*slot_entry, "choices");
            space.slots.push_back(std::move(slot));
        }
        space.depth = static_cast<std::size_t>(entry.get_integer("layers", 0));
        if (space.depth == 0)
            for (const auto& slot : space.slots)
                if (slot.slot_id.rfind("layer", 0) == 0) ++space.depth;
    } else {
        const std::size_t layers = static_cast<std::size_t>(entry.get_integer("layers", 3));
        space.depth = layers;
        const std::vector<int> widths = int_array(entry, "widths");
        if (space.kind == StreamKind::cnn) {
            std::vector<std::string> ops = string_array(entry, "ops");
            if (ops.empty()) ops = default_cnn_ops();
            for (std::size_t l = 0; l < layers; ++l)
                space.slots.push_back({"layer" + std::to_string(l), ops});
            const std::size_t width_slots =
                static_cast<std::size_t>(entry.get_integer("width_slots", widths.empty() ? 0 : 2));
            for (std::size_t w = 0; w < width_slots; ++w) {
                std::vector<std::string> labels;
                for (int width : widths) labels.push_back(std::to_string(width));
                space.slots.push_back({"width" + std::to_string(w), labels});
            }
        } else {
            std::vector<std::string> aggs = string_array(entry, "aggregators");
            if (aggs.empty()) aggs = default_gnn_aggregators();
            const std::vector<std::string> combos =
                widths.empty() ? aggs : cross_labels(aggs, widths);
            for (std::size_t l = 0; l < layers; ++l)
                space.slots.push_back({"layer" + std::to_string(l), combos});
            const std::vector<std::string> readouts = string_array(entry, "readouts");
            if (!readouts.empty()) space.slots.push_back({"readout", readouts});
        }
    }
    space.validate();
    return space;
}

inline FusionSearchSpace parse_fusion_space(const toml::Value& entry,
                                            const std::vector<StreamSearchSpace>& streams) {
    FusionSearchSpace space;
    for (const auto& stream : streams) {
        space.stream_ids.push_back(stream.stream_id);
        std::vector<std::string> taps;
        for (std::size_t layer = 1; layer <= stream.depth; ++layer)
            taps.push_back(std::to_string(layer));
        space.slots.push_back({"tap:" + stream.stream_id, std::move(taps)});
    }
    std::vector<std::string> ops = string_array(entry, "ops");
    if (ops.empty()) ops = default_fusion_ops();
    std::vector<int> widths = int_array(entry, "widths");
    if (widths.empty()) widths = {32, 64, 128};
    const std::vector<std::string> blocks = cross_labels(ops, widths);
    const std::size_t num_blocks = static_cast<std::size_t>(entry.get_integer("blocks", 2));
    for (std::size_t b = 0; b < num_blocks; ++b)
        space.slots.push_back({"block" + std::to_string(b), blocks});
    space.validate();
    return space;
}

}  // namespace config_detail

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream raw(path);
    if (!raw) throw IoError("config: cannot open " + path);
    std::ostringstream buffer;
    buffer << raw.rdbuf();

    RunConfig cfg;
    cfg.config_text = buffer.str();
    const toml::Value root = toml::parse(cfg.config_text);

    cfg.output_dir = root.get_string("output_dir", "run");
    const std::uint64_t seed = static_cast<std::uint64_t>(root.get_integer("seed", 1));
    cfg.orchestrator.seed = seed;
    cfg.synthetic.seed = seed;

    if (root.contains("data")) {
        const auto& data = root.at("data");
        cfg.data_source = data.get_string("source", "synthetic");
        cfg.data_path = data.get_string("path", "");
        cfg.synthetic.num_clips =
            static_cast<std::size_t>(data.get_integer("clips", cfg.synthetic.num_clips));
        cfg.synthetic.min_frames =
            static_cast<std::size_t>(data.get_integer("min_frames", cfg.synthetic.min_frames));
        cfg.synthetic.max_frames =
            static_cast<std::size_t>(data.get_integer("max_frames", cfg.synthetic.max_frames));
        cfg.synthetic.noise_sigma = data.get_float("noise_sigma", cfg.synthetic.noise_sigma);
        cfg.synthetic.au_channels =
            static_cast<std::size_t>(data.get_integer("au_channels", cfg.synthetic.au_channels));
        cfg.synthetic.gaze_channels =
            static_cast<std::size_t>(data.get_integer("gaze_channels", cfg.synthetic.gaze_channels));
        cfg.synthetic.pose_channels =
            static_cast<std::size_t>(data.get_integer("pose_channels", cfg.synthetic.pose_channels));
        cfg.synthetic.landmark_points = static_cast<std::size_t>(
            data.get_integer("landmark_points", cfg.synthetic.landmark_points));
        cfg.synthetic.landmark_arity = static_cast<std::size_t>(
            data.get_integer("landmark_arity", cfg.synthetic.landmark_arity));
        if (data.contains("synthetic_seed"))
            cfg.synthetic.seed = static_cast<std::uint64_t>(data.get_integer("synthetic_seed", 1));
        if (data.contains("au_cue_channels")) {
            cfg.synthetic.au_cue_channels.clear();
            for (const auto& item : data.at("au_cue_channels").array())
                cfg.synthetic.au_cue_channels.push_back(
                    static_cast<std::size_t>(item->as_integer()));
        }
        if (data.contains("landmark_cue_nodes")) {
            cfg.synthetic.landmark_cue_nodes.clear();
            for (const auto& item : data.at("landmark_cue_nodes").array())
                cfg.synthetic.landmark_cue_nodes.push_back(
                    static_cast<std::size_t>(item->as_integer()));
        }
        cfg.synthetic.au_cue_cycles = data.get_float("au_cue_cycles", cfg.synthetic.au_cue_cycles);
        cfg.synthetic.landmark_cue_cycles =
            data.get_float("landmark_cue_cycles", cfg.synthetic.landmark_cue_cycles);
        cfg.synthetic.pose_cue_channel = static_cast<std::size_t>(
            data.get_integer("pose_cue_channel", cfg.synthetic.pose_cue_channel));
        cfg.synthetic.amp_base = data.get_float("amp_base", cfg.synthetic.amp_base);
        cfg.synthetic.amp_scale = data.get_float("amp_scale", cfg.synthetic.amp_scale);
        cfg.synthetic.distractor_amp =
            data.get_float("distractor_amp", cfg.synthetic.distractor_amp);
    }

    if (root.contains("encode")) {
        const auto& encode = root.at("encode");
        cfg.encode.spectral.k = static_cast<std::size_t>(encode.get_integer("k", 120));
        cfg.encode.preprocess.k_min = static_cast<std::size_t>(encode.get_integer("k_min", 16));
        cfg.encode.preprocess.confidence_threshold =
            encode.get_float("confidence_threshold", 0.8);
        const std::string layout_path = encode.get_string("layout", "");
        const std::size_t arity =
            static_cast<std::size_t>(encode.get_integer("coord_arity", cfg.synthetic.landmark_arity));
        cfg.encode.layout = layout_path.empty() ? ibug68_layout(arity) : load_layout(layout_path);
    } else {
        cfg.encode.layout = ibug68_layout(cfg.synthetic.landmark_arity);
    }

    if (root.contains("stream")) {
        for (const auto& entry : root.at("stream").array())
            cfg.spaces.push_back(config_detail::parse_stream_space(*entry));
    } else if (root.contains("spaces") && root.at("spaces").contains("file")) {
        const toml::Value spaces_doc = toml::parse_file(root.at("spaces").get_string("file"));
        for (const auto& entry : spaces_doc.at("stream").array())
            cfg.spaces.push_back(config_detail::parse_stream_space(*entry));
        cfg.fusion = config_detail::parse_fusion_space(
            spaces_doc.contains("fusion") ? spaces_doc.at("fusion") : toml::Value{}, cfg.spaces);
    } else {
        cfg.spaces = {default_cnn_space("aus", "aus"), default_cnn_space("gaze", "gaze"),
                      default_cnn_space("pose", "pose"), default_gnn_space("lm", "landmarks")};
    }
    if (cfg.fusion.slots.empty())
        cfg.fusion = root.contains("fusion")
                         ? config_detail::parse_fusion_space(root.at("fusion"), cfg.spaces)
                         : default_fusion_space(cfg.spaces);

    auto load_budget = [&](const char* name, SearchBudget& budget) {
        if (!root.contains("budget") || !root.at("budget").contains(name)) return;
        const auto& section = root.at("budget").at(name);
        budget.timesteps = static_cast<std::size_t>(section.get_integer("timesteps", 10));
        budget.num_samples = static_cast<std::size_t>(section.get_integer("samples", 8));
        budget.workers = static_cast<std::size_t>(section.get_integer("workers", 2));
        budget.wall_clock_seconds = section.get_float("wall_clock_seconds", 0.0);
    };
    load_budget("warmup", cfg.orchestrator.warmup_budget);
    load_budget("joint", cfg.orchestrator.joint_budget);

    if (root.contains("ppo")) {
        const auto& ppo = root.at("ppo");
        cfg.orchestrator.ppo.clip_epsilon = ppo.get_float("clip_epsilon", 0.2);
        cfg.orchestrator.ppo.learning_rate = ppo.get_float("learning_rate", 3e-4);
        cfg.orchestrator.ppo.baseline_decay = ppo.get_float("baseline_decay", 0.95);
        cfg.orchestrator.ppo.use_advantage = ppo.get_bool("use_advantage", true);
        cfg.orchestrator.ppo.use_motion_average = ppo.get_bool("use_motion_average", true);
        cfg.orchestrator.ppo.entropy_weight = ppo.get_float("entropy_weight", 1e-2);
    }
    cfg.orchestrator.ppo.num_samples = cfg.orchestrator.joint_budget.num_samples;

    if (root.contains("train")) {
        const auto& train = root.at("train");
        cfg.orchestrator.train.epochs = static_cast<std::size_t>(train.get_integer("epochs", 30));
        cfg.orchestrator.train.batch_size =
            static_cast<std::size_t>(train.get_integer("batch_size", 16));
        cfg.orchestrator.train.learning_rate = train.get_float("learning_rate", 1e-3);
        cfg.orchestrator.train.dropout = train.get_float("dropout", 0.1);
        cfg.orchestrator.train.weight_decay = train.get_float("weight_decay", 0.0);
        cfg.orchestrator.train.patience = static_cast<std::size_t>(train.get_integer("patience", 8));
    }

    if (root.contains("model")) {
        const auto& model = root.at("model");
        cfg.orchestrator.model.fusion_input_dim =
            static_cast<std::size_t>(model.get_integer("fusion_input_dim", 32));
        cfg.orchestrator.model.default_cnn_width =
            static_cast<std::size_t>(model.get_integer("default_cnn_width", 16));
    }

    if (root.contains("controller")) {
        const auto& controller = root.at("controller");
        cfg.orchestrator.controller.hidden =
            static_cast<std::size_t>(controller.get_integer("hidden", 64));
        cfg.orchestrator.controller.embed =
            static_cast<std::size_t>(controller.get_integer("embed", 32));
    }

    if (root.contains("search")) {
        const auto& search = root.at("search");
        cfg.orchestrator.keep_per_slot =
            static_cast<std::size_t>(search.get_integer("keep_per_slot", 2));
        cfg.orchestrator.reduce_samples =
            static_cast<std::size_t>(search.get_integer("reduce_samples", 1000));
        cfg.orchestrator.leaderboard_size =
            static_cast<std::size_t>(search.get_integer("leaderboard_size", 10));
        cfg.orchestrator.final_seeds = static_cast<std::size_t>(search.get_integer("final_seeds", 1));
        cfg.orchestrator.skip_warmup = search.get_bool("skip_warmup", false);
        cfg.orchestrator.train_frac = search.get_float("train_frac", 0.70);
        cfg.orchestrator.val_frac = search.get_float("val_frac", 0.15);
    }

    // environment override for the worker pool
    if (const char* env_workers = std::getenv("STREAMNAS_WORKERS")) {
        const std::size_t workers = static_cast<std::size_t>(std::stoull(env_workers));
        if (workers >= 1) {
            cfg.orchestrator.warmup_budget.workers = workers;
            cfg.orchestrator.joint_budget.workers = workers;
        }
    }

    cfg.orchestrator.run_dir = cfg.output_dir;
    return cfg;
}

/// Snapshot the original config text into the run directory.
inline void write_config_snapshot(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "config.toml", std::ios::trunc);
    out << cfg.config_text;
}

/// Materialise the configured dataset (synthetic or ingested CSV directory).
inline std::vector<ClipRecord> load_records(const RunConfig& cfg) {
    if (cfg.data_source == "synthetic") return generate(cfg.synthetic);
    if (cfg.data_source == "dir") {
        if (cfg.data_path.empty()) throw ContractError("config: data.path required for source=dir");
        return ingest(cfg.data_path, cfg.encode.preprocess).records;
    }
    throw ContractError("config: unknown data source '" + cfg.data_source + "'");
}

/// Encoded dataset, from the cache directory when present.
inline std::vector<EncodedClip> load_or_encode(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path cache = fs::path(cfg.output_dir) / "encoded";
    if (fs::exists(cache / "labels.csv")) return load_encoded(cache.string(), cfg.encode.layout);
    return encode_dataset(load_records(cfg), cfg.encode);
}

}  // namespace streamnas
