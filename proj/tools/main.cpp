// Command-line surface for the two-stage architecture search:
//   gen-data  write a synthetic planted-signal dataset as CSV
//   encode    preprocess + spectrally encode a dataset into the run cache
//   warmup    per-stream pre-search over the full stream spaces
//   search    end-to-end joint search over the reduced spaces
//   finalize  retrain the top-3 architectures and write the report
//   evaluate  print RMSE/MAE for a prediction file or a finished run
//   report    emit leaderboard.csv and SVG plots for a finished run
//
// Exit codes: 0 success, 1 stage failure, 2 usage error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "streamnas/config.hpp"
#include "streamnas/dataset.hpp"
#include "streamnas/metrics.hpp"
#include "streamnas/orchestrator.hpp"
#include "streamnas/report.hpp"
#include "streamnas/synthetic.hpp"

namespace fs = std::filesystem;
using namespace streamnas;

namespace {

Orchestrator make_orchestrator(const RunConfig& cfg) {
    return Orchestrator(cfg.spaces, cfg.fusion, load_or_encode(cfg), cfg.orchestrator);
}

PredictionSet read_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        csvio::split_line(line) != std::vector<std::string>{"clip_id", "predicted", "truth"})
        throw IoError("prediction file needs header clip_id,predicted,truth");
    PredictionSet preds;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = csvio::split_line(line);
        if (fields.size() != 3)
            throw IoError(path + ":" + std::to_string(line_no) + ": expected 3 fields");
        preds.add(fields[0], csvio::parse_double(fields[1], path),
                  csvio::parse_double(fields[2], path));
    }
    return preds;
}

PredictionSet read_predictions_from_run(const std::string& run_dir) {
    std::ifstream in(run_dir + "/report.json");
    if (!in) throw IoError("no report.json in " + run_dir + " (run finalize first)");
    const nlohmann::json doc = nlohmann::json::parse(in);
    PredictionSet preds;
    for (const auto& entry : doc.at("best_predictions"))
        preds.add(entry.at("clip_id").get<std::string>(), entry.at("predicted").get<double>(),
                  entry.at("truth").get<double>());
    return preds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage architecture search over multi-stream spectral models"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::string stream_id;
    std::string pred_file;
    std::string run_dir;
    bool resume = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic planted-signal dataset");
    gen->add_option("--config", config_path, "run config (TOML)")->required();
    gen->add_option("--out", out_override, "output directory (default <output_dir>/data)");

    auto* enc = app.add_subcommand("encode", "encode a dataset into the run cache");
    enc->add_option("--config", config_path, "run config (TOML)")->required();

    auto* warm = app.add_subcommand("warmup", "per-stream warm-up pre-search");
    warm->add_option("--config", config_path, "run config (TOML)")->required();
    warm->add_option("--stream", stream_id, "warm up only this stream id");

    auto* search = app.add_subcommand("search", "end-to-end joint architecture search");
    search->add_option("--config", config_path, "run config (TOML)")->required();
    search->add_flag("--resume", resume, "continue from the persisted timestep");

    auto* fin = app.add_subcommand("finalize", "retrain the top-3 and write report.json");
    fin->add_option("--config", config_path, "run config (TOML)")->required();

    auto* eval = app.add_subcommand("evaluate", "print RMSE and MAE");
    eval->add_option("--pred", pred_file, "CSV with header clip_id,predicted,truth");
    eval->add_option("--run", run_dir, "finished run directory (uses report.json)");

    auto* rep = app.add_subcommand("report", "emit leaderboard.csv and SVG plots");
    rep->add_option("--config", config_path, "run config (TOML)");
    rep->add_option("--run", run_dir, "run directory (overrides config output_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            const std::string dir =
                out_override.empty() ? cfg.output_dir + "/data" : out_override;
            write_dataset(dir, generate(cfg.synthetic));
            std::printf("wrote %zu clips to %s\n", cfg.synthetic.num_clips, dir.c_str());
            return 0;
        }

        if (enc->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            write_config_snapshot(cfg);
            const auto encoded = encode_dataset(load_records(cfg), cfg.encode);
            const std::string cache = cfg.output_dir + "/encoded";
            save_encoded(cache, encoded);
            std::printf("encoded %zu clips into %s\n", encoded.size(), cache.c_str());
            return 0;
        }

        if (warm->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            write_config_snapshot(cfg);
            Orchestrator orch = make_orchestrator(cfg);
            if (stream_id.empty()) {
                orch.warmup_all();
                std::printf("warm-up complete for all %zu streams\n", cfg.spaces.size());
            } else {
                bool found = false;
                for (std::size_t m = 0; m < cfg.spaces.size(); ++m)
                    if (cfg.spaces[m].stream_id == stream_id) {
                        const WarmupResult result = orch.warmup_stream(m);
                        std::printf("stream %s: %zu trials, best E_val %.4f, reduced size %s\n",
                                    stream_id.c_str(), result.trials, result.best_e_val,
                                    result.reduced.size().str().c_str());
                        found = true;
                    }
                if (!found) throw ContractError("no stream with id '" + stream_id + "'");
            }
            return 0;
        }

        if (search->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            if (!resume && fs::exists(fs::path(cfg.output_dir) / "run_state.json")) {
                std::fprintf(stderr,
                             "error: %s already holds run state; pass --resume to continue\n",
                             cfg.output_dir.c_str());
                return 1;
            }
            write_config_snapshot(cfg);
            Orchestrator orch = make_orchestrator(cfg);
            if (!cfg.orchestrator.skip_warmup) orch.warmup_all();
            const SearchRunState state = orch.joint_search();
            std::printf("joint search: %zu timesteps, %zu trials, %zu leaderboard entries%s\n",
                        state.completed_timesteps, state.total_trials, state.leaderboard.size(),
                        state.incomplete ? " (incomplete: budget exhausted)" : "");
            return state.incomplete ? 1 : 0;
        }

        if (fin->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            Orchestrator orch = make_orchestrator(cfg);
            const FinalReport report = orch.finalize();
            for (std::size_t f = 0; f < report.finalists.size(); ++f)
                std::printf("%s finalist %zu: %s  RMSE %.4f  MAE %.4f\n",
                            f == report.best_index ? "*" : " ", f + 1,
                            report.finalists[f].key.c_str(), report.finalists[f].rmse,
                            report.finalists[f].mae);
            return 0;
        }

        if (eval->parsed()) {
            if (pred_file.empty() == run_dir.empty())
                throw ContractError("evaluate: pass exactly one of --pred or --run");
            const PredictionSet preds =
                pred_file.empty() ? read_predictions_from_run(run_dir)
                                  : read_predictions_csv(pred_file);
            std::printf("RMSE %.6f\nMAE %.6f\n", rmse(preds), mae(preds));
            return 0;
        }

        if (rep->parsed()) {
            std::string dir = run_dir;
            if (dir.empty()) {
                if (config_path.empty())
                    throw ContractError("report: pass --run or --config");
                dir = load_run_config(config_path).output_dir;
            }
            report::write_leaderboard_csv(dir, dir + "/leaderboard.csv");
            report::write_learning_curve_svg(dir, dir + "/learning_curve.svg");
            if (fs::exists(fs::path(dir) / "report.json"))
                report::write_scatter_svg(dir, dir + "/scatter.svg");
            std::printf("report artifacts written to %s\n", dir.c_str());
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 2;
}
