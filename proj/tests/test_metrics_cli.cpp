#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "streamnas/metrics.hpp"
#include "streamnas/rng.hpp"

using namespace streamnas;
namespace fs = std::filesystem;

namespace {

const std::string cli = STREAMNAS_CLI_PATH;
const fs::path work_dir = fs::temp_directory_path() / "streamnas_cli_test";

int run_cli(const std::string& args, const std::string& stdout_file = "") {
    std::string command = cli + " " + args;
    if (!stdout_file.empty()) command += " > " + stdout_file + " 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_toy_config(const fs::path& path, const fs::path& run_dir, int joint_timesteps) {
    std::ofstream out(path, std::ios::trunc);
    out << "seed = 7\n"
        << "output_dir = \"" << run_dir.string() << "\"\n"
        << "[data]\n"
        << "source = \"synthetic\"\nclips = 36\nmin_frames = 80\nmax_frames = 160\n"
        << "noise_sigma = 0.3\nau_channels = 3\ngaze_channels = 2\npose_channels = 2\n"
        << "landmark_points = 6\nlandmark_arity = 1\n"
        << "au_cue_channels = [0, 1]\nau_cue_cycles = 4.0\n"
        << "landmark_cue_nodes = [3, 4, 5]\nlandmark_cue_cycles = 3.0\n"
        << "[encode]\nk = 16\nk_min = 8\nlayout = \"" << (work_dir / "layout.toml").string()
        << "\"\n"
        << "[[stream]]\nid = \"au\"\nattribute = \"aus\"\nkind = \"cnn\"\nlayers = 2\n"
        << "[[stream.slot]]\nid = \"layer0\"\nchoices = [\"conv3-6\", \"identity\"]\n"
        << "[[stream.slot]]\nid = \"layer1\"\nchoices = [\"conv3-6\", \"avgpool3\"]\n"
        << "[[stream]]\nid = \"lm\"\nattribute = \"landmarks\"\nkind = \"gnn\"\nlayers = 1\n"
        << "[[stream.slot]]\nid = \"layer0\"\nchoices = [\"mean-6\", \"sum-6\"]\n"
        << "[fusion]\nops = [\"concat\", \"add\"]\nwidths = [6]\nblocks = 1\n"
        << "[budget.warmup]\ntimesteps = 1\nsamples = 2\nworkers = 2\n"
        << "[budget.joint]\ntimesteps = " << joint_timesteps << "\nsamples = 2\nworkers = 2\n"
        << "[ppo]\nlearning_rate = 0.01\n"
        << "[train]\nepochs = 2\nbatch_size = 16\nlearning_rate = 0.005\ndropout = 0.05\n"
        << "patience = 5\n"
        << "[model]\nfusion_input_dim = 6\ndefault_cnn_width = 6\n"
        << "[controller]\nhidden = 8\nembed = 4\n";
}

void write_toy_layout(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    out << "num_points = 6\ncoord_arity = 1\nnasal_root = 0\n"
        << "[[region]]\nname = \"upper\"\nnodes = [0, 1, 2]\n"
        << "[[region]]\nname = \"lower\"\nnodes = [3, 4, 5]\n";
}

}  // namespace

TEST_CASE("rmse and mae match hand arithmetic") {
    PredictionSet identical;
    identical.add("a", 3.0, 3.0);
    identical.add("b", -1.5, -1.5);
    CHECK(rmse(identical) == 0.0);
    CHECK(mae(identical) == 0.0);

    PredictionSet zeros;
    zeros.add("a", 0.0, 3.0);
    zeros.add("b", 0.0, 4.0);
    CHECK(rmse(zeros) == Catch::Approx(std::sqrt(12.5)).epsilon(1e-15));
    CHECK(mae(zeros) == Catch::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("metrics reject empty and malformed sets") {
    PredictionSet empty;
    CHECK_THROWS_AS(rmse(empty), ContractError);
    CHECK_THROWS_AS(mae(empty), ContractError);

    PredictionSet duplicate;
    duplicate.add("a", 1.0, 1.0);
    duplicate.add("a", 2.0, 2.0);
    CHECK_THROWS_AS(rmse(duplicate), ContractError);

    PredictionSet non_finite;
    non_finite.add("a", std::nan(""), 1.0);
    CHECK_THROWS_AS(mae(non_finite), ContractError);
}

TEST_CASE("mae never exceeds rmse") {
    Rng rng(404);
    for (int trial = 0; trial < 200; ++trial) {
        Rng local = rng.split(trial);
        PredictionSet preds;
        const std::size_t n = 1 + local.uniform_index(30);
        for (std::size_t i = 0; i < n; ++i)
            preds.add("c" + std::to_string(i), local.uniform(0.0, 24.0), local.uniform(0.0, 24.0));
        CHECK(mae(preds) <= rmse(preds) + 1e-12);
    }
}

TEST_CASE("cli end to end: artifacts, evaluate, resume, exit codes", "[cli]") {
    fs::remove_all(work_dir);
    fs::create_directories(work_dir);
    write_toy_layout(work_dir / "layout.toml");
    const fs::path run_dir = work_dir / "run";
    const fs::path config = work_dir / "toy.toml";
    write_toy_config(config, run_dir, 2);

    SECTION("usage errors exit with code 2") {
        CHECK(run_cli("--definitely-not-a-flag", (work_dir / "usage.txt").string()) == 2);
        CHECK(run_cli("search --config missing.toml --bogus", (work_dir / "usage2.txt").string()) ==
              2);
    }

    SECTION("full pipeline produces parsing artifacts") {
        REQUIRE(run_cli("gen-data --config " + config.string()) == 0);
        CHECK(fs::exists(run_dir / "data" / "labels.csv"));
        REQUIRE(run_cli("encode --config " + config.string()) == 0);
        CHECK(fs::exists(run_dir / "encoded" / "labels.csv"));
        REQUIRE(run_cli("search --config " + config.string()) == 0);
        CHECK(fs::exists(run_dir / "leaderboard.json"));

        // search refuses to clobber an existing run without --resume
        CHECK(run_cli("search --config " + config.string(),
                      (work_dir / "norerun.txt").string()) == 1);

        // resuming with a larger budget continues from the persisted timestep
        write_toy_config(config, run_dir, 3);
        REQUIRE(run_cli("search --config " + config.string() + " --resume") == 0);

        REQUIRE(run_cli("finalize --config " + config.string()) == 0);
        CHECK(fs::exists(run_dir / "report.json"));

        REQUIRE(run_cli("report --run " + run_dir.string()) == 0);
        const std::string board_csv = read_file(run_dir / "leaderboard.csv");
        CHECK(board_csv.rfind("rank,key,mean_e_val,count,variance", 0) == 0);
        CHECK(board_csv.find("au=") != std::string::npos);
        const std::string curve = read_file(run_dir / "learning_curve.svg");
        CHECK(curve.find("<svg") != std::string::npos);
        CHECK(curve.find("polyline") != std::string::npos);
        CHECK(fs::exists(run_dir / "scatter.svg"));

        // report output is deterministic for a fixed run directory
        const std::string first = read_file(run_dir / "learning_curve.svg");
        REQUIRE(run_cli("report --run " + run_dir.string()) == 0);
        CHECK(read_file(run_dir / "learning_curve.svg") == first);

        // evaluate against the run's report
        const fs::path eval_out = work_dir / "eval.txt";
        REQUIRE(run_cli("evaluate --run " + run_dir.string(), eval_out.string()) == 0);
        CHECK(read_file(eval_out).rfind("RMSE", 0) == 0);
    }

    SECTION("evaluate on an identity fixture prints zero metrics") {
        const fs::path fixture = work_dir / "preds.csv";
        {
            std::ofstream out(fixture);
            out << "clip_id,predicted,truth\nc0,3.5,3.5\nc1,10,10\nc2,0.25,0.25\n";
        }
        const fs::path eval_out = work_dir / "eval_fixture.txt";
        REQUIRE(run_cli("evaluate --pred " + fixture.string(), eval_out.string()) == 0);
        const std::string text = read_file(eval_out);
        CHECK(text.find("RMSE 0.000000") != std::string::npos);
        CHECK(text.find("MAE 0.000000") != std::string::npos);
    }

    SECTION("failed stage exits with code 1") {
        CHECK(run_cli("finalize --config " + config.string(),
                      (work_dir / "nofinal.txt").string()) == 1);  // nothing searched yet
        CHECK(run_cli("evaluate --pred /nonexistent.csv", (work_dir / "noeval.txt").string()) == 1);
    }

    fs::remove_all(work_dir);
}
