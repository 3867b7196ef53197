#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "streamnas/adam.hpp"
#include "streamnas/child_network.hpp"
#include "streamnas/controller.hpp"
#include "streamnas/dataset.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/metrics.hpp"
#include "streamnas/ppo.hpp"
#include "streamnas/search_space.hpp"

namespace streamnas {

struct SearchBudget {
    std::size_t timesteps = 10;    // outer loop length T
    std::size_t num_samples = 8;   // Monte-Carlo trials N per timestep
    std::size_t workers = 2;
    double wall_clock_seconds = 0;  // 0 = no cap

    void validate() const {
        if (timesteps < 1) throw ContractError("budget: timesteps must be >= 1");
        if (num_samples < 1) throw ContractError("budget: num_samples must be >= 1");
        if (workers < 1) throw ContractError("budget: workers must be >= 1");
    }
};

struct LeaderboardEntry {
    std::string key;
    double mean_e_val = 0.0;
    std::size_t count = 0;
    double variance = 0.0;
};

struct SearchRunState {
    std::size_t completed_timesteps = 0;
    std::size_t total_trials = 0;
    bool incomplete = false;
    std::vector<LeaderboardEntry> leaderboard;
};

struct WarmupResult {
    ReducedSpace reduced;
    double best_e_val = 0.0;
    std::size_t trials = 0;
};

struct FinalistReport {
    std::string key;
    double rmse = 0.0;
    double mae = 0.0;
    std::vector<double> per_seed_rmse, per_seed_mae;
};

struct FinalReport {
    std::vector<FinalistReport> finalists;
    std::size_t best_index = 0;
    PredictionSet best_predictions;
};

struct OrchestratorConfig {
    SearchBudget warmup_budget;
    SearchBudget joint_budget;
    PPOConfig ppo;
    TrainConfig train;
    ModelOptions model;
    ControllerConfig controller;
    double train_frac = 0.70;
    double val_frac = 0.15;
    std::size_t keep_per_slot = 2;
    std::size_t reduce_samples = 1000;
    std::size_t leaderboard_size = 10;
    std::size_t final_seeds = 1;
    std::uint64_t seed = 1;
    bool skip_warmup = false;  // joint stage searches the full stream spaces
    std::string run_dir;       // empty = in-memory run, nothing persisted
};

namespace detail {

template <typename Fn>
inline void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
    const std::size_t n_threads = std::min(workers, count);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& thread : pool) thread.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Drives the two-stage search: per-stream warm-up pre-search over the full
/// stream spaces, then the end-to-end joint search over reduced spaces with
/// the conditioned fusion controller. One orchestration thread owns all run
/// state; workers are stateless trial executors.
class Orchestrator {
public:
    Orchestrator(std::vector<StreamSearchSpace> spaces, FusionSearchSpace fusion_space,
                 std::vector<EncodedClip> clips, OrchestratorConfig cfg)
        : spaces_(std::move(spaces)),
          fusion_space_(std::move(fusion_space)),
          clips_(std::move(clips)),
          cfg_(std::move(cfg)),
          base_rng_(cfg_.seed) {
        for (auto& space : spaces_) space.validate();
        fusion_space_.validate();
        cfg_.warmup_budget.validate();
        cfg_.joint_budget.validate();
        cfg_.ppo.validate();
        if (clips_.empty()) throw ContractError("orchestrator: empty dataset");

        const DatasetSplit split = split_dataset(clips_, cfg_.train_frac, cfg_.val_frac, cfg_.seed);
        for (std::size_t i : split.train) train_.push_back(clips_[i]);
        for (std::size_t i : split.val) val_.push_back(clips_[i]);
        for (std::size_t i : split.test) test_.push_back(clips_[i]);
        if (train_.empty() || val_.empty())
            throw ContractError("orchestrator: split produced an empty train or val set");

        double mean = 0.0;
        for (const auto& clip : train_) mean += clip.label;
        mean /= static_cast<double>(train_.size());
        double var = 0.0;
        for (const auto& clip : train_) var += (clip.label - mean) * (clip.label - mean);
        diverged_penalty_ = 2.0 * std::sqrt(var / static_cast<double>(train_.size())) + 1.0;

        for (std::size_t m = 0; m < spaces_.size(); ++m)
            stream_policies_.emplace_back(ControllerPolicy::Role::stream, spaces_[m].slots,
                                          cfg_.controller, base_rng_.split(1, m));
        fusion_policy_.emplace(ControllerPolicy::Role::fusion, fusion_space_.slots, cfg_.controller,
                               base_rng_.split(1, 1000), spaces_.size());
        warmup_done_.assign(spaces_.size(), false);

        if (!cfg_.run_dir.empty()) {
            namespace fs = std::filesystem;
            fs::create_directories(cfg_.run_dir);
            fs::create_directories(fs::path(cfg_.run_dir) / "policies");
            if (fs::exists(state_path())) restore();
        }
    }

    const std::vector<EncodedClip>& train_split() const { return train_; }
    const std::vector<EncodedClip>& val_split() const { return val_; }
    const std::vector<EncodedClip>& test_split() const { return test_; }
    const MotionAverageTracker& joint_tracker() const { return joint_tracker_; }
    const std::vector<std::optional<ReducedSpace>>& reduced_spaces() const { return reduced_; }
    std::size_t total_trials() const { return total_trials_; }

    /// Warm-up pre-search for stream m over its full space (Monte-Carlo PPO
    /// over standalone models), then reduce the space by marginal top-P.
    WarmupResult warmup_stream(std::size_t m) {
        if (m >= spaces_.size()) throw ContractError("warmup: stream index out of range");
        const StreamSearchSpace& space = spaces_[m];
        const std::size_t stage_id = 10 + m;
        const std::string stage_tag = "warmup:" + space.stream_id;
        MotionAverageTracker& tracker = warmup_trackers_[space.stream_id];

        AdamOptimizer optimizer(stream_policies_[m].parameters(), cfg_.ppo.learning_rate);
        BaselineState baseline;
        std::size_t start_t = warmup_t_.count(space.stream_id) ? warmup_t_[space.stream_id] : 0;
        if (start_t > 0) restore_optimizer(stage_tag, optimizer, baseline, m);

        std::size_t trials = 0;
        for (std::size_t t = start_t; t < cfg_.warmup_budget.timesteps; ++t) {
            const std::size_t n = cfg_.warmup_budget.num_samples;
            std::vector<SampleTrace> traces(n);
            std::vector<Architecture> archs(n);
            for (std::size_t i = 0; i < n; ++i) {
                Rng sample_rng = base_rng_.split(stage_id, t, i).split(0);
                traces[i] = stream_policies_[m].sample(sample_rng);
                archs[i].streams = {{space.stream_id, traces[i].tokens}};
            }

            std::vector<TrialOutcome> outcomes(n);
            detail::parallel_for(n, cfg_.warmup_budget.workers, [&](std::size_t i) {
                outcomes[i] = run_trial(archs[i], ChildModel::Mode::standalone, stage_id, t, i);
            });

            UpdateBatch batch;
            UpdateMetrics metrics;
            double hits = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::string key = archs[i].canonical_key();
                if (tracker.contains(key)) hits += 1.0;
                const double r = cfg_.ppo.use_motion_average
                                     ? reward(tracker, key, outcomes[i].e_val)
                                     : (tracker.update(key, outcomes[i].e_val), -outcomes[i].e_val);
                TrialSample sample;
                sample.stream_traces = {traces[i]};
                sample.old_log_prob = traces[i].total_log_prob;
                sample.reward = r;
                batch.samples.push_back(std::move(sample));
                log_trial(stage_tag, t, i, key, outcomes[i], r);
            }
            if (all_diverged(outcomes))
                throw StageFailure("warm-up stage for stream '" + space.stream_id +
                                   "': every trial of timestep " + std::to_string(t) +
                                   " diverged (penalty E_val " + std::to_string(diverged_penalty_) +
                                   ")");

            std::vector<ControllerPolicy*> policies = {&stream_policies_[m]};
            metrics = update_controllers(policies, nullptr, UpdateMasks{}, batch, cfg_.ppo,
                                         optimizer, baseline);
            log_metrics(stage_tag, t, metrics, hits / static_cast<double>(n));
            trials += n;
            total_trials_ += n;
            warmup_t_[space.stream_id] = t + 1;
            persist_stage(stage_tag, optimizer, baseline, m);
        }

        Rng reduce_rng = base_rng_.split(stage_id, 777777);
        ReducedSpace reduced = reduce_space(space, stream_policies_[m], cfg_.keep_per_slot,
                                            reduce_rng, cfg_.reduce_samples, stage_tag);
        reduced_.resize(spaces_.size());
        reduced_[m] = reduced;
        warmup_done_[m] = true;
        persist_reduced();

        WarmupResult result;
        result.reduced = reduced;
        result.trials = trials;
        result.best_e_val = std::numeric_limits<double>::infinity();
        for (const auto& [key, obs] : tracker.entries())
            result.best_e_val = std::min(result.best_e_val, tracker.mean(key));
        return result;
    }

    void warmup_all() {
        for (std::size_t m = 0; m < spaces_.size(); ++m)
            if (!warmup_done_[m]) warmup_stream(m);
    }

    /// End-to-end joint search: per timestep, N Monte-Carlo trials sampling
    /// all stream architectures plus the conditioned fusion architecture,
    /// training each joint child from scratch, then one joint PPO update.
    /// `stop_after` limits the timesteps executed in this call (resume covers
    /// the rest); 0 means run to the budget.
    SearchRunState joint_search(std::size_t stop_after = 0) {
        if (!cfg_.skip_warmup)
            for (std::size_t m = 0; m < spaces_.size(); ++m)
                if (!warmup_done_[m])
                    throw ContractError("joint search: warm-up missing for stream '" +
                                        spaces_[m].stream_id + "' (or set skip_warmup)");

        const std::size_t stage_id = 99;
        const std::string stage_tag = "joint";
        const auto start_time = std::chrono::steady_clock::now();

        std::vector<ControllerPolicy*> policies;
        std::vector<Tensor> all_params;
        for (auto& policy : stream_policies_) {
            policies.push_back(&policy);
            for (auto& p : policy.parameters()) all_params.push_back(p);
        }
        for (auto& p : fusion_policy_->parameters()) all_params.push_back(p);

        AdamOptimizer optimizer(all_params, cfg_.ppo.learning_rate);
        BaselineState baseline;
        if (joint_t_ > 0) restore_optimizer(stage_tag, optimizer, baseline, 0);

        UpdateMasks masks;
        std::vector<SlotMask> mask_storage;
        if (!cfg_.skip_warmup) {
            mask_storage.reserve(spaces_.size());
            for (std::size_t m = 0; m < spaces_.size(); ++m)
                mask_storage.push_back(mask_from_reduced(*reduced_[m]));
            for (const auto& mask : mask_storage) masks.stream_masks.push_back(&mask);
        }

        SearchRunState state;
        const std::size_t n = cfg_.joint_budget.num_samples;
        std::size_t executed = 0;
        for (std::size_t t = joint_t_; t < cfg_.joint_budget.timesteps; ++t) {
            if (stop_after > 0 && executed >= stop_after) {
                state.incomplete = true;
                break;
            }
            if (cfg_.joint_budget.wall_clock_seconds > 0) {
                const double elapsed =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time)
                        .count();
                if (elapsed > cfg_.joint_budget.wall_clock_seconds) {
                    state.incomplete = true;
                    break;
                }
            }

            std::vector<std::vector<SampleTrace>> stream_traces(n);
            std::vector<SampleTrace> fusion_traces(n);
            std::vector<Architecture> archs(n);
            std::vector<double> old_log_probs(n);
            for (std::size_t i = 0; i < n; ++i) {
                Rng sample_rng = base_rng_.split(stage_id, t, i).split(0);
                for (std::size_t m = 0; m < spaces_.size(); ++m) {
                    const SlotMask* mask = masks.stream_masks.empty() ? nullptr : masks.stream_masks[m];
                    stream_traces[i].push_back(stream_policies_[m].sample(sample_rng, mask));
                    archs[i].streams.push_back(
                        {spaces_[m].stream_id, stream_traces[i][m].tokens});
                }
                fusion_traces[i] = fusion_policy_->sample_fusion(stream_traces[i], sample_rng);
                archs[i].fusion = fusion_traces[i].tokens;
                archs[i].has_fusion = true;
                old_log_probs[i] = joint_log_prob(stream_traces[i], fusion_traces[i]);
            }

            std::vector<TrialOutcome> outcomes(n);
            detail::parallel_for(n, cfg_.joint_budget.workers, [&](std::size_t i) {
                outcomes[i] = run_trial(archs[i], ChildModel::Mode::joint, stage_id, t, i);
            });

            UpdateBatch batch;
            double hits = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::string key = archs[i].canonical_key();
                if (joint_tracker_.contains(key)) hits += 1.0;
                const double r =
                    cfg_.ppo.use_motion_average
                        ? reward(joint_tracker_, key, outcomes[i].e_val)
                        : (joint_tracker_.update(key, outcomes[i].e_val), -outcomes[i].e_val);
                TrialSample sample;
                sample.stream_traces = stream_traces[i];
                sample.fusion_trace = fusion_traces[i];
                sample.old_log_prob = old_log_probs[i];
                sample.reward = r;
                batch.samples.push_back(std::move(sample));
                log_trial(stage_tag, t, i, key, outcomes[i], r);
            }
            if (all_diverged(outcomes))
                throw StageFailure("joint search: every trial of timestep " + std::to_string(t) +
                                   " diverged");

            UpdateMetrics metrics = update_controllers(policies, &*fusion_policy_, masks, batch,
                                                       cfg_.ppo, optimizer, baseline);
            log_metrics(stage_tag, t, metrics, hits / static_cast<double>(n));
            total_trials_ += n;
            ++executed;
            joint_t_ = t + 1;
            persist_stage(stage_tag, optimizer, baseline, 0);
        }

        state.completed_timesteps = joint_t_;
        state.total_trials = total_trials_;
        state.leaderboard = leaderboard();
        persist_leaderboard(state.leaderboard);
        return state;
    }

    /// Leaderboard over the joint tracker: architectures with at least two
    /// observations rank ahead of single-observation entries; within a group
    /// lower motion-average error first, ties by higher count then key.
    std::vector<LeaderboardEntry> leaderboard() const {
        std::vector<LeaderboardEntry> entries;
        for (const auto& [key, obs] : joint_tracker_.entries()) {
            LeaderboardEntry entry;
            entry.key = key;
            entry.count = obs.size();
            entry.mean_e_val = joint_tracker_.mean(key);
            entry.variance = joint_tracker_.variance(key);
            entries.push_back(std::move(entry));
        }
        std::sort(entries.begin(), entries.end(),
                  [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
                      const bool a_multi = a.count >= 2, b_multi = b.count >= 2;
                      if (a_multi != b_multi) return a_multi;
                      if (a.mean_e_val != b.mean_e_val) return a.mean_e_val < b.mean_e_val;
                      if (a.count != b.count) return a.count > b.count;
                      return a.key < b.key;
                  });
        if (entries.size() > cfg_.leaderboard_size) entries.resize(cfg_.leaderboard_size);
        return entries;
    }

    /// Retrain the top finalists on train+val merged and report both metrics
    /// on the held-out test split. Each finalist trains `final_seeds` times;
    /// metrics are averaged across seeds.
    FinalReport finalize() {
        const auto board = leaderboard();
        if (board.empty()) throw ContractError("finalize: empty leaderboard");
        const std::size_t n_finalists = std::min<std::size_t>(3, board.size());
        if (test_.empty()) throw ContractError("finalize: empty test split");

        std::vector<EncodedClip> merged = train_;
        merged.insert(merged.end(), val_.begin(), val_.end());
        // deterministic internal re-split of the merged set for best-epoch
        // selection; the test split stays held out
        const DatasetSplit monitor_split = split_dataset(merged, 0.85, 0.15, cfg_.seed + 1);
        std::vector<EncodedClip> final_train, final_monitor;
        for (std::size_t i : monitor_split.train) final_train.push_back(merged[i]);
        for (std::size_t i : monitor_split.val) final_monitor.push_back(merged[i]);
        for (std::size_t i : monitor_split.test) final_train.push_back(merged[i]);

        FinalReport report;
        double best_rmse = std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < n_finalists; ++f) {
            const Architecture arch = Architecture::parse(board[f].key);
            FinalistReport finalist;
            finalist.key = board[f].key;
            PredictionSet last_preds;
            for (std::size_t s = 0; s < cfg_.final_seeds; ++s) {
                const std::uint64_t seed = base_rng_.split(500, f, s).next_u64();
                ChildModel model(arch, spaces_, &fusion_space_,
                                 arch.has_fusion ? ChildModel::Mode::joint
                                                 : ChildModel::Mode::standalone,
                                 cfg_.model, final_train, seed);
                TrainConfig train_cfg = cfg_.train;
                train_cfg.seed = seed;
                train_from_scratch(model, final_train, final_monitor, train_cfg);
                PredictionSet preds;
                for (const auto& clip : test_)
                    preds.add(clip.clip_id, model.predict(clip), clip.label);
                finalist.per_seed_rmse.push_back(rmse(preds));
                finalist.per_seed_mae.push_back(mae(preds));
                last_preds = preds;
            }
            for (double v : finalist.per_seed_rmse) finalist.rmse += v;
            finalist.rmse /= static_cast<double>(cfg_.final_seeds);
            for (double v : finalist.per_seed_mae) finalist.mae += v;
            finalist.mae /= static_cast<double>(cfg_.final_seeds);
            if (finalist.rmse < best_rmse) {
                best_rmse = finalist.rmse;
                report.best_index = f;
                report.best_predictions = last_preds;
            }
            report.finalists.push_back(std::move(finalist));
        }
        persist_report(report);
        return report;
    }

private:
    struct TrialOutcome {
        double e_val = 0.0;
        double train_rmse = 0.0;
        double wall_seconds = 0.0;
        std::uint64_t seed = 0;
        bool diverged = false;
        double log_prob = 0.0;
    };

    TrialOutcome run_trial(const Architecture& arch, ChildModel::Mode mode, std::size_t stage_id,
                           std::size_t t, std::size_t i) const {
        Rng trial_rng = base_rng_.split(stage_id, t, i);
        const std::uint64_t init_seed = trial_rng.split(1).next_u64();
        TrialOutcome outcome;
        outcome.seed = init_seed;
        try {
            ChildModel model(arch, spaces_, mode == ChildModel::Mode::joint ? &fusion_space_ : nullptr,
                             mode, cfg_.model, train_, init_seed);
            TrainConfig train_cfg = cfg_.train;
            train_cfg.seed = trial_rng.split(2).next_u64();
            const TrialResult result = train_from_scratch(model, train_, val_, train_cfg);
            outcome.e_val = result.val_rmse;
            outcome.train_rmse = result.train_rmse;
            outcome.wall_seconds = result.wall_seconds;
        } catch (const DivergedError&) {
            outcome.e_val = diverged_penalty_;
            outcome.diverged = true;
        }
        return outcome;
    }

    static bool all_diverged(const std::vector<TrialOutcome>& outcomes) {
        for (const auto& outcome : outcomes)
            if (!outcome.diverged) return false;
        return true;
    }

    // ----- persistence ------------------------------------------------------

    std::string state_path() const { return cfg_.run_dir + "/run_state.json"; }

    void log_trial(const std::string& stage, std::size_t t, std::size_t i, const std::string& key,
                   const TrialOutcome& outcome, double reward_value) {
        if (cfg_.run_dir.empty()) return;
        nlohmann::json line = {
            {"stage", stage},         {"t", t},
            {"i", i},                 {"key", key},
            {"e_val", outcome.e_val}, {"reward", reward_value},
            {"seed", outcome.seed},   {"diverged", outcome.diverged},
            {"wall", outcome.wall_seconds}};
        std::ofstream out(cfg_.run_dir + "/trials.jsonl", std::ios::app);
        out << line.dump() << "\n";
        std::ofstream tracker_log(cfg_.run_dir + "/tracker.log", std::ios::app);
        tracker_log << stage << '\t' << key << '\t' << csvio::format_double(outcome.e_val) << "\n";
    }

    void log_metrics(const std::string& stage, std::size_t t, const UpdateMetrics& metrics,
                     double hit_rate) {
        if (cfg_.run_dir.empty()) return;
        const std::string path = cfg_.run_dir + "/metrics.csv";
        const bool fresh = !std::filesystem::exists(path);
        std::ofstream out(path, std::ios::app);
        if (fresh) out << "stage,timestep,mean_reward,clip_fraction,mean_entropy,tracker_hit_rate\n";
        out << stage << ',' << t << ',' << csvio::format_double(metrics.mean_reward) << ','
            << csvio::format_double(metrics.clip_fraction) << ','
            << csvio::format_double(metrics.mean_entropy) << ',' << csvio::format_double(hit_rate)
            << "\n";
    }

    void persist_stage(const std::string& stage_tag, AdamOptimizer& optimizer,
                       const BaselineState& baseline, std::size_t stream_index) {
        if (cfg_.run_dir.empty()) return;
        checkpoint::NamedTensors tensors;
        if (stage_tag == "joint") {
            for (std::size_t m = 0; m < stream_policies_.size(); ++m) {
                auto named = stream_policies_[m].named_parameters("m" + std::to_string(m));
                tensors.insert(tensors.end(), named.begin(), named.end());
            }
            auto named = fusion_policy_->named_parameters("fusion");
            tensors.insert(tensors.end(), named.begin(), named.end());
        } else {
            auto named =
                stream_policies_[stream_index].named_parameters("m" + std::to_string(stream_index));
            tensors.insert(tensors.end(), named.begin(), named.end());
        }
        auto& m = optimizer.first_moments();
        auto& v = optimizer.second_moments();
        for (std::size_t p = 0; p < m.size(); ++p) {
            tensors.emplace_back("adam/m" + std::to_string(p), Tensor(Shape{m[p].size()}, m[p]));
            tensors.emplace_back("adam/v" + std::to_string(p), Tensor(Shape{v[p].size()}, v[p]));
        }
        tensors.emplace_back("adam/meta",
                             Tensor(Shape{3}, {static_cast<double>(optimizer.step_count()),
                                               baseline.initialized ? 1.0 : 0.0, baseline.value}));
        const std::string safe_tag = stage_tag == "joint" ? "joint" : "warmup_" +
                                         spaces_[stream_index].stream_id;
        checkpoint::save(cfg_.run_dir + "/policies/" + safe_tag + ".ckpt", tensors);
        persist_state();
    }

    void restore_optimizer(const std::string& stage_tag, AdamOptimizer& optimizer,
                           BaselineState& baseline, std::size_t stream_index) {
        const std::string safe_tag = stage_tag == "joint" ? "joint" : "warmup_" +
                                         spaces_[stream_index].stream_id;
        const std::string path = cfg_.run_dir + "/policies/" + safe_tag + ".ckpt";
        const auto tensors = checkpoint::load(path);
        auto& m = optimizer.first_moments();
        auto& v = optimizer.second_moments();
        for (const auto& [name, tensor] : tensors) {
            if (name.rfind("adam/m", 0) == 0 && name != "adam/meta")
                m.at(std::stoul(name.substr(6))) = tensor.data();
            else if (name.rfind("adam/v", 0) == 0)
                v.at(std::stoul(name.substr(6))) = tensor.data();
            else if (name == "adam/meta") {
                optimizer.set_step_count(static_cast<std::size_t>(tensor.at(0)));
                baseline.initialized = tensor.at(1) != 0.0;
                baseline.value = tensor.at(2);
            }
        }
    }

    void persist_state() {
        if (cfg_.run_dir.empty()) return;
        nlohmann::json state;
        state["joint_t"] = joint_t_;
        state["total_trials"] = total_trials_;
        nlohmann::json warm;
        for (const auto& [stream, t] : warmup_t_) warm[stream] = t;
        state["warmup_t"] = warm;
        nlohmann::json done = nlohmann::json::array();
        for (bool flag : warmup_done_) done.push_back(flag);
        state["warmup_done"] = done;
        std::ofstream out(state_path(), std::ios::trunc);
        out << state.dump(2) << "\n";
    }

    void persist_reduced() {
        if (cfg_.run_dir.empty()) return;
        nlohmann::json doc = nlohmann::json::array();
        for (std::size_t m = 0; m < spaces_.size(); ++m) {
            if (!reduced_.size() || m >= reduced_.size() || !reduced_[m]) continue;
            nlohmann::json entry;
            entry["stream_id"] = reduced_[m]->stream_id;
            entry["provenance"] = reduced_[m]->provenance;
            entry["kept"] = reduced_[m]->kept;
            doc.push_back(entry);
        }
        std::ofstream out(cfg_.run_dir + "/reduced_spaces.json", std::ios::trunc);
        out << doc.dump(2) << "\n";
    }

    void persist_leaderboard(const std::vector<LeaderboardEntry>& board) {
        if (cfg_.run_dir.empty()) return;
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& entry : board) {
            nlohmann::json row;
            row["key"] = entry.key;
            row["mean_e_val"] = entry.mean_e_val;
            row["count"] = entry.count;
            row["variance"] = entry.variance;
            doc.push_back(row);
        }
        std::ofstream out(cfg_.run_dir + "/leaderboard.json", std::ios::trunc);
        out << doc.dump(2) << "\n";
    }

    void persist_report(const FinalReport& report) {
        if (cfg_.run_dir.empty()) return;
        nlohmann::json doc;
        nlohmann::json finalists = nlohmann::json::array();
        for (std::size_t f = 0; f < report.finalists.size(); ++f) {
            const auto& finalist = report.finalists[f];
            nlohmann::json row;
            row["key"] = finalist.key;
            row["rmse"] = finalist.rmse;
            row["mae"] = finalist.mae;
            row["per_seed_rmse"] = finalist.per_seed_rmse;
            row["per_seed_mae"] = finalist.per_seed_mae;
            row["best"] = f == report.best_index;
            finalists.push_back(row);
        }
        doc["finalists"] = finalists;
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& entry : report.best_predictions.entries) {
            preds.push_back({{"clip_id", entry.clip_id},
                             {"predicted", entry.predicted},
                             {"truth", entry.truth}});
        }
        doc["best_predictions"] = preds;
        std::ofstream out(cfg_.run_dir + "/report.json", std::ios::trunc);
        out << doc.dump(2) << "\n";
    }

    void restore() {
        std::ifstream in(state_path());
        if (!in) return;
        nlohmann::json state = nlohmann::json::parse(in);
        joint_t_ = state.value("joint_t", std::size_t{0});
        total_trials_ = state.value("total_trials", std::size_t{0});
        if (state.contains("warmup_t"))
            for (auto& [stream, t] : state["warmup_t"].items())
                warmup_t_[stream] = t.get<std::size_t>();
        if (state.contains("warmup_done")) {
            const auto done = state["warmup_done"];
            for (std::size_t m = 0; m < warmup_done_.size() && m < done.size(); ++m)
                warmup_done_[m] = done[m].get<bool>();
        }

        // replay the tracker log
        std::ifstream tracker_log(cfg_.run_dir + "/tracker.log");
        std::string line;
        while (std::getline(tracker_log, line)) {
            const auto tab1 = line.find('\t');
            const auto tab2 = line.find('\t', tab1 + 1);
            if (tab1 == std::string::npos || tab2 == std::string::npos) continue;
            const std::string stage = line.substr(0, tab1);
            const std::string key = line.substr(tab1 + 1, tab2 - tab1 - 1);
            const double e_val = std::stod(line.substr(tab2 + 1));
            if (stage == "joint")
                joint_tracker_.update(key, e_val);
            else if (stage.rfind("warmup:", 0) == 0)
                warmup_trackers_[stage.substr(7)].update(key, e_val);
        }

        // restore policies
        for (std::size_t m = 0; m < spaces_.size(); ++m) {
            const std::string path =
                cfg_.run_dir + "/policies/warmup_" + spaces_[m].stream_id + ".ckpt";
            if (std::filesystem::exists(path))
                stream_policies_[m].load_state(checkpoint::load(path), "m" + std::to_string(m));
        }
        const std::string joint_path = cfg_.run_dir + "/policies/joint.ckpt";
        if (std::filesystem::exists(joint_path)) {
            const auto tensors = checkpoint::load(joint_path);
            for (std::size_t m = 0; m < spaces_.size(); ++m)
                stream_policies_[m].load_state(tensors, "m" + std::to_string(m));
            fusion_policy_->load_state(tensors, "fusion");
        }

        // restore reduced spaces
        const std::string reduced_path = cfg_.run_dir + "/reduced_spaces.json";
        if (std::filesystem::exists(reduced_path)) {
            std::ifstream rin(reduced_path);
            nlohmann::json doc = nlohmann::json::parse(rin);
            reduced_.resize(spaces_.size());
            for (const auto& entry : doc) {
                for (std::size_t m = 0; m < spaces_.size(); ++m) {
                    if (spaces_[m].stream_id != entry["stream_id"].get<std::string>()) continue;
                    ReducedSpace reduced;
                    reduced.stream_id = spaces_[m].stream_id;
                    reduced.provenance = entry.value("provenance", std::string{});
                    reduced.kept = entry["kept"].get<std::vector<std::vector<std::size_t>>>();
                    reduced_[m] = std::move(reduced);
                }
            }
        }
    }

    std::vector<StreamSearchSpace> spaces_;
    FusionSearchSpace fusion_space_;
    std::vector<EncodedClip> clips_, train_, val_, test_;
    OrchestratorConfig cfg_;
    Rng base_rng_;

    std::vector<ControllerPolicy> stream_policies_;
    std::optional<ControllerPolicy> fusion_policy_;
    std::vector<std::optional<ReducedSpace>> reduced_;
    std::vector<bool> warmup_done_;
    std::map<std::string, std::size_t> warmup_t_;
    std::size_t joint_t_ = 0;
    std::size_t total_trials_ = 0;
    std::map<std::string, MotionAverageTracker> warmup_trackers_;
    MotionAverageTracker joint_tracker_;
    double diverged_penalty_ = 10.0;
};

}  // namespace streamnas
