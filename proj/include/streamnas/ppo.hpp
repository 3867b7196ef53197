#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamnas/adam.hpp"
#include "streamnas/controller.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/search_space.hpp"
#include "streamnas/tensor.hpp"

namespace streamnas {

struct PPOConfig {
    double clip_epsilon = 0.2;
    std::size_t num_samples = 8;  // Monte-Carlo trials per controller update
    double learning_rate = 3e-4;
    double baseline_decay = 0.95;
    bool use_advantage = true;
    // Reward each trial with the running mean over all trials of its
    // architecture instead of the single validation error.
    bool use_motion_average = true;
    double entropy_weight = 1e-2;

    void validate() const {
        if (clip_epsilon <= 0.0 || clip_epsilon >= 1.0)
            throw ContractError("ppo: clip epsilon must lie in (0,1)");
        if (num_samples < 1) throw ContractError("ppo: need at least one sample per update");
    }
};

/// Clipping bound g(eps, r): (1+eps)r for non-negative rewards, (1-eps)r below.
inline double ppo_clip_bound(double epsilon, double reward) {
    return reward >= 0.0 ? (1.0 + epsilon) * reward : (1.0 - epsilon) * reward;
}

/// Clipped surrogate for one sampled architecture:
/// min( ratio * r, g(eps, r) ) with ratio = pi_new / pi_old.
inline double ppo_objective(double log_prob_new, double log_prob_old, double reward,
                            double epsilon) {
    if (!std::isfinite(log_prob_new) || !std::isfinite(log_prob_old) || !std::isfinite(reward))
        throw ContractError("ppo_objective: non-finite input");
    const double ratio = std::exp(log_prob_new - log_prob_old);
    return std::min(ratio * reward, ppo_clip_bound(epsilon, reward));
}

/// Differentiable version; log_prob_new carries the graph.
inline Tensor ppo_objective_tensor(const Tensor& log_prob_new, double log_prob_old, double reward,
                                   double epsilon) {
    Tensor ratio = exp_op(add_scalar(log_prob_new, -log_prob_old));
    Tensor unclipped = scale(ratio, reward);
    return minimum(unclipped, Tensor::scalar(ppo_clip_bound(epsilon, reward)));
}

/// log pi(A) = log pi_f(A_f | {A_m}) + sum_m log pi_m(A_m). The fusion trace
/// must have been conditioned on exactly these stream traces.
inline double joint_log_prob(const std::vector<SampleTrace>& stream_traces,
                             const SampleTrace& fusion_trace) {
    if (fusion_trace.conditioning_fingerprint != stream_states_fingerprint(stream_traces))
        throw FactorizationError(
            "joint_log_prob: fusion trace was not conditioned on these stream traces");
    double total = fusion_trace.total_log_prob;
    for (const auto& trace : stream_traces) total += trace.total_log_prob;
    return total;
}

/// Running per-architecture statistics over validation errors. The mean is
/// computed over the sorted observation list, so it is exactly invariant to
/// the order the observations arrived in.
class MotionAverageTracker {
public:
    double update(const std::string& arch_key, double e_val) {
        if (!std::isfinite(e_val))
            throw ContractError("tracker: non-finite validation error rejected");
        observations_[arch_key].push_back(e_val);
        return mean(arch_key);
    }

    bool contains(const std::string& arch_key) const { return observations_.count(arch_key) > 0; }

    std::size_t count(const std::string& arch_key) const {
        auto it = observations_.find(arch_key);
        return it == observations_.end() ? 0 : it->second.size();
    }

    double mean(const std::string& arch_key) const {
        const auto& obs = observations_.at(arch_key);
        std::vector<double> sorted(obs);
        std::sort(sorted.begin(), sorted.end());
        double total = 0.0;
        for (double v : sorted) total += v;
        return total / static_cast<double>(sorted.size());
    }

    double variance(const std::string& arch_key) const {
        const auto& obs = observations_.at(arch_key);
        if (obs.size() < 2) return 0.0;
        const double m = mean(arch_key);
        std::vector<double> sorted(obs);
        std::sort(sorted.begin(), sorted.end());
        double total = 0.0;
        for (double v : sorted) total += (v - m) * (v - m);
        return total / static_cast<double>(sorted.size() - 1);
    }

    const std::map<std::string, std::vector<double>>& entries() const { return observations_; }

    std::size_t total_observations() const {
        std::size_t n = 0;
        for (const auto& [key, obs] : observations_) n += obs.size();
        return n;
    }

private:
    std::map<std::string, std::vector<double>> observations_;
};

/// Update the tracker with a trial result and return the reward signal:
/// the negated motion-average error, so that maximising the PPO objective
/// prefers lower validation error.
inline double reward(MotionAverageTracker& tracker, const std::string& arch_key, double e_val) {
    return -tracker.update(arch_key, e_val);
}

// ---------------------------------------------------------------------------
// Controller updates.
// ---------------------------------------------------------------------------

/// One Monte-Carlo trial inside an update batch. Old-policy log-probs are
/// frozen at sampling time and never recomputed from the updated policy.
struct TrialSample {
    std::vector<SampleTrace> stream_traces;
    std::optional<SampleTrace> fusion_trace;
    double old_log_prob = 0.0;
    double reward = 0.0;
};

struct UpdateBatch {
    std::vector<TrialSample> samples;
};

/// Running reward baseline (optional advantage subtraction).
struct BaselineState {
    bool initialized = false;
    double value = 0.0;
};

struct UpdateMetrics {
    double mean_reward = 0.0;
    double clip_fraction = 0.0;
    double mean_entropy = 0.0;
    double loss = 0.0;
};

/// Masks restricting stream slots to their reduced spaces (nullptr entries
/// mean the full space) and optionally the fusion slots.
struct UpdateMasks {
    std::vector<const SlotMask*> stream_masks;
    const SlotMask* fusion_mask = nullptr;
};

/// Monte-Carlo PPO loss L(theta, theta_t) = -(1/N) sum_i J_ppo(A_i) minus the
/// entropy bonus (negated: this is the quantity a descent step minimises).
/// Gradients flow to stream controllers both through their own log-probs and
/// through the fusion conditioning path.
inline Tensor ppo_batch_loss(std::vector<ControllerPolicy*>& stream_policies,
                             ControllerPolicy* fusion_policy, const UpdateMasks& masks,
                             const UpdateBatch& batch, const PPOConfig& cfg, double baseline,
                             UpdateMetrics* metrics = nullptr) {
    cfg.validate();
    if (batch.samples.empty()) throw ContractError("ppo update: empty batch");
    if (!masks.stream_masks.empty() && masks.stream_masks.size() != stream_policies.size())
        throw ContractError("ppo update: mask count mismatch");

    Tensor objective_sum = Tensor::scalar(0.0);
    Tensor entropy_sum = Tensor::scalar(0.0);
    double reward_sum = 0.0;
    double clipped = 0.0;

    for (const TrialSample& sample : batch.samples) {
        if (sample.stream_traces.size() != stream_policies.size())
            throw ContractError("ppo update: trace count does not match policies");

        std::vector<ScoreOutput> stream_scores;
        stream_scores.reserve(stream_policies.size());
        Tensor log_prob = Tensor::scalar(0.0);
        Tensor entropy = Tensor::scalar(0.0);
        for (std::size_t m = 0; m < stream_policies.size(); ++m) {
            const SlotMask* mask =
                masks.stream_masks.empty() ? nullptr : masks.stream_masks[m];
            ScoreOutput out = stream_policies[m]->score_detailed(sample.stream_traces[m].tokens, mask);
            log_prob = add(log_prob, out.log_prob);
            entropy = add(entropy, out.entropy);
            stream_scores.push_back(std::move(out));
        }
        if (fusion_policy) {
            if (!sample.fusion_trace)
                throw ContractError("ppo update: fusion policy present but no fusion trace");
            ScoreOutput out = fusion_policy->score_fusion_detailed(sample.fusion_trace->tokens,
                                                                   stream_scores, masks.fusion_mask);
            log_prob = add(log_prob, out.log_prob);
            entropy = add(entropy, out.entropy);
        }

        const double advantage =
            cfg.use_advantage ? sample.reward - baseline : sample.reward;
        objective_sum =
            add(objective_sum,
                ppo_objective_tensor(log_prob, sample.old_log_prob, advantage, cfg.clip_epsilon));
        entropy_sum = add(entropy_sum, entropy);

        reward_sum += sample.reward;
        const double ratio = std::exp(log_prob.value() - sample.old_log_prob);
        if (std::abs(ratio - 1.0) > cfg.clip_epsilon) clipped += 1.0;
    }

    const double inv_n = 1.0 / static_cast<double>(batch.samples.size());
    Tensor loss = scale(add(objective_sum, scale(entropy_sum, cfg.entropy_weight)), -inv_n);

    if (metrics) {
        metrics->mean_reward = reward_sum * inv_n;
        metrics->clip_fraction = clipped * inv_n;
        metrics->mean_entropy = entropy_sum.value() * inv_n;
        metrics->loss = loss.value();
    }
    return loss;
}

/// One joint Adam ascent step on all controllers from a complete batch.
/// Returns per-update metrics; updates the baseline EMA afterwards.
inline UpdateMetrics update_controllers(std::vector<ControllerPolicy*> stream_policies,
                                        ControllerPolicy* fusion_policy, const UpdateMasks& masks,
                                        const UpdateBatch& batch, const PPOConfig& cfg,
                                        AdamOptimizer& optimizer, BaselineState& baseline) {
    double reward_mean = 0.0;
    for (const auto& sample : batch.samples) reward_mean += sample.reward;
    if (!batch.samples.empty()) reward_mean /= static_cast<double>(batch.samples.size());
    if (cfg.use_advantage && !baseline.initialized) {
        baseline.value = reward_mean;
        baseline.initialized = true;
    }

    UpdateMetrics metrics;
    Tensor loss =
        ppo_batch_loss(stream_policies, fusion_policy, masks, batch, cfg, baseline.value, &metrics);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();

    if (cfg.use_advantage)
        baseline.value = cfg.baseline_decay * baseline.value + (1.0 - cfg.baseline_decay) * reward_mean;
    return metrics;
}

}  // namespace streamnas
