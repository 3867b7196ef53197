#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "streamnas/ppo.hpp"
#include "streamnas/rng.hpp"

using namespace streamnas;

namespace {

std::vector<DecisionSlot> toy_slots(const std::vector<std::size_t>& arities) {
    std::vector<DecisionSlot> slots;
    for (std::size_t s = 0; s < arities.size(); ++s) {
        DecisionSlot slot;
        slot.slot_id = "slot" + std::to_string(s);
        for (std::size_t c = 0; c < arities[s]; ++c) slot.choices.push_back("c" + std::to_string(c));
        slots.push_back(std::move(slot));
    }
    return slots;
}

ControllerConfig small_config() {
    ControllerConfig cfg;
    cfg.hidden = 8;
    cfg.embed = 4;
    return cfg;
}

void perturb_parameters(ControllerPolicy& policy, Rng rng, double scale = 0.5) {
    for (Tensor& param : policy.parameters())
        for (double& v : param.data()) v += rng.uniform(-scale, scale);
}

}  // namespace

TEST_CASE("ppo objective reproduces hand-computed values exactly") {
    // ratio 1.5, r = 1, eps = 0.2 -> min(1.5, 1.2) = 1.2
    CHECK(ppo_objective(std::log(1.5), 0.0, 1.0, 0.2) == 1.2);
    // ratio 1.0, r = -2, eps = 0.2 -> min(-2.0, -1.6) = -2.0
    CHECK(ppo_objective(-0.7, -0.7, -2.0, 0.2) == -2.0);
    // zero reward annihilates both branches
    CHECK(ppo_objective(std::log(3.0), 0.0, 0.0, 0.2) == 0.0);
    CHECK(ppo_objective(-2.0, -0.1, 0.0, 0.3) == 0.0);
}

TEST_CASE("ppo objective equals the unclipped ratio*r inside the clip band") {
    Rng rng(17);
    for (int i = 0; i < 500; ++i) {
        const double eps = rng.uniform(0.05, 0.5);
        const double ratio = rng.uniform(1.0 - eps, 1.0 + eps);
        const double r = rng.uniform(-3.0, 3.0);
        const double lp_old = rng.uniform(-2.0, 0.0);
        const double lp_new = lp_old + std::log(ratio);
        const double value = ppo_objective(lp_new, lp_old, r, eps);
        CHECK(value == Catch::Approx(std::exp(lp_new - lp_old) * r).epsilon(1e-12));
    }
}

TEST_CASE("ppo objective tensor form agrees with the scalar form") {
    Rng rng(18);
    for (int i = 0; i < 200; ++i) {
        const double lp_old = rng.uniform(-3.0, 0.0);
        const double lp_new = lp_old + rng.uniform(-0.8, 0.8);
        const double r = rng.uniform(-2.0, 2.0);
        const double eps = rng.uniform(0.1, 0.4);
        Tensor lp = Tensor::scalar(lp_new);
        CHECK(ppo_objective_tensor(lp, lp_old, r, eps).value() ==
              Catch::Approx(ppo_objective(lp_new, lp_old, r, eps)).epsilon(1e-14));
    }
}

TEST_CASE("joint log prob adds stream and fusion terms") {
    SampleTrace s0, s1, fusion;
    s0.total_log_prob = -1.0;
    s1.total_log_prob = -1.0;
    fusion.total_log_prob = -0.5;
    fusion.conditioning_fingerprint = stream_states_fingerprint({s0, s1});
    CHECK(joint_log_prob({s0, s1}, fusion) == Catch::Approx(-2.5));

    SampleTrace other = s0;
    other.final_hidden = {1.0};
    CHECK_THROWS_AS(joint_log_prob({other, s1}, fusion), FactorizationError);
}

TEST_CASE("deterministic policies give joint log prob zero") {
    ControllerConfig cfg = small_config();
    ControllerPolicy stream(ControllerPolicy::Role::stream, toy_slots({1, 1}), cfg, Rng(1));
    ControllerPolicy fusion(ControllerPolicy::Role::fusion, toy_slots({1}), cfg, Rng(2), 1);
    Rng rng(3);
    SampleTrace st = stream.sample(rng);
    SampleTrace ft = fusion.sample_fusion({st}, rng);
    CHECK(joint_log_prob({st}, ft) == 0.0);
}

TEST_CASE("exp(joint log prob) sums to one over an enumerable toy joint space") {
    ControllerConfig cfg = small_config();
    ControllerPolicy stream_a(ControllerPolicy::Role::stream, toy_slots({2}), cfg, Rng(11));
    ControllerPolicy stream_b(ControllerPolicy::Role::stream, toy_slots({2}), cfg, Rng(12));
    ControllerPolicy fusion(ControllerPolicy::Role::fusion, toy_slots({2}), cfg, Rng(13), 2);
    perturb_parameters(stream_a, Rng(14));
    perturb_parameters(stream_b, Rng(15));
    perturb_parameters(fusion, Rng(16));

    double total = 0.0;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
            ScoreOutput oa = stream_a.score_detailed({a});
            ScoreOutput ob = stream_b.score_detailed({b});
            for (std::size_t f = 0; f < 2; ++f) {
                ScoreOutput of = fusion.score_fusion_detailed({f}, {oa, ob});
                total += std::exp(oa.log_prob.value() + ob.log_prob.value() + of.log_prob.value());
            }
        }
    CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("tracker mean is the exact arithmetic mean and order-insensitive") {
    MotionAverageTracker tracker;
    tracker.update("a", 4.0);
    CHECK(tracker.update("a", 6.0) == 5.0);
    CHECK(reward(tracker, "a", 5.0) == -5.0);

    MotionAverageTracker first;
    CHECK(reward(first, "x", 3.96) == -3.96);

    SECTION("large random insertion batch") {
        Rng rng(2024);
        MotionAverageTracker big;
        std::vector<double> values;
        for (int i = 0; i < 10000; ++i) {
            const double v = rng.uniform(0.0, 24.0);
            values.push_back(v);
            big.update("k", v);
        }
        double recomputed = 0.0;
        for (double v : values) recomputed += v;
        recomputed /= static_cast<double>(values.size());
        CHECK(std::abs(big.mean("k") - recomputed) < 1e-12);
        CHECK(big.count("k") == 10000);
    }

    SECTION("permutation invariance is exact") {
        Rng rng(77);
        std::vector<double> values;
        for (int i = 0; i < 500; ++i) values.push_back(rng.uniform(0.0, 24.0));
        MotionAverageTracker in_order, shuffled_order;
        for (double v : values) in_order.update("k", v);
        std::vector<double> shuffled = values;
        rng.shuffle(shuffled);
        for (double v : shuffled) shuffled_order.update("k", v);
        CHECK(in_order.mean("k") == shuffled_order.mean("k"));
        CHECK(in_order.variance("k") == shuffled_order.variance("k"));
    }
}

TEST_CASE("tracker rejects non-finite errors and leaves state untouched") {
    MotionAverageTracker tracker;
    tracker.update("a", 1.0);
    CHECK_THROWS_AS(tracker.update("a", std::nan("")), ContractError);
    CHECK_THROWS_AS(reward(tracker, "a", std::numeric_limits<double>::infinity()), ContractError);
    CHECK(tracker.count("a") == 1);
    CHECK(tracker.mean("a") == 1.0);
}

TEST_CASE("at ratio one the ppo gradient is the REINFORCE gradient") {
    ControllerConfig cfg = small_config();
    ControllerPolicy policy(ControllerPolicy::Role::stream, toy_slots({2}), cfg, Rng(21));
    perturb_parameters(policy, Rng(22));
    const double r = -1.7;

    Rng rng(23);
    SampleTrace trace = policy.sample(rng);

    PPOConfig ppo;
    ppo.entropy_weight = 0.0;
    ppo.use_advantage = false;
    ppo.num_samples = 1;

    UpdateBatch batch;
    TrialSample sample;
    sample.stream_traces = {trace};
    sample.old_log_prob = trace.total_log_prob;  // ratio = 1
    sample.reward = r;
    batch.samples.push_back(sample);

    std::vector<ControllerPolicy*> streams = {&policy};
    UpdateMasks masks;
    Tensor loss = ppo_batch_loss(streams, nullptr, masks, batch, ppo, 0.0);
    for (Tensor& p : policy.parameters()) p.zero_grad();
    loss.backward();
    std::vector<std::vector<double>> ppo_grads;
    for (Tensor& p : policy.parameters()) ppo_grads.push_back(p.grad());

    // independent REINFORCE route: grad of -r * log pi(A)
    for (Tensor& p : policy.parameters()) p.zero_grad();
    scale(policy.score(trace.tokens), -r).backward();
    auto params = policy.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].grad().size(); ++j)
            CHECK(ppo_grads[i][j] == Catch::Approx(params[i].grad()[j]).margin(1e-12));
}

TEST_CASE("zero rewards with entropy disabled leave parameters unchanged") {
    ControllerConfig cfg = small_config();
    ControllerPolicy policy(ControllerPolicy::Role::stream, toy_slots({3}), cfg, Rng(31));
    perturb_parameters(policy, Rng(32));
    std::vector<std::vector<double>> before;
    for (Tensor& p : policy.parameters()) before.push_back(p.data());

    PPOConfig ppo;
    ppo.entropy_weight = 0.0;
    ppo.use_advantage = false;
    AdamOptimizer opt(policy.parameters(), 0.05);
    BaselineState baseline;
    std::vector<ControllerPolicy*> streams = {&policy};
    UpdateMasks masks;

    for (int step = 0; step < 2; ++step) {
        UpdateBatch batch;
        for (int i = 0; i < 4; ++i) {
            Rng rng(100 + step * 10 + i);
            TrialSample sample;
            SampleTrace trace = policy.sample(rng);
            sample.old_log_prob = trace.total_log_prob;
            sample.stream_traces = {trace};
            sample.reward = 0.0;
            batch.samples.push_back(sample);
        }
        update_controllers(streams, nullptr, masks, batch, ppo, opt, baseline);
    }

    auto params = policy.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].data() == before[i]);
}

TEST_CASE("empty batch is a contract error") {
    ControllerConfig cfg = small_config();
    ControllerPolicy policy(ControllerPolicy::Role::stream, toy_slots({2}), cfg, Rng(41));
    std::vector<ControllerPolicy*> streams = {&policy};
    UpdateMasks masks;
    UpdateBatch batch;
    PPOConfig ppo;
    CHECK_THROWS_AS(ppo_batch_loss(streams, nullptr, masks, batch, ppo, 0.0), ContractError);
}

TEST_CASE("one-slot bandit converges to the better arm", "[bandit]") {
    // arms have deterministic validation errors 1.0 (good) and 2.0 (bad)
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        ControllerConfig cfg = small_config();
        ControllerPolicy policy(ControllerPolicy::Role::stream, toy_slots({2}), cfg, Rng(seed));
        PPOConfig ppo;
        ppo.num_samples = 8;
        ppo.learning_rate = 0.02;
        ppo.entropy_weight = 1e-3;
        AdamOptimizer opt(policy.parameters(), ppo.learning_rate);
        BaselineState baseline;
        MotionAverageTracker tracker;
        std::vector<ControllerPolicy*> streams = {&policy};
        UpdateMasks masks;
        Rng run_rng(1000 + seed);

        double prob_good = 0.5;
        int converged_at = -1;
        for (int update = 0; update < 200; ++update) {
            UpdateBatch batch;
            for (std::size_t i = 0; i < ppo.num_samples; ++i) {
                Rng trial_rng = run_rng.split(update, i);
                TrialSample sample;
                SampleTrace trace = policy.sample(trial_rng);
                const double e_val = trace.tokens[0] == 0 ? 1.0 : 2.0;
                Architecture arch;
                arch.streams = {{"bandit", trace.tokens}};
                sample.reward = reward(tracker, arch.canonical_key(), e_val);
                sample.old_log_prob = trace.total_log_prob;
                sample.stream_traces = {trace};
                batch.samples.push_back(sample);
            }
            update_controllers(streams, nullptr, masks, batch, ppo, opt, baseline);
            prob_good = std::exp(policy.score({0}).value());
            if (prob_good > 0.9) {
                converged_at = update;
                break;
            }
        }
        INFO("seed " << seed << " final p(good arm) = " << prob_good);
        CHECK(prob_good > 0.9);
        CHECK(converged_at >= 0);
    }
}

TEST_CASE("advantage baseline makes the gradient invariant to reward shifts") {
    auto gradient_for = [](double shift) {
        ControllerPolicy policy(ControllerPolicy::Role::stream, toy_slots({2}), small_config(),
                                Rng(71));
        perturb_parameters(policy, Rng(72));
        PPOConfig ppo;
        ppo.use_advantage = true;
        ppo.entropy_weight = 0.0;

        UpdateBatch batch;
        double mean_reward = 0.0;
        for (int i = 0; i < 4; ++i) {
            Rng rng(900 + i);
            TrialSample sample;
            SampleTrace trace = policy.sample(rng);
            sample.old_log_prob = trace.total_log_prob;
            sample.stream_traces = {trace};
            sample.reward = (trace.tokens[0] == 0 ? -1.0 : -2.0) + shift;
            mean_reward += sample.reward;
            batch.samples.push_back(sample);
        }
        mean_reward /= 4.0;

        std::vector<ControllerPolicy*> streams = {&policy};
        UpdateMasks masks;
        Tensor loss = ppo_batch_loss(streams, nullptr, masks, batch, ppo, mean_reward);
        for (Tensor& p : policy.parameters()) p.zero_grad();
        loss.backward();
        std::vector<double> flat;
        for (Tensor& p : policy.parameters())
            flat.insert(flat.end(), p.grad().begin(), p.grad().end());
        return flat;
    };

    const auto base = gradient_for(0.0);
    const auto shifted = gradient_for(10.0);
    REQUIRE(base.size() == shifted.size());
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(base[i] == Catch::Approx(shifted[i]).margin(1e-10));
}
