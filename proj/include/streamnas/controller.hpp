#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "streamnas/checkpoint.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/rng.hpp"
#include "streamnas/search_space.hpp"
#include "streamnas/tensor.hpp"

namespace streamnas {

struct ControllerConfig {
    std::size_t hidden = 64;
    std::size_t embed = 32;
};

/// Everything a sampling pass records: tokens, their log-probabilities under
/// the sampling policy, and the final LSTM states that condition the fusion
/// controller (the stream embedding e is the final hidden state).
struct SampleTrace {
    std::vector<std::size_t> tokens;
    std::vector<double> log_probs;
    double total_log_prob = 0.0;
    std::vector<double> final_hidden;
    std::vector<double> final_cell;
    // set on fusion traces: identifies the stream states this trace was
    // conditioned on, so factorization over mismatched traces is rejected
    std::uint64_t conditioning_fingerprint = 0;
};

/// Order-sensitive fingerprint of the stream states a fusion trace saw.
inline std::uint64_t stream_states_fingerprint(const std::vector<SampleTrace>& stream_traces) {
    std::uint64_t hash = 1469598103934665603ull;  // FNV-1a
    auto mix = [&hash](const std::vector<double>& values) {
        for (double v : values) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            for (int shift = 0; shift < 64; shift += 8) {
                hash ^= (bits >> shift) & 0xffu;
                hash *= 1099511628211ull;
            }
        }
    };
    for (const auto& trace : stream_traces) {
        mix(trace.final_hidden);
        mix(trace.final_cell);
    }
    return hash;
}

/// Differentiable outputs of a scoring pass.
struct ScoreOutput {
    Tensor log_prob;      // [1]
    Tensor entropy;       // [1], sum of per-slot conditional entropies
    Tensor final_hidden;  // [1, H]
    Tensor final_cell;    // [1, H]
};

/// Per-slot allowed original choice indices; empty optional = full space.
using SlotMask = std::vector<std::vector<std::size_t>>;

inline SlotMask mask_from_reduced(const ReducedSpace& reduced) { return reduced.kept; }

/// Single-layer LSTM policy that samples architecture tokens autoregressively:
/// slot t's logits are projected from the hidden state after feeding the
/// embedded token t-1 (slot 0 is fed a learned start embedding). The fusion
/// role instead derives its initial cell state and first input from the
/// stream controllers' final states through learned linear maps.
///
/// Output projections start at zero, so a fresh policy is exactly uniform
/// over every slot. Sampling and scoring share one forward path, so scoring
/// a sampled sequence reproduces its log-probability bit for bit.
class ControllerPolicy {
public:
    enum class Role { stream, fusion };

    ControllerPolicy(Role role, std::vector<DecisionSlot> slots, ControllerConfig cfg, Rng init_rng,
                     std::size_t num_condition_streams = 0)
        : role_(role),
          slots_(std::move(slots)),
          cfg_(cfg),
          num_condition_streams_(num_condition_streams) {
        for (const auto& slot : slots_) slot.validate();
        if (role_ == Role::fusion && num_condition_streams_ == 0)
            throw ContractError("fusion controller needs at least one conditioning stream");

        const std::size_t h = cfg_.hidden, e = cfg_.embed;
        wx_ = init_uniform({e, 4 * h}, e, init_rng);
        wh_ = init_uniform({h, 4 * h}, h, init_rng);
        b_ = Tensor(Shape{4 * h}, 0.0, true);
        if (role_ == Role::stream) start_embed_ = init_uniform({1, e}, e, init_rng);
        for (std::size_t s = 0; s + 1 < slots_.size(); ++s)
            embeds_.push_back(init_uniform({slots_[s].arity(), e}, e, init_rng));
        for (const auto& slot : slots_) {
            proj_w_.emplace_back(Shape{h, slot.arity()}, 0.0, true);
            proj_b_.emplace_back(Shape{slot.arity()}, 0.0, true);
        }
        if (role_ == Role::fusion) {
            cond_cell_w_ = Tensor(Shape{num_condition_streams_ * h, h}, 0.0, true);
            cond_embed_w_ = Tensor(Shape{num_condition_streams_ * h, e}, 0.0, true);
        }
    }

    Role role() const { return role_; }
    const std::vector<DecisionSlot>& slots() const { return slots_; }
    std::size_t hidden_size() const { return cfg_.hidden; }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> params = {wx_, wh_, b_};
        if (role_ == Role::stream) params.push_back(start_embed_);
        for (auto& t : embeds_) params.push_back(t);
        for (auto& t : proj_w_) params.push_back(t);
        for (auto& t : proj_b_) params.push_back(t);
        if (role_ == Role::fusion) {
            params.push_back(cond_cell_w_);
            params.push_back(cond_embed_w_);
        }
        return params;
    }

    checkpoint::NamedTensors named_parameters(const std::string& prefix) {
        checkpoint::NamedTensors named;
        named.emplace_back(prefix + "/wx", wx_);
        named.emplace_back(prefix + "/wh", wh_);
        named.emplace_back(prefix + "/b", b_);
        if (role_ == Role::stream) named.emplace_back(prefix + "/start_embed", start_embed_);
        for (std::size_t s = 0; s < embeds_.size(); ++s)
            named.emplace_back(prefix + "/embed" + std::to_string(s), embeds_[s]);
        for (std::size_t s = 0; s < proj_w_.size(); ++s) {
            named.emplace_back(prefix + "/proj_w" + std::to_string(s), proj_w_[s]);
            named.emplace_back(prefix + "/proj_b" + std::to_string(s), proj_b_[s]);
        }
        if (role_ == Role::fusion) {
            named.emplace_back(prefix + "/cond_cell_w", cond_cell_w_);
            named.emplace_back(prefix + "/cond_embed_w", cond_embed_w_);
        }
        return named;
    }

    void load_state(const checkpoint::NamedTensors& ckpt, const std::string& prefix) {
        auto mine = named_parameters(prefix);
        for (auto& [name, param] : mine) {
            bool found = false;
            for (const auto& [saved_name, saved] : ckpt) {
                if (saved_name != name) continue;
                if (saved.shape() != param.shape())
                    throw IoError("load_state: shape mismatch for " + name);
                param.data() = saved.data();
                found = true;
                break;
            }
            if (!found) throw IoError("load_state: missing tensor " + name);
        }
    }

    /// Draw one token sequence; records log-probs and final states.
    SampleTrace sample(Rng& rng, const SlotMask* mask = nullptr) const {
        if (role_ != Role::stream)
            throw ConditioningError("fusion controller cannot sample unconditioned");
        return sample_impl(rng, mask, nullptr, nullptr);
    }

    /// Fusion sampling conditioned on the stream traces: initial cell =
    /// projected concatenated stream cells, first input = projected
    /// concatenated stream embeddings.
    SampleTrace sample_fusion(const std::vector<SampleTrace>& stream_traces, Rng& rng,
                              const SlotMask* mask = nullptr) const {
        require_fusion_traces(stream_traces);
        std::vector<double> cells, hiddens;
        for (const auto& trace : stream_traces) {
            cells.insert(cells.end(), trace.final_cell.begin(), trace.final_cell.end());
            hiddens.insert(hiddens.end(), trace.final_hidden.begin(), trace.final_hidden.end());
        }
        const std::size_t cell_width = cells.size(), hidden_width = hiddens.size();
        const Tensor cell_cat(Shape{1, cell_width}, std::move(cells));
        const Tensor hidden_cat(Shape{1, hidden_width}, std::move(hiddens));
        SampleTrace trace = sample_impl(rng, mask, &cell_cat, &hidden_cat);
        trace.conditioning_fingerprint = stream_states_fingerprint(stream_traces);
        return trace;
    }

    /// log pi(tokens), differentiable w.r.t. the controller parameters.
    Tensor score(const std::vector<std::size_t>& tokens, const SlotMask* mask = nullptr) const {
        return score_detailed(tokens, mask).log_prob;
    }

    ScoreOutput score_detailed(const std::vector<std::size_t>& tokens,
                               const SlotMask* mask = nullptr) const {
        if (role_ != Role::stream)
            throw ConditioningError("fusion controller scores need conditioning states");
        validate_tokens(slots_, tokens, "controller score");
        return forward(
            [&tokens](std::size_t slot, const Tensor&) { return tokens[slot]; }, mask, nullptr,
            nullptr, nullptr, nullptr);
    }

    /// Differentiable fusion score conditioned on differentiable stream
    /// states, so joint gradients reach the stream controllers both through
    /// their own log-probs and through the conditioning path.
    ScoreOutput score_fusion_detailed(const std::vector<std::size_t>& tokens,
                                      const std::vector<ScoreOutput>& stream_outputs,
                                      const SlotMask* mask = nullptr) const {
        if (role_ != Role::fusion) throw ConditioningError("stream controller takes no conditioning");
        if (stream_outputs.size() != num_condition_streams_)
            throw ConditioningError("fusion score: expected " +
                                    std::to_string(num_condition_streams_) + " stream states, got " +
                                    std::to_string(stream_outputs.size()));
        validate_tokens(slots_, tokens, "fusion score");
        std::vector<Tensor> cells, hiddens;
        for (const auto& out : stream_outputs) {
            cells.push_back(out.final_cell);
            hiddens.push_back(out.final_hidden);
        }
        const Tensor cell_cat = concat(cells, 1);
        const Tensor hidden_cat = concat(hiddens, 1);
        return forward([&tokens](std::size_t slot, const Tensor&) { return tokens[slot]; }, mask,
                       nullptr, nullptr, &cell_cat, &hidden_cat);
    }

    /// Rao-Blackwellised marginal estimate: the per-slot conditional
    /// distributions averaged over `num_samples` sampled prefixes.
    std::vector<std::vector<double>> slot_marginals(std::size_t num_samples, Rng& rng) const {
        std::vector<std::vector<double>> marginals(slots_.size());
        for (std::size_t s = 0; s < slots_.size(); ++s) marginals[s].assign(slots_[s].arity(), 0.0);
        for (std::size_t n = 0; n < num_samples; ++n) {
            Rng sample_rng = rng.split(n);
            std::vector<std::vector<double>> probs;
            sample_impl(sample_rng, nullptr, nullptr, nullptr, &probs);
            for (std::size_t s = 0; s < slots_.size(); ++s)
                for (std::size_t c = 0; c < probs[s].size(); ++c) marginals[s][c] += probs[s][c];
        }
        for (auto& slot : marginals)
            for (double& p : slot) p /= static_cast<double>(num_samples);
        return marginals;
    }

    /// Direct access for tests that tie conditioning blocks.
    Tensor& conditioning_cell_weights() { return cond_cell_w_; }
    Tensor& conditioning_embed_weights() { return cond_embed_w_; }

private:
    static Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = rng.uniform(-bound, bound);
        return Tensor(std::move(shape), std::move(values), true);
    }

    void require_fusion_traces(const std::vector<SampleTrace>& traces) const {
        if (role_ != Role::fusion) throw ConditioningError("stream controller takes no stream traces");
        if (traces.size() != num_condition_streams_)
            throw ConditioningError("fusion sampling: expected " +
                                    std::to_string(num_condition_streams_) + " stream traces, got " +
                                    std::to_string(traces.size()));
        for (const auto& trace : traces)
            if (trace.final_hidden.size() != cfg_.hidden || trace.final_cell.size() != cfg_.hidden)
                throw ConditioningError("fusion sampling: stream trace state size mismatch");
    }

    SampleTrace sample_impl(Rng& rng, const SlotMask* mask, const Tensor* cond_cell_cat,
                            const Tensor* cond_hidden_cat,
                            std::vector<std::vector<double>>* probs_out = nullptr) const {
        NoGradGuard no_grad;
        SampleTrace trace;
        std::vector<double> log_probs;
        auto choose = [&rng, mask, probs_out](std::size_t slot, const Tensor& probs) {
            if (probs_out) probs_out->push_back(probs.data());
            const double r = rng.uniform();
            double cum = 0.0;
            std::size_t chosen = probs.numel() - 1;
            for (std::size_t c = 0; c < probs.numel(); ++c) {
                cum += probs.at(c);
                if (r < cum) {
                    chosen = c;
                    break;
                }
            }
            // land on an allowed choice even if rounding pushed past the last bin
            if (mask && !(*mask)[slot].empty()) {
                bool allowed = false;
                for (std::size_t idx : (*mask)[slot]) allowed = allowed || idx == chosen;
                if (!allowed) chosen = (*mask)[slot].back();
            }
            return chosen;
        };
        ScoreOutput out = forward(choose, mask, &trace.tokens, &log_probs, cond_cell_cat,
                                  cond_hidden_cat);
        trace.log_probs = std::move(log_probs);
        trace.total_log_prob = out.log_prob.value();
        trace.final_hidden = out.final_hidden.data();
        trace.final_cell = out.final_cell.data();
        return trace;
    }

    ScoreOutput forward(const std::function<std::size_t(std::size_t, const Tensor&)>& choose,
                        const SlotMask* mask, std::vector<std::size_t>* tokens_out,
                        std::vector<double>* log_probs_out, const Tensor* cond_cell_cat,
                        const Tensor* cond_hidden_cat) const {
        const std::size_t h = cfg_.hidden;
        if (mask && mask->size() != slots_.size())
            throw ContractError("controller: mask slot count mismatch");

        Tensor hidden(Shape{1, h}, 0.0);
        Tensor cell(Shape{1, h}, 0.0);
        Tensor input;
        if (role_ == Role::fusion) {
            if (!cond_cell_cat || !cond_hidden_cat)
                throw ConditioningError("fusion forward requires conditioning states");
            cell = matmul(*cond_cell_cat, cond_cell_w_);
            input = matmul(*cond_hidden_cat, cond_embed_w_);
        } else {
            input = start_embed_;
        }

        Tensor total_log_prob = Tensor::scalar(0.0);
        Tensor total_entropy = Tensor::scalar(0.0);
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            // LSTM cell
            Tensor gates = add(add(matmul(input, wx_), matmul(hidden, wh_)), b_);
            Tensor in_gate = sigmoid(slice_cols(gates, 0, h));
            Tensor forget_gate = sigmoid(slice_cols(gates, h, h));
            Tensor cand = tanh_op(slice_cols(gates, 2 * h, h));
            Tensor out_gate = sigmoid(slice_cols(gates, 3 * h, h));
            cell = add(mul(forget_gate, cell), mul(in_gate, cand));
            hidden = mul(out_gate, tanh_op(cell));

            Tensor logits = add(matmul(hidden, proj_w_[s]), proj_b_[s]);  // [1, arity]
            if (mask && !(*mask)[s].empty() && (*mask)[s].size() < slots_[s].arity()) {
                std::vector<double> offsets(slots_[s].arity(), -1e30);
                for (std::size_t idx : (*mask)[s]) {
                    if (idx >= slots_[s].arity())
                        throw ContractError("controller: mask index out of range");
                    offsets[idx] = 0.0;
                }
                logits = add(logits, Tensor(Shape{slots_[s].arity()}, std::move(offsets)));
            }

            // log-softmax with a constant shift for stability
            double max_logit = logits.at(0);
            for (std::size_t c = 1; c < logits.numel(); ++c)
                max_logit = std::max(max_logit, logits.at(c));
            Tensor shifted = add_scalar(logits, -max_logit);
            Tensor probs_unnorm = exp_op(shifted);
            Tensor denom = sum_all(probs_unnorm);
            Tensor probs = mul(probs_unnorm, exp_op(scale(log_op(denom), -1.0)));

            const std::size_t token = choose(s, probs);
            if (token >= slots_[s].arity())
                throw TokenError("controller: token " + std::to_string(token) +
                                 " out of range for slot '" + slots_[s].slot_id + "'");
            if (tokens_out) tokens_out->push_back(token);

            Tensor token_log_prob = sub(slice_cols(shifted, token, 1), log_op(denom));
            if (log_probs_out) log_probs_out->push_back(token_log_prob.value());
            total_log_prob = add(total_log_prob, flatten(token_log_prob));

            Tensor slot_entropy =
                scale(sum_all(mul(probs, log_op(add_scalar(probs, 1e-12)))), -1.0);
            total_entropy = add(total_entropy, slot_entropy);

            if (s + 1 < slots_.size()) input = gather_rows(embeds_[s], {token});
        }

        ScoreOutput out;
        out.log_prob = total_log_prob;
        out.entropy = total_entropy;
        out.final_hidden = hidden;
        out.final_cell = cell;
        return out;
    }

    Role role_;
    std::vector<DecisionSlot> slots_;
    ControllerConfig cfg_;
    std::size_t num_condition_streams_;

    Tensor wx_, wh_, b_, start_embed_;
    std::vector<Tensor> embeds_, proj_w_, proj_b_;
    Tensor cond_cell_w_, cond_embed_w_;
};

}  // namespace streamnas
