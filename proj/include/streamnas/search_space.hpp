#pragma once

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "streamnas/errors.hpp"

namespace streamnas {

/// Arbitrary-precision count: full-size spaces overflow 64 bits.
using BigCount = boost::multiprecision::cpp_int;

/// One categorical architecture decision.
struct DecisionSlot {
    std::string slot_id;
    std::vector<std::string> choices;

    std::size_t arity() const { return choices.size(); }

    void validate() const {
        if (choices.empty()) throw ContractError("slot '" + slot_id + "' has no choices");
        for (std::size_t i = 0; i < choices.size(); ++i)
            for (std::size_t j = i + 1; j < choices.size(); ++j)
                if (choices[i] == choices[j])
                    throw ContractError("slot '" + slot_id + "' has duplicate label '" + choices[i] +
                                        "'");
    }
};

enum class StreamKind { cnn, gnn };

inline std::string to_string(StreamKind kind) { return kind == StreamKind::cnn ? "cnn" : "gnn"; }

inline StreamKind stream_kind_from_string(const std::string& s) {
    if (s == "cnn") return StreamKind::cnn;
    if (s == "gnn") return StreamKind::gnn;
    throw ContractError("unknown stream kind '" + s + "'");
}

inline BigCount slots_size(const std::vector<DecisionSlot>& slots) {
    BigCount size = 1;
    for (const auto& slot : slots) size *= static_cast<std::uint64_t>(slot.arity());
    return size;
}

/// Candidate-operator space for one feature-extractor stream.
struct StreamSearchSpace {
    std::string stream_id;
    std::string attribute_id;  // which encoded attribute the stream consumes
    StreamKind kind = StreamKind::cnn;
    std::vector<DecisionSlot> slots;
    std::size_t depth = 0;  // number of layer slots, defines valid tap points

    BigCount size() const { return slots_size(slots); }

    void validate() const {
        for (const auto& slot : slots) slot.validate();
        if (depth == 0) throw ContractError("stream '" + stream_id + "' has zero depth");
    }
};

/// Fusion-module space: one tap-point slot per stream (which intermediate
/// latent feeds the fusion input block), then the fusion-block slots.
struct FusionSearchSpace {
    std::vector<std::string> stream_ids;  // tap slot i belongs to stream_ids[i]
    std::vector<DecisionSlot> slots;      // slots[0..streams) are taps

    std::size_t num_streams() const { return stream_ids.size(); }
    BigCount size() const { return slots_size(slots); }

    void validate() const {
        if (slots.size() < stream_ids.size())
            throw ContractError("fusion space must hold one tap slot per stream");
        for (const auto& slot : slots) slot.validate();
    }
};

/// Token sequences for one sampled child model. Tokens always index choices
/// of the *original* spaces so canonical keys stay stable across the warm-up
/// and end-to-end stages.
struct StreamTokens {
    std::string stream_id;
    std::vector<std::size_t> tokens;
};

struct Architecture {
    std::vector<StreamTokens> streams;
    std::vector<std::size_t> fusion;  // meaningful only when has_fusion
    bool has_fusion = false;

    /// Stable, injective string form used as the tracker key and in all logs:
    /// "id=t.t.t|id=t.t|f=t.t" (the fusion part is present only when sampled).
    std::string canonical_key() const {
        std::ostringstream oss;
        for (std::size_t s = 0; s < streams.size(); ++s) {
            if (s) oss << '|';
            oss << streams[s].stream_id << '=';
            for (std::size_t i = 0; i < streams[s].tokens.size(); ++i)
                oss << (i ? "." : "") << streams[s].tokens[i];
        }
        if (has_fusion) {
            if (!streams.empty()) oss << '|';
            oss << "f=";
            for (std::size_t i = 0; i < fusion.size(); ++i) oss << (i ? "." : "") << fusion[i];
        }
        return oss.str();
    }

    static Architecture parse(const std::string& key) {
        Architecture arch;
        std::istringstream segments(key);
        std::string segment;
        while (std::getline(segments, segment, '|')) {
            const auto eq = segment.find('=');
            if (eq == std::string::npos) throw ContractError("bad architecture key '" + key + "'");
            const std::string name = segment.substr(0, eq);
            std::vector<std::size_t> tokens;
            std::istringstream token_stream(segment.substr(eq + 1));
            std::string token;
            while (std::getline(token_stream, token, '.')) {
                if (token.empty()) throw ContractError("bad architecture key '" + key + "'");
                tokens.push_back(static_cast<std::size_t>(std::stoull(token)));
            }
            if (name == "f") {
                arch.fusion = std::move(tokens);
                arch.has_fusion = true;
            } else {
                arch.streams.push_back({name, std::move(tokens)});
            }
        }
        return arch;
    }
};

inline void validate_tokens(const std::vector<DecisionSlot>& slots,
                            const std::vector<std::size_t>& tokens, const std::string& what) {
    if (tokens.size() != slots.size())
        throw TokenError(what + ": expected " + std::to_string(slots.size()) + " tokens, got " +
                         std::to_string(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] >= slots[i].arity())
            throw TokenError(what + ": token " + std::to_string(tokens[i]) +
                             " out of range for slot '" + slots[i].slot_id + "' (arity " +
                             std::to_string(slots[i].arity()) + ")");
}

// ---------------------------------------------------------------------------
// Complexity of the search (counts of candidate models).
// ---------------------------------------------------------------------------

/// Size of a direct end-to-end search: T_f * prod_m T_m.
inline BigCount naive_complexity(const std::vector<BigCount>& stream_sizes, const BigCount& fusion_size) {
    for (const auto& t : stream_sizes)
        if (t < 1) throw ContractError("naive_complexity: sizes must be >= 1");
    if (fusion_size < 1) throw ContractError("naive_complexity: sizes must be >= 1");
    BigCount total = fusion_size;
    for (const auto& t : stream_sizes) total *= t;
    return total;
}

/// Size after the warm-up stage: sum_m T_m + T_f * prod_m reduced T_m.
inline BigCount warmup_complexity(const std::vector<BigCount>& stream_sizes,
                                  const std::vector<BigCount>& reduced_sizes,
                                  const BigCount& fusion_size) {
    if (stream_sizes.size() != reduced_sizes.size())
        throw ContractError("warmup_complexity: stream/reduced count mismatch");
    for (std::size_t m = 0; m < stream_sizes.size(); ++m)
        if (reduced_sizes[m] > stream_sizes[m])
            throw ContractError("warmup_complexity: reduced size exceeds original for stream " +
                                std::to_string(m));
    BigCount warmup = 0;
    for (const auto& t : stream_sizes) warmup += t;
    return warmup + naive_complexity(reduced_sizes, fusion_size);
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration (oracle support).
// ---------------------------------------------------------------------------

/// Every distinct token assignment, exactly once, lexicographic order.
inline std::vector<std::vector<std::size_t>> enumerate_slots(const std::vector<DecisionSlot>& slots,
                                                             std::size_t limit) {
    const BigCount size = slots_size(slots);
    if (size > limit)
        throw BudgetError("enumerate: space size " + size.str() + " exceeds limit " +
                          std::to_string(limit));
    std::vector<std::vector<std::size_t>> out;
    out.reserve(static_cast<std::size_t>(size));
    std::vector<std::size_t> current(slots.size(), 0);
    for (;;) {
        out.push_back(current);
        std::size_t pos = slots.size();
        while (pos > 0) {
            --pos;
            if (++current[pos] < slots[pos].arity()) break;
            current[pos] = 0;
            if (pos == 0) return out;
        }
        if (slots.empty()) return out;
    }
}

// ---------------------------------------------------------------------------
// Warm-up space reduction.
// ---------------------------------------------------------------------------

/// Per-stream reduced space: a per-slot subset of the original choices,
/// applied as a sampling mask so tokens keep their original indices.
struct ReducedSpace {
    std::string stream_id;
    std::vector<std::vector<std::size_t>> kept;  // per slot, original choice indices (sorted)
    std::string provenance;                      // which policy snapshot produced it

    BigCount size() const {
        BigCount total = 1;
        for (const auto& slot_kept : kept) total *= static_cast<std::uint64_t>(slot_kept.size());
        return total;
    }
};

/// Keep the keep_per_slot highest-marginal choices of every slot; ties break
/// toward the original label order. keep_per_slot clamps to each slot's arity.
inline ReducedSpace reduce_space_from_marginals(const StreamSearchSpace& space,
                                                const std::vector<std::vector<double>>& marginals,
                                                std::size_t keep_per_slot,
                                                std::string provenance = "") {
    if (marginals.size() != space.slots.size())
        throw ContractError("reduce_space: marginal count does not match slot count");
    ReducedSpace reduced;
    reduced.stream_id = space.stream_id;
    reduced.provenance = std::move(provenance);
    reduced.kept.resize(space.slots.size());
    for (std::size_t s = 0; s < space.slots.size(); ++s) {
        const std::size_t arity = space.slots[s].arity();
        if (marginals[s].size() != arity)
            throw ContractError("reduce_space: marginal arity mismatch for slot '" +
                                space.slots[s].slot_id + "'");
        const std::size_t keep = std::min(keep_per_slot, arity);
        std::vector<std::size_t> order(arity);
        for (std::size_t i = 0; i < arity; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return marginals[s][a] > marginals[s][b];
        });
        order.resize(keep);
        std::sort(order.begin(), order.end());
        reduced.kept[s] = std::move(order);
    }
    return reduced;
}

/// reduce_space over a trained policy: marginals are Rao-Blackwellised
/// estimates, the per-slot conditional distributions averaged over sampled
/// prefixes, so an exactly-uniform policy yields exact ties.
template <typename Policy, typename RngT>
inline ReducedSpace reduce_space(const StreamSearchSpace& space, const Policy& policy,
                                 std::size_t keep_per_slot, RngT& rng,
                                 std::size_t num_samples = 1000, std::string provenance = "") {
    const auto marginals = policy.slot_marginals(num_samples, rng);
    return reduce_space_from_marginals(space, marginals, keep_per_slot, std::move(provenance));
}

// ---------------------------------------------------------------------------
// Default operator spaces. These are configuration defaults, not contract:
// run configs may declare any slot structure.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& default_cnn_ops() {
    static const std::vector<std::string> ops = {"conv3",    "conv5",    "conv7", "dilconv3",
                                                 "maxpool3", "avgpool3", "identity"};
    return ops;
}

inline const std::vector<std::string>& default_gnn_aggregators() {
    static const std::vector<std::string> aggs = {"mean", "sum", "max", "attn"};
    return aggs;
}

inline const std::vector<std::string>& default_fusion_ops() {
    static const std::vector<std::string> ops = {"concat", "add", "mul", "gated", "attn"};
    return ops;
}

inline std::vector<std::string> cross_labels(const std::vector<std::string>& ops,
                                             const std::vector<int>& widths) {
    std::vector<std::string> labels;
    for (const auto& op : ops)
        for (int w : widths) labels.push_back(op + "-" + std::to_string(w));
    return labels;
}

/// 4 operator slots x 7 ops, plus 2 stage-width slots: T = 7^4 * 3^2 = 21609.
/// Width slot 0 covers layers 0..1, width slot 1 covers layers 2..3.
inline StreamSearchSpace default_cnn_space(const std::string& stream_id,
                                           const std::string& attribute_id) {
    StreamSearchSpace space;
    space.stream_id = stream_id;
    space.attribute_id = attribute_id;
    space.kind = StreamKind::cnn;
    space.depth = 4;
    for (std::size_t layer = 0; layer < 4; ++layer)
        space.slots.push_back({"layer" + std::to_string(layer), default_cnn_ops()});
    space.slots.push_back({"width0", {"16", "32", "64"}});
    space.slots.push_back({"width1", {"16", "32", "64"}});
    return space;
}

/// 3 layer slots x (4 aggregators x 3 widths) plus a readout slot:
/// T = 12^3 * 3 = 5184. The readout pooling is part of the search space.
inline StreamSearchSpace default_gnn_space(const std::string& stream_id,
                                           const std::string& attribute_id) {
    StreamSearchSpace space;
    space.stream_id = stream_id;
    space.attribute_id = attribute_id;
    space.kind = StreamKind::gnn;
    space.depth = 3;
    const std::vector<std::string> combos = cross_labels(default_gnn_aggregators(), {16, 32, 64});
    for (std::size_t layer = 0; layer < 3; ++layer)
        space.slots.push_back({"layer" + std::to_string(layer), combos});
    space.slots.push_back({"readout", {"mean", "max", "sum"}});
    return space;
}

/// Per-stream tap slot (choices = that stream's depth) + 2 fusion-block slots
/// of 5 operators x 3 widths.
inline FusionSearchSpace default_fusion_space(const std::vector<StreamSearchSpace>& streams) {
    FusionSearchSpace space;
    for (const auto& stream : streams) {
        space.stream_ids.push_back(stream.stream_id);
        std::vector<std::string> taps;
        for (std::size_t layer = 1; layer <= stream.depth; ++layer)
            taps.push_back(std::to_string(layer));
        space.slots.push_back({"tap:" + stream.stream_id, std::move(taps)});
    }
    const std::vector<std::string> blocks = cross_labels(default_fusion_ops(), {32, 64, 128});
    space.slots.push_back({"block0", blocks});
    space.slots.push_back({"block1", blocks});
    return space;
}

}  // namespace streamnas
