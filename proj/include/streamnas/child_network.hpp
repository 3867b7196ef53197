#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamnas/adam.hpp"
#include "streamnas/dataset.hpp"
#include "streamnas/errors.hpp"
#include "streamnas/rng.hpp"
#include "streamnas/search_space.hpp"
#include "streamnas/tensor.hpp"

namespace streamnas {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double dropout = 0.1;
    double weight_decay = 0.0;
    std::size_t patience = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ContractError("train: batch size must be positive");
        if (learning_rate <= 0.0) throw ContractError("train: learning rate must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ContractError("train: dropout must lie in [0,1)");
        if (patience < 1) throw ContractError("train: patience must be positive");
    }
};

struct TrialResult {
    std::string arch_key;
    double val_rmse = 0.0;  // best-epoch validation RMSE
    double train_rmse = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

namespace detail {

struct OpLabel {
    std::string op;
    std::size_t width = 0;
    bool has_width = false;
};

inline OpLabel parse_op_label(const std::string& label) {
    OpLabel parsed;
    const auto dash = label.rfind('-');
    if (dash != std::string::npos && dash + 1 < label.size() &&
        label.find_first_not_of("0123456789", dash + 1) == std::string::npos) {
        parsed.op = label.substr(0, dash);
        parsed.width = static_cast<std::size_t>(std::stoull(label.substr(dash + 1)));
        parsed.has_width = true;
    } else {
        parsed.op = label;
    }
    return parsed;
}

inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(values), true);
}

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear kaiming(std::size_t in, std::size_t out, Rng& rng) {
        Linear layer;
        layer.weight = kaiming_uniform({in, out}, in, rng);
        layer.bias = Tensor(Shape{out}, 0.0, true);
        return layer;
    }

    static Linear zeros(std::size_t in, std::size_t out) {
        Linear layer;
        layer.weight = Tensor(Shape{in, out}, 0.0, true);
        layer.bias = Tensor(Shape{out}, 0.0, true);
        return layer;
    }

    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

}  // namespace detail

struct ModelOptions {
    std::size_t fusion_input_dim = 32;  // aligned latent size per stream
    std::size_t default_cnn_width = 16;  // used when a space has no width slots
    std::size_t default_fusion_width = 32;
};

/// A concrete trainable model instantiated from an Architecture: per-stream
/// CNN/GNN stacks over the encoded representations, optional fusion blocks,
/// and a regression head. Construction is deterministic in (architecture,
/// seed); the final output linear starts at zero.
class ChildModel {
public:
    enum class Mode { standalone, joint };

    ChildModel(const Architecture& arch, const std::vector<StreamSearchSpace>& spaces,
               const FusionSearchSpace* fusion_space, Mode mode, const ModelOptions& opts,
               const std::vector<EncodedClip>& sample_clips, std::uint64_t init_seed)
        : mode_(mode), opts_(opts), init_seed_(init_seed) {
        if (arch.streams.empty()) throw ContractError("instantiate: architecture has no streams");
        if (mode == Mode::joint && (!fusion_space || !arch.has_fusion))
            throw ContractError("instantiate: joint mode needs a fusion space and fusion tokens");
        if (sample_clips.empty())
            throw ContractError("instantiate: need a sample clip to infer input dims");

        Rng rng(init_seed);
        arch_key_ = arch.canonical_key();

        // tap points: joint mode builds each stream only up to its tap layer
        std::vector<std::size_t> taps(arch.streams.size(), 0);
        if (mode == Mode::joint) {
            validate_tokens(fusion_space->slots, arch.fusion, "fusion tokens");
            for (std::size_t m = 0; m < arch.streams.size(); ++m) {
                const auto& tap_slot = fusion_space->slots[m];
                taps[m] = static_cast<std::size_t>(
                    std::stoull(tap_slot.choices[arch.fusion[m]]));
            }
        }

        for (std::size_t m = 0; m < arch.streams.size(); ++m) {
            const StreamSearchSpace* space = nullptr;
            for (const auto& candidate : spaces)
                if (candidate.stream_id == arch.streams[m].stream_id) space = &candidate;
            if (!space)
                throw ContractError("instantiate: no space for stream '" +
                                    arch.streams[m].stream_id + "'");
            validate_tokens(space->slots, arch.streams[m].tokens, "stream " + space->stream_id);
            if (mode == Mode::joint && taps[m] > space->depth)
                throw TokenError("instantiate: tap point " + std::to_string(taps[m]) +
                                 " deeper than stream depth " + std::to_string(space->depth));
            Rng stream_rng = rng.split(m);
            streams_.push_back(build_stream(*space, arch.streams[m].tokens,
                                            mode == Mode::joint ? taps[m] : space->depth,
                                            sample_clips.front(), stream_rng));
        }

        if (mode == Mode::joint) {
            Rng fusion_rng = rng.split(9000);
            build_fusion(*fusion_space, arch.fusion, fusion_rng);
        } else {
            // fixed standalone heads: average pooling+dropout+linear for CNN
            // streams, dropout+linear for GNN streams (pooling is searched)
            if (streams_.size() != 1)
                throw ContractError("instantiate: standalone mode takes exactly one stream");
            head_ = detail::Linear::zeros(streams_[0].out_dim, 1);
        }
    }

    const std::string& arch_key() const { return arch_key_; }
    Mode mode() const { return mode_; }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> params;
        for (auto& stream : streams_)
            for (auto& layer : stream.layers) {
                if (layer.conv_weight.defined()) {
                    params.push_back(layer.conv_weight);
                    params.push_back(layer.conv_bias);
                }
                if (layer.linear.weight.defined()) {
                    params.push_back(layer.linear.weight);
                    params.push_back(layer.linear.bias);
                }
                if (layer.attn_src.defined()) {
                    params.push_back(layer.attn_src);
                    params.push_back(layer.attn_dst);
                }
            }
        for (auto& block : fusion_blocks_) {
            params.push_back(block.linear.weight);
            params.push_back(block.linear.bias);
            if (block.gates.defined()) params.push_back(block.gates);
            if (block.attn.defined()) params.push_back(block.attn);
        }
        params.push_back(head_.weight);
        params.push_back(head_.bias);
        return params;
    }

    checkpoint::NamedTensors named_parameters() {
        checkpoint::NamedTensors named;
        std::size_t index = 0;
        for (Tensor& t : parameters()) named.emplace_back("p" + std::to_string(index++), t);
        named.emplace_back("target_stats", Tensor(Shape{2}, {target_mean_, target_std_}));
        return named;
    }

    void load_state(const checkpoint::NamedTensors& saved) {
        auto params = parameters();
        if (saved.size() != params.size() + 1)
            throw IoError("child model: checkpoint tensor count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (saved[i].second.shape() != params[i].shape())
                throw IoError("child model: checkpoint shape mismatch at " + saved[i].first);
            params[i].data() = saved[i].second.data();
        }
        target_mean_ = saved.back().second.at(0);
        target_std_ = saved.back().second.at(1);
    }

    /// Raw (standardised-scale) forward pass for one clip.
    Tensor forward(const EncodedClip& clip, bool training, Rng& dropout_rng, double dropout_p) const {
        std::vector<Tensor> latents;
        latents.reserve(streams_.size());
        for (const auto& stream : streams_) latents.push_back(stream_latent(stream, clip));

        if (mode_ == Mode::standalone) {
            Tensor pooled = latents[0];  // already pooled to a vector
            Tensor dropped = dropout(pooled, dropout_p, dropout_rng, training);
            return flatten(head_(as_row(dropped)));
        }

        // joint: align each tap latent to the fusion input size, then fuse
        std::vector<Tensor> aligned;
        aligned.reserve(latents.size());
        for (const Tensor& latent : latents)
            aligned.push_back(adaptive_mean_1d(latent, opts_.fusion_input_dim));
        Tensor fused = run_fusion(aligned, training, dropout_rng);
        Tensor dropped = dropout(fused, dropout_p, dropout_rng, training);
        return flatten(head_(as_row(dropped)));
    }

    /// Denormalised prediction, evaluation mode.
    double predict(const EncodedClip& clip) const {
        NoGradGuard no_grad;
        Rng unused(0);
        const Tensor out = forward(clip, /*training=*/false, unused, 0.0);
        return target_mean_ + target_std_ * out.value();
    }

    void set_target_stats(double mean, double std_dev) {
        target_mean_ = mean;
        target_std_ = std_dev < 1e-9 ? 1.0 : std_dev;
    }
    double target_mean() const { return target_mean_; }
    double target_std() const { return target_std_; }

    /// Evaluation-mode pooled latent of one stream (pre-head).
    std::vector<double> stream_latent_values(const EncodedClip& clip, std::size_t stream_index) const {
        NoGradGuard no_grad;
        return stream_latent(streams_.at(stream_index), clip).data();
    }

private:
    struct Layer {
        std::string op;
        // conv path
        Tensor conv_weight, conv_bias;
        std::size_t kernel = 0, dilation = 1, padding = 0;
        // gnn path / fusion-style linear
        detail::Linear linear;
        Tensor attn_src, attn_dst;  // [F,1] score vectors for the attn aggregator
        std::string readout;        // gnn tap/readout pooling
    };

    struct Stream {
        std::string stream_id;
        std::string attribute_id;
        StreamKind kind = StreamKind::cnn;
        std::vector<Layer> layers;
        std::string readout = "mean";  // gnn readout pooling label
        std::size_t out_dim = 0;       // latent vector size fed to head/fusion
    };

    struct FusionBlock {
        std::string op;
        detail::Linear linear;
        Tensor gates;  // [num_inputs] for gated-sum
        Tensor attn;   // [dim, 1] for attention-weighted-sum
    };

    Stream build_stream(const StreamSearchSpace& space, const std::vector<std::size_t>& tokens,
                        std::size_t depth_to_build, const EncodedClip& sample, Rng& rng) {
        Stream stream;
        stream.stream_id = space.stream_id;
        stream.attribute_id = space.attribute_id;
        stream.kind = space.kind;

        // collect layer/width/readout slots
        std::vector<std::pair<std::size_t, std::string>> layer_choices;  // slot idx, label
        std::vector<std::string> width_choices;
        for (std::size_t s = 0; s < space.slots.size(); ++s) {
            const std::string& id = space.slots[s].slot_id;
            const std::string& label = space.slots[s].choices[tokens[s]];
            if (id.rfind("layer", 0) == 0)
                layer_choices.emplace_back(s, label);
            else if (id.rfind("width", 0) == 0)
                width_choices.push_back(label);
            else if (id == "readout")
                stream.readout = label;
        }
        if (layer_choices.size() != space.depth)
            throw ContractError("stream '" + space.stream_id + "': expected " +
                                std::to_string(space.depth) + " layer slots, found " +
                                std::to_string(layer_choices.size()));

        if (space.kind == StreamKind::cnn) {
            auto heatmap_it = sample.heatmaps.find(space.attribute_id);
            if (heatmap_it == sample.heatmaps.end())
                throw ContractError("stream '" + space.stream_id + "': no heatmap for attribute '" +
                                    space.attribute_id + "'");
            std::size_t channels = heatmap_it->second.rows();
            for (std::size_t l = 0; l < depth_to_build; ++l) {
                const detail::OpLabel parsed = detail::parse_op_label(layer_choices[l].second);
                std::size_t width = opts_.default_cnn_width;
                if (parsed.has_width) {
                    width = parsed.width;
                } else if (!width_choices.empty()) {
                    const std::size_t stage =
                        l * width_choices.size() / std::max<std::size_t>(1, space.depth);
                    width = static_cast<std::size_t>(std::stoull(width_choices[stage]));
                }
                Layer layer;
                layer.op = parsed.op;
                if (parsed.op == "conv3" || parsed.op == "conv5" || parsed.op == "conv7") {
                    layer.kernel = parsed.op == "conv3" ? 3 : parsed.op == "conv5" ? 5 : 7;
                    layer.padding = layer.kernel / 2;
                    layer.conv_weight = detail::kaiming_uniform({width, channels, layer.kernel},
                                                                channels * layer.kernel, rng);
                    layer.conv_bias = Tensor(Shape{width}, 0.0, true);
                    channels = width;
                } else if (parsed.op == "dilconv3") {
                    layer.kernel = 3;
                    layer.dilation = 2;
                    layer.padding = 2;
                    layer.conv_weight = detail::kaiming_uniform({width, channels, layer.kernel},
                                                                channels * layer.kernel, rng);
                    layer.conv_bias = Tensor(Shape{width}, 0.0, true);
                    channels = width;
                } else if (parsed.op == "maxpool3" || parsed.op == "avgpool3" ||
                           parsed.op == "identity") {
                    layer.kernel = 3;
                    layer.padding = 1;
                } else {
                    throw ContractError("unknown cnn operator '" + parsed.op + "'");
                }
                stream.layers.push_back(std::move(layer));
            }
            stream.out_dim = channels;
        } else {
            auto graph_it = sample.graphs.find(space.attribute_id);
            if (graph_it == sample.graphs.end())
                throw ContractError("stream '" + space.stream_id + "': no graph for attribute '" +
                                    space.attribute_id + "'");
            std::size_t dim = graph_it->second.feature_dim;
            for (std::size_t l = 0; l < depth_to_build; ++l) {
                const detail::OpLabel parsed = detail::parse_op_label(layer_choices[l].second);
                const std::size_t width = parsed.has_width ? parsed.width : opts_.default_cnn_width;
                Layer layer;
                layer.op = parsed.op;
                layer.linear = detail::Linear::kaiming(2 * dim, width, rng);
                if (parsed.op == "attn") {
                    layer.attn_src = detail::kaiming_uniform({dim, 1}, dim, rng);
                    layer.attn_dst = detail::kaiming_uniform({dim, 1}, dim, rng);
                } else if (parsed.op != "mean" && parsed.op != "sum" && parsed.op != "max") {
                    throw ContractError("unknown gnn aggregator '" + parsed.op + "'");
                }
                dim = width;
                stream.layers.push_back(std::move(layer));
            }
            stream.out_dim = dim;
        }
        return stream;
    }

    void build_fusion(const FusionSearchSpace& space, const std::vector<std::size_t>& tokens,
                      Rng& rng) {
        std::size_t num_inputs = streams_.size();
        std::size_t dim = opts_.fusion_input_dim;
        for (std::size_t s = space.num_streams(); s < space.slots.size(); ++s) {
            const detail::OpLabel parsed = detail::parse_op_label(space.slots[s].choices[tokens[s]]);
            const std::size_t width = parsed.has_width ? parsed.width : opts_.default_fusion_width;
            FusionBlock block;
            block.op = parsed.op;
            const std::size_t combined_dim = parsed.op == "concat" ? dim * num_inputs : dim;
            block.linear = detail::Linear::kaiming(combined_dim, width, rng);
            if (parsed.op == "gated") block.gates = Tensor(Shape{num_inputs}, 0.0, true);
            if (parsed.op == "attn") block.attn = detail::kaiming_uniform({dim, 1}, dim, rng);
            if (parsed.op != "concat" && parsed.op != "add" && parsed.op != "mul" &&
                parsed.op != "gated" && parsed.op != "attn")
                throw ContractError("unknown fusion operator '" + parsed.op + "'");
            fusion_blocks_.push_back(std::move(block));
            dim = width;
            num_inputs = 1;
        }
        head_ = detail::Linear::zeros(dim, 1);
    }

    Tensor stream_latent(const Stream& stream, const EncodedClip& clip) const {
        if (stream.kind == StreamKind::cnn) {
            auto it = clip.heatmaps.find(stream.attribute_id);
            if (it == clip.heatmaps.end())
                throw ContractError("predict: clip '" + clip.clip_id +
                                    "' is missing attribute '" + stream.attribute_id + "'");
            const HeatmapRepresentation& map = it->second;
            Tensor x(Shape{map.rows(), map.k}, map.matrix);
            for (const Layer& layer : stream.layers) {
                if (layer.conv_weight.defined())
                    x = relu(conv1d(x, layer.conv_weight, layer.conv_bias, 1, layer.dilation,
                                    layer.padding));
                else if (layer.op == "maxpool3")
                    x = max_pool1d(x, layer.kernel, 1, layer.padding);
                else if (layer.op == "avgpool3")
                    x = mean_pool1d(x, layer.kernel, 1, layer.padding);
                // identity: pass through
            }
            return global_mean_pool(x);  // average pooling over the length axis
        }

        auto it = clip.graphs.find(stream.attribute_id);
        if (it == clip.graphs.end())
            throw ContractError("predict: clip '" + clip.clip_id + "' is missing attribute '" +
                                stream.attribute_id + "'");
        const LandmarkGraph& graph = it->second;
        const std::size_t v = graph.num_nodes;
        Tensor h(Shape{v, graph.feature_dim}, graph.node_features);
        for (const Layer& layer : stream.layers) {
            Tensor agg = aggregate(layer, h, graph);
            Tensor combined = concat({h, agg}, 1);
            h = relu(layer.linear(combined));
        }
        // searched readout pooling over nodes
        const std::vector<std::size_t> to_single(v, 0);
        if (stream.readout == "sum") return flatten(scatter_sum_rows(h, to_single, 1));
        if (stream.readout == "max") return flatten(scatter_max_rows(h, to_single, 1));
        return flatten(scale(scatter_sum_rows(h, to_single, 1), 1.0 / static_cast<double>(v)));
    }

    Tensor aggregate(const Layer& layer, const Tensor& h, const LandmarkGraph& graph) const {
        const std::size_t v = graph.num_nodes;
        if (layer.op == "mean") {
            Tensor sums = scatter_sum_rows(gather_rows(h, graph.edge_src), graph.edge_dst, v);
            std::vector<double> inv_degree(v);
            for (std::size_t node = 0; node < v; ++node)
                inv_degree[node] = 1.0 / static_cast<double>(std::max<std::size_t>(1, graph.degree(node)));
            return mul(sums, Tensor(Shape{v, 1}, std::move(inv_degree)));
        }
        if (layer.op == "sum")
            return scatter_sum_rows(gather_rows(h, graph.edge_src), graph.edge_dst, v);
        if (layer.op == "max")
            return scatter_max_rows(gather_rows(h, graph.edge_src), graph.edge_dst, v);

        // attention: per-edge weights from source/destination scores,
        // normalised over each destination's in-edges
        Tensor src_scores = matmul(h, layer.attn_src);  // [V,1]
        Tensor dst_scores = matmul(h, layer.attn_dst);
        Tensor edge_logits = tanh_op(
            add(gather_rows(src_scores, graph.edge_src), gather_rows(dst_scores, graph.edge_dst)));
        Tensor edge_weights = exp_op(edge_logits);                                    // [E,1]
        Tensor denom = scatter_sum_rows(edge_weights, graph.edge_dst, v);             // [V,1]
        Tensor inv_denom = exp_op(scale(log_op(denom), -1.0));
        Tensor alpha = mul(edge_weights, gather_rows(inv_denom, graph.edge_dst));     // [E,1]
        Tensor weighted = mul(gather_rows(h, graph.edge_src), alpha);                 // [E,F]
        return scatter_sum_rows(weighted, graph.edge_dst, v);
    }

    Tensor run_fusion(const std::vector<Tensor>& aligned, bool training, Rng& dropout_rng) const {
        std::vector<Tensor> inputs = aligned;
        for (const FusionBlock& block : fusion_blocks_) {
            Tensor combined;
            if (block.op == "concat") {
                combined = concat(inputs, 0);
            } else if (block.op == "add") {
                combined = inputs[0];
                for (std::size_t i = 1; i < inputs.size(); ++i) combined = add(combined, inputs[i]);
            } else if (block.op == "mul") {
                combined = inputs[0];
                for (std::size_t i = 1; i < inputs.size(); ++i) combined = mul(combined, inputs[i]);
            } else if (block.op == "gated") {
                combined = mul(inputs[0], sigmoid(slice_cols(as_row(block.gates), 0, 1)));
                for (std::size_t i = 1; i < inputs.size(); ++i)
                    combined = add(combined,
                                   mul(inputs[i], sigmoid(slice_cols(as_row(block.gates), i, 1))));
            } else {  // attn: softmax over per-input scores
                std::vector<Tensor> scores;
                for (const Tensor& input : inputs)
                    scores.push_back(flatten(matmul(as_row(input), block.attn)));
                Tensor alpha = softmax(concat(scores, 0));
                combined = mul(inputs[0], slice_cols(as_row(alpha), 0, 1));
                for (std::size_t i = 1; i < inputs.size(); ++i)
                    combined =
                        add(combined, mul(inputs[i], slice_cols(as_row(alpha), i, 1)));
            }
            Tensor out = relu(flatten(block.linear(as_row(combined))));
            inputs.assign(1, out);
        }
        return inputs[0];
    }

    Mode mode_;
    ModelOptions opts_;
    std::uint64_t init_seed_;
    std::string arch_key_;
    std::vector<Stream> streams_;
    std::vector<FusionBlock> fusion_blocks_;
    detail::Linear head_;
    double target_mean_ = 0.0;
    double target_std_ = 1.0;
};

// ---------------------------------------------------------------------------
// Training and evaluation.
// ---------------------------------------------------------------------------

inline double evaluate_rmse(const ChildModel& model, const std::vector<EncodedClip>& clips) {
    if (clips.empty()) throw ContractError("evaluate: empty dataset");
    double sum_sq = 0.0;
    for (const auto& clip : clips) {
        const double err = model.predict(clip) - clip.label;
        sum_sq += err * err;
    }
    return std::sqrt(sum_sq / static_cast<double>(clips.size()));
}

/// Train with Adam on mean-squared error over standardised labels; returns
/// the best-epoch validation RMSE (original label scale) and leaves the model
/// at its best-epoch weights. Stops early after `patience` epochs without
/// validation improvement.
inline TrialResult train_from_scratch(ChildModel& model, const std::vector<EncodedClip>& train,
                                      const std::vector<EncodedClip>& val, const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty() || val.empty()) throw ContractError("train: datasets must be non-empty");
    for (const auto& tc : train)
        for (const auto& vc : val)
            if (tc.clip_id == vc.clip_id)
                throw ContractError("train: clip '" + tc.clip_id + "' appears in both splits");

    const auto start_time = std::chrono::steady_clock::now();

    double label_mean = 0.0;
    for (const auto& clip : train) label_mean += clip.label;
    label_mean /= static_cast<double>(train.size());
    double label_var = 0.0;
    for (const auto& clip : train) label_var += (clip.label - label_mean) * (clip.label - label_mean);
    const double label_std = std::sqrt(label_var / static_cast<double>(train.size()));
    model.set_target_stats(label_mean, label_std);

    AdamOptimizer optimizer(model.parameters(), cfg.learning_rate, 0.9, 0.999, 1e-8,
                            cfg.weight_decay);
    Rng run_rng = Rng(cfg.seed).split(17);

    double best_val = evaluate_rmse(model, val);
    std::size_t best_epoch = 0;
    checkpoint::NamedTensors best_state = model.named_parameters();
    for (auto& [name, tensor] : best_state)
        tensor = Tensor(tensor.shape(), tensor.data());  // snapshot copy

    std::size_t since_best = 0;
    std::size_t epoch = 0;
    for (; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = run_rng.split(epoch);
        std::vector<std::size_t> order = epoch_rng.permutation(train.size());
        Rng dropout_rng = epoch_rng.split(1);

        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            Tensor loss_sum = Tensor::scalar(0.0);
            for (std::size_t i = begin; i < end; ++i) {
                const EncodedClip& clip = train[order[i]];
                Tensor out = model.forward(clip, /*training=*/true, dropout_rng, cfg.dropout);
                const double target = (clip.label - model.target_mean()) / model.target_std();
                Tensor err = add_scalar(out, -target);
                loss_sum = add(loss_sum, mul(err, err));
            }
            Tensor loss = scale(loss_sum, 1.0 / static_cast<double>(end - begin));
            if (!std::isfinite(loss.value()))
                throw DivergedError("train: non-finite loss at epoch " + std::to_string(epoch),
                                    static_cast<int>(epoch));
            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
        }

        const double val_rmse = evaluate_rmse(model, val);
        if (val_rmse < best_val) {
            best_val = val_rmse;
            best_epoch = epoch + 1;
            since_best = 0;
            best_state = model.named_parameters();
            for (auto& [name, tensor] : best_state) tensor = Tensor(tensor.shape(), tensor.data());
        } else if (++since_best >= cfg.patience) {
            ++epoch;
            break;
        }
    }

    model.load_state(best_state);

    TrialResult result;
    result.arch_key = model.arch_key();
    result.val_rmse = best_val;
    result.train_rmse = evaluate_rmse(model, train);
    result.seed = cfg.seed;
    result.best_epoch = best_epoch;
    result.epochs_run = epoch;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return result;
}

}  // namespace streamnas
