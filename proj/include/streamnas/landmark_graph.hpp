#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "streamnas/errors.hpp"
#include "streamnas/spectral.hpp"
#include "streamnas/toml.hpp"

namespace streamnas {

/// Landmark indexing convention: V points with D coordinate channels each
/// (channel index = point * D + coordinate), named facial regions whose
/// nodes are fully connected, and a nasal-root hub adjacent to every node.
struct LandmarkLayout {
    std::size_t num_points = 68;
    std::size_t coord_arity = 2;
    std::size_t nasal_root = 27;
    std::vector<std::string> region_names;
    std::vector<std::vector<std::size_t>> regions;

    void validate() const {
        if (num_points == 0) throw LayoutError("layout: need at least one landmark");
        if (coord_arity == 0) throw LayoutError("layout: coordinate arity must be positive");
        if (nasal_root >= num_points) throw LayoutError("layout: nasal root index out of range");
        if (regions.size() != region_names.size())
            throw LayoutError("layout: region name/index count mismatch");
        for (const auto& region : regions)
            for (std::size_t node : region)
                if (node >= num_points) throw LayoutError("layout: region node index out of range");
    }
};

/// The 68-point iBUG convention, the de-facto indexing for this corpus family.
inline LandmarkLayout ibug68_layout(std::size_t coord_arity = 2) {
    auto range = [](std::size_t lo, std::size_t hi) {
        std::vector<std::size_t> nodes;
        for (std::size_t i = lo; i <= hi; ++i) nodes.push_back(i);
        return nodes;
    };
    LandmarkLayout layout;
    layout.num_points = 68;
    layout.coord_arity = coord_arity;
    layout.nasal_root = 27;
    layout.region_names = {"jaw", "left_brow", "right_brow", "nose", "left_eye", "right_eye", "mouth"};
    layout.regions = {range(0, 16),  range(17, 21), range(22, 26), range(27, 35),
                      range(36, 41), range(42, 47), range(48, 67)};
    return layout;
}

/// Load a layout from a TOML file:
///   num_points = 68
///   coord_arity = 2
///   nasal_root = 27
///   [[region]]
///   name = "jaw"
///   nodes = [0, 1, ...]
inline LandmarkLayout load_layout(const std::string& path) {
    const toml::Value root = toml::parse_file(path);
    LandmarkLayout layout;
    layout.num_points = static_cast<std::size_t>(root.get_integer("num_points", 68));
    layout.coord_arity = static_cast<std::size_t>(root.get_integer("coord_arity", 2));
    layout.nasal_root = static_cast<std::size_t>(root.get_integer("nasal_root", 27));
    if (root.contains("region")) {
        for (const auto& entry : root.at("region").array()) {
            layout.region_names.push_back(entry->get_string("name", "region"));
            std::vector<std::size_t> nodes;
            for (const auto& node : entry->at("nodes").array())
                nodes.push_back(static_cast<std::size_t>(node->as_integer()));
            layout.regions.push_back(std::move(nodes));
        }
    }
    layout.validate();
    return layout;
}

/// Clip-level landmark graph: one node per landmark carrying the
/// amplitude||phase spectra of its coordinate channels, an adjacency built
/// from the layout only, and a directed edge list for message passing.
struct LandmarkGraph {
    std::size_t num_nodes = 0;
    std::size_t feature_dim = 0;                 // 2 * coord_arity * K
    std::vector<double> node_features;           // num_nodes * feature_dim
    std::vector<std::uint8_t> adjacency;         // num_nodes * num_nodes, symmetric, zero diagonal
    std::vector<std::string> region_labels;      // per-node region tag
    std::vector<std::size_t> edge_src, edge_dst; // both directions of every edge

    bool adjacent(std::size_t a, std::size_t b) const { return adjacency[a * num_nodes + b] != 0; }

    std::size_t degree(std::size_t node) const {
        std::size_t d = 0;
        for (std::size_t j = 0; j < num_nodes; ++j) d += adjacency[node * num_nodes + j];
        return d;
    }

    std::size_t undirected_edge_count() const { return edge_src.size() / 2; }
};

/// Adjacency from the layout alone: within-region complete subgraphs plus the
/// nasal-root hub. Identical for every clip.
inline std::vector<std::uint8_t> layout_adjacency(const LandmarkLayout& layout) {
    const std::size_t v = layout.num_points;
    std::vector<std::uint8_t> adj(v * v, 0);
    auto connect = [&](std::size_t a, std::size_t b) {
        if (a == b) return;
        adj[a * v + b] = 1;
        adj[b * v + a] = 1;
    };
    for (const auto& region : layout.regions)
        for (std::size_t i = 0; i < region.size(); ++i)
            for (std::size_t j = i + 1; j < region.size(); ++j) connect(region[i], region[j]);
    for (std::size_t node = 0; node < v; ++node) connect(layout.nasal_root, node);
    return adj;
}

inline LandmarkGraph build_landmark_graph(const SpectralRepresentation& rep,
                                          const LandmarkLayout& layout) {
    layout.validate();
    const std::size_t v = layout.num_points;
    const std::size_t d = layout.coord_arity;
    if (rep.channels % d != 0 || rep.channels / d != v)
        throw LayoutError("landmark graph: " + std::to_string(rep.channels) +
                          " channels do not split into " + std::to_string(v) + " landmarks of " +
                          std::to_string(d) + " coordinates");

    LandmarkGraph graph;
    graph.num_nodes = v;
    graph.feature_dim = 2 * d * rep.k;
    graph.node_features.resize(v * graph.feature_dim);
    for (std::size_t node = 0; node < v; ++node) {
        double* row = graph.node_features.data() + node * graph.feature_dim;
        for (std::size_t coord = 0; coord < d; ++coord) {
            const std::size_t channel = node * d + coord;
            std::copy(rep.amplitude.begin() + channel * rep.k,
                      rep.amplitude.begin() + (channel + 1) * rep.k, row + coord * 2 * rep.k);
            std::copy(rep.phase.begin() + channel * rep.k, rep.phase.begin() + (channel + 1) * rep.k,
                      row + coord * 2 * rep.k + rep.k);
        }
    }

    graph.adjacency = layout_adjacency(layout);
    graph.region_labels.assign(v, "");
    for (std::size_t r = 0; r < layout.regions.size(); ++r)
        for (std::size_t node : layout.regions[r])
            if (graph.region_labels[node].empty()) graph.region_labels[node] = layout.region_names[r];

    for (std::size_t a = 0; a < v; ++a)
        for (std::size_t b = 0; b < v; ++b)
            if (graph.adjacency[a * v + b]) {
                graph.edge_src.push_back(a);
                graph.edge_dst.push_back(b);
            }
    return graph;
}

}  // namespace streamnas
