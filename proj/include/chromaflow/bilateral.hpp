#pragma once

// K-nearest-neighbour graph in the 5D bilateral space (r, g, b, lx, ly) and
// the color-consistency loss defined over its edges.

#include "chromaflow/image.hpp"
#include "chromaflow/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace chromaflow {

using Point5 = std::array<double, 5>;

/// Neighbour lists: entry i holds the K nearest other points of point i,
/// ordered by (squared distance, index).
using NeighborLists = std::vector<std::vector<int>>;

struct KnnParams {
    int k = 5;
    double lambda = 0.5;
    int sample_size = 1024;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Exact KD-tree over 5D points. Ties are broken by lower point index.
class KdTree5 {
public:
    explicit KdTree5(std::vector<Point5> points);

    /// The k nearest points to points()[self], excluding self.
    std::vector<int> nearest_excluding(int self, int k) const;

    const std::vector<Point5>& points() const { return points_; }

private:
    struct Node {
        int point = -1;
        int dim = 0;
        int left = -1;
        int right = -1;
    };
    int build(std::vector<int>& idx, std::size_t lo, std::size_t hi);
    struct Best;
    void search(int node, const Point5& q, int self, std::size_t k, Best& best) const;

    std::vector<Point5> points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

double squared_distance(const Point5& a, const Point5& b);

/// O(N^2) reference with the same tie rule.
NeighborLists brute_force_knn(std::span<const Point5> points, int k);
/// KD-tree route over the same points.
NeighborLists kdtree_knn(std::span<const Point5> points, int k);

struct KnnGraph {
    int height = 0;
    int width = 0;
    int k = 0;
    /// Row-major pixel indices of the sampled nodes, ascending.
    std::vector<int> nodes;
    /// Bilateral embedding of each node.
    std::vector<Point5> space;
    /// edges[i] holds k node positions (indices into `nodes`).
    NeighborLists edges;

    std::size_t edge_count() const { return nodes.size() * static_cast<std::size_t>(k); }
};

Point5 bilateral_point(const Image& rgb, int pixel, double lambda);

KnnGraph build_knn_graph(const Image& gt_frame, const KnnParams& params);

/// Sum of per-edge L1 color differences divided by (edge count * 3).
double bilateral_loss(const Image& colorized, const KnnGraph& graph);
/// Differentiable variant on a (3,H,W) tensor.
nn::Var bilateral_loss(nn::Var colorized, const KnnGraph& graph);

}  // namespace chromaflow
