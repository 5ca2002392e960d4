#include "chromaflow/bilateral.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>

namespace chromaflow {

void KnnParams::validate() const {
    if (k < 1) throw std::invalid_argument("KnnParams: K must be >= 1");
    if (!(lambda >= 0.0)) throw std::invalid_argument("KnnParams: lambda must be >= 0");
    if (sample_size < k + 1) throw std::invalid_argument("KnnParams: sample_size must be >= K+1");
}

double squared_distance(const Point5& a, const Point5& b) {
    double acc = 0.0;
    for (int d = 0; d < 5; ++d) {
        const double diff = a[d] - b[d];
        acc += diff * diff;
    }
    return acc;
}

namespace {

struct Candidate {
    double dist;
    int index;
    bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && index < o.index); }
};

}  // namespace

// Bounded sorted list of the best candidates found so far.
struct KdTree5::Best {
    std::vector<Candidate> items;
    std::size_t capacity = 0;

    bool full() const { return items.size() == capacity; }
    void offer(Candidate c) {
        if (full() && !(c < items.back())) return;
        items.insert(std::upper_bound(items.begin(), items.end(), c), c);
        if (items.size() > capacity) items.pop_back();
    }
};

KdTree5::KdTree5(std::vector<Point5> points) : points_(std::move(points)) {
    std::vector<int> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, idx.size());
}

int KdTree5::build(std::vector<int>& idx, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return -1;
    // Split on the axis of largest spread.
    int dim = 0;
    double best_spread = -1.0;
    for (int d = 0; d < 5; ++d) {
        double mn = points_[static_cast<std::size_t>(idx[lo])][d], mx = mn;
        for (std::size_t i = lo; i < hi; ++i) {
            const double v = points_[static_cast<std::size_t>(idx[i])][d];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        if (mx - mn > best_spread) {
            best_spread = mx - mn;
            dim = d;
        }
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx.begin() + static_cast<std::ptrdiff_t>(hi), [&](int a, int b) {
                         const double va = points_[static_cast<std::size_t>(a)][dim];
                         const double vb = points_[static_cast<std::size_t>(b)][dim];
                         return va < vb || (va == vb && a < b);
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{idx[mid], dim, -1, -1});
    const int left = build(idx, lo, mid);
    const int right = build(idx, mid + 1, hi);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

void KdTree5::search(int node, const Point5& q, int self, std::size_t k, Best& best) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    const Point5& p = points_[static_cast<std::size_t>(n.point)];
    if (n.point != self) best.offer({squared_distance(q, p), n.point});
    const double diff = q[n.dim] - p[n.dim];
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, q, self, k, best);
    // Equality must be explored: a tie on the far side may carry a lower index.
    if (!best.full() || diff * diff <= best.items.back().dist) search(far, q, self, k, best);
}

std::vector<int> KdTree5::nearest_excluding(int self, int k) const {
    if (k < 1 || static_cast<std::size_t>(k) >= points_.size()) {
        throw std::invalid_argument("kNN: K must satisfy 1 <= K < number of points");
    }
    Best best;
    best.capacity = static_cast<std::size_t>(k);
    best.items.reserve(best.capacity + 1);
    search(root_, points_[static_cast<std::size_t>(self)], self, best.capacity, best);
    std::vector<int> out;
    out.reserve(best.items.size());
    for (const auto& c : best.items) out.push_back(c.index);
    return out;
}

NeighborLists brute_force_knn(std::span<const Point5> points, int k) {
    if (k < 1 || static_cast<std::size_t>(k) >= points.size()) {
        throw std::invalid_argument("kNN: K must satisfy 1 <= K < number of points");
    }
    NeighborLists out(points.size());
    std::vector<Candidate> all;
    for (std::size_t i = 0; i < points.size(); ++i) {
        all.clear();
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (j != i) all.push_back({squared_distance(points[i], points[j]), static_cast<int>(j)});
        }
        std::partial_sort(all.begin(), all.begin() + k, all.end());
        for (int n = 0; n < k; ++n) out[i].push_back(all[static_cast<std::size_t>(n)].index);
    }
    return out;
}

NeighborLists kdtree_knn(std::span<const Point5> points, int k) {
    const KdTree5 tree(std::vector<Point5>(points.begin(), points.end()));
    NeighborLists out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = tree.nearest_excluding(static_cast<int>(i), k);
    return out;
}

Point5 bilateral_point(const Image& rgb, int pixel, double lambda) {
    const int y = pixel / rgb.width();
    const int x = pixel % rgb.width();
    const double scale = lambda / static_cast<double>(std::max(rgb.height(), rgb.width()));
    return {rgb.at(y, x, 0), rgb.at(y, x, 1), rgb.at(y, x, 2), scale * x, scale * y};
}

KnnGraph build_knn_graph(const Image& gt_frame, const KnnParams& params) {
    params.validate();
    if (gt_frame.channels() != 3) throw ImageError("build_knn_graph expects an RGB frame");
    const int total = static_cast<int>(gt_frame.pixel_count());

    KnnGraph g;
    g.height = gt_frame.height();
    g.width = gt_frame.width();
    g.k = params.k;
    if (total <= params.sample_size) {
        g.nodes.resize(static_cast<std::size_t>(total));
        std::iota(g.nodes.begin(), g.nodes.end(), 0);
    } else {
        std::vector<int> all(static_cast<std::size_t>(total));
        std::iota(all.begin(), all.end(), 0);
        std::mt19937_64 rng(params.seed);
        std::sample(all.begin(), all.end(), std::back_inserter(g.nodes), params.sample_size, rng);
        std::sort(g.nodes.begin(), g.nodes.end());
    }
    if (static_cast<std::size_t>(params.k) >= g.nodes.size()) {
        throw std::invalid_argument("build_knn_graph: K must be smaller than the number of sampled nodes");
    }
    g.space.reserve(g.nodes.size());
    for (int p : g.nodes) g.space.push_back(bilateral_point(gt_frame, p, params.lambda));
    g.edges = kdtree_knn(g.space, params.k);
    return g;
}

double bilateral_loss(const Image& colorized, const KnnGraph& graph) {
    if (colorized.channels() != 3 || colorized.height() != graph.height || colorized.width() != graph.width) {
        throw ImageError("bilateral_loss: frame does not match graph dimensions");
    }
    auto d = colorized.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        const std::size_t p = static_cast<std::size_t>(graph.nodes[i]);
        for (int j : graph.edges[i]) {
            const std::size_t q = static_cast<std::size_t>(graph.nodes[static_cast<std::size_t>(j)]);
            for (std::size_t c = 0; c < 3; ++c) acc += std::fabs(static_cast<double>(d[3 * p + c]) - d[3 * q + c]);
        }
    }
    return acc / (static_cast<double>(graph.edge_count()) * 3.0);
}

nn::Var bilateral_loss(nn::Var colorized, const KnnGraph& graph) {
    const nn::Shape& s = colorized.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != graph.height || s[2] != graph.width) {
        throw nn::ShapeError("bilateral_loss: tensor does not match graph dimensions");
    }
    // Flattened (p, q) pixel pairs shared with the backward closure.
    auto pairs = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
    pairs->reserve(graph.edge_count());
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        for (int j : graph.edges[i]) {
            pairs->emplace_back(static_cast<std::size_t>(graph.nodes[i]),
                                static_cast<std::size_t>(graph.nodes[static_cast<std::size_t>(j)]));
        }
    }
    const std::size_t plane = static_cast<std::size_t>(graph.height) * graph.width;
    const double norm = static_cast<double>(pairs->size()) * 3.0;
    const nn::Tensor& x = colorized.value();
    double acc = 0.0;
    for (const auto& [p, q] : *pairs) {
        for (std::size_t c = 0; c < 3; ++c) acc += std::fabs(static_cast<double>(x[c * plane + p]) - x[c * plane + q]);
    }
    return colorized.tape->push(nn::Tensor::scalar(static_cast<float>(acc / norm)), {colorized},
                                [colorized, pairs, plane, norm](nn::Tape& t, int self) {
        const float g = static_cast<float>(t.grad(self)[0] / norm);
        const nn::Tensor& x = t.value(colorized.id);
        auto gx = t.grad(colorized.id);
        for (const auto& [p, q] : *pairs) {
            for (std::size_t c = 0; c < 3; ++c) {
                const float diff = x[c * plane + p] - x[c * plane + q];
                const float sgn = diff > 0.0f ? 1.0f : (diff < 0.0f ? -1.0f : 0.0f);
                gx[c * plane + p] += g * sgn;
                gx[c * plane + q] -= g * sgn;
            }
        }
    });
}

}  // namespace chromaflow
