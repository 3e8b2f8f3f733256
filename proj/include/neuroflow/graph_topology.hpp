#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "common.hpp"

namespace neuroflow {

struct Edge
{
    index_t tail = 0;
    index_t head = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

enum class EdgeOrientation
{
    canonical, ///< every edge stored with tail < head
    as_given,  ///< keep the caller's orientation (orientation-covariance checks)
};

/**
 * Sensor graph: node locations plus an oriented edge list.
 *
 * Immutable after construction. The incidence matrix B (N x E) has -1 at the
 * tail and +1 at the head of each edge column, so B^T is the discrete
 * gradient and B the discrete divergence.
 */
class GraphTopology
{
public:
    struct Incident
    {
        index_t edge;
        double sign; ///< B[node, edge]
    };

    GraphTopology(std::vector<Point2> locations, std::vector<Edge> edges,
                  EdgeOrientation orientation = EdgeOrientation::canonical)
        : locations_(std::move(locations)), edges_(std::move(edges))
    {
        const index_t n = node_count();
        if (n < 1)
            throw Error("topology", "graph needs at least one node");
        std::set<std::pair<index_t, index_t>> seen;
        for (auto& e : edges_) {
            if (e.tail < 0 || e.tail >= n || e.head < 0 || e.head >= n)
                throw Error("topology", "edge endpoint out of range");
            if (e.tail == e.head)
                throw Error("topology", "self-loop at node " + std::to_string(e.tail));
            if (orientation == EdgeOrientation::canonical && e.tail > e.head)
                std::swap(e.tail, e.head);
            const auto key = std::minmax(e.tail, e.head);
            if (!seen.insert(key).second)
                throw Error("topology", "duplicate edge (" + std::to_string(key.first) + "," +
                                            std::to_string(key.second) + ")");
        }

        incident_.resize(static_cast<std::size_t>(n));
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(2 * edges_.size());
        for (index_t e = 0; e < edge_count(); ++e) {
            const Edge& ed = edges_[static_cast<std::size_t>(e)];
            trips.emplace_back(ed.tail, e, -1.0);
            trips.emplace_back(ed.head, e, 1.0);
            incident_[static_cast<std::size_t>(ed.tail)].push_back({e, -1.0});
            incident_[static_cast<std::size_t>(ed.head)].push_back({e, 1.0});
        }
        incidence_.resize(n, edge_count());
        incidence_.setFromTriplets(trips.begin(), trips.end());

        const auto comps = components();
        if (comps.size() > 1) {
            std::string msg = "graph is disconnected into " + std::to_string(comps.size()) + " components:";
            for (const auto& c : comps) {
                msg += " {";
                for (std::size_t i = 0; i < c.size(); ++i)
                    msg += (i ? "," : "") + std::to_string(c[i]);
                msg += "}";
            }
            throw Error("disconnected", msg);
        }
    }

    index_t node_count() const { return static_cast<index_t>(locations_.size()); }
    index_t edge_count() const { return static_cast<index_t>(edges_.size()); }

    const std::vector<Point2>& locations() const { return locations_; }
    const Point2& location(index_t n) const { return locations_[static_cast<std::size_t>(n)]; }
    const std::vector<Edge>& edges() const { return edges_; }
    const Edge& edge(index_t e) const { return edges_[static_cast<std::size_t>(e)]; }

    /// Edges touching node n together with B[n, e].
    const std::vector<Incident>& incident(index_t n) const { return incident_[static_cast<std::size_t>(n)]; }
    index_t degree(index_t n) const { return static_cast<index_t>(incident(n).size()); }

    /// Sparse incidence, two nonzeros per column.
    const Eigen::SparseMatrix<double>& incidence() const { return incidence_; }
    Matrix dense_incidence() const { return Matrix(incidence_); }

private:
    std::vector<std::vector<index_t>> components() const
    {
        const index_t n = node_count();
        std::vector<index_t> parent(static_cast<std::size_t>(n));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](index_t x) {
            while (parent[static_cast<std::size_t>(x)] != x)
                x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            return x;
        };
        for (const auto& e : edges_) {
            const index_t a = find(e.tail), b = find(e.head);
            if (a != b)
                parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
        }
        std::vector<std::vector<index_t>> out;
        std::vector<index_t> slot(static_cast<std::size_t>(n), -1);
        for (index_t i = 0; i < n; ++i) {
            const index_t r = find(i);
            if (slot[static_cast<std::size_t>(r)] < 0) {
                slot[static_cast<std::size_t>(r)] = static_cast<index_t>(out.size());
                out.emplace_back();
            }
            out[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])].push_back(i);
        }
        return out;
    }

    std::vector<Point2> locations_;
    std::vector<Edge> edges_;
    std::vector<std::vector<Incident>> incident_;
    Eigen::SparseMatrix<double> incidence_;
};

/**
 * k-nearest-neighbor sensor graph. Each node selects its k nearest nodes by
 * Euclidean distance (ties broken by smaller node id); the relation is
 * symmetrized by union. Duplicate coordinates are rejected.
 */
inline GraphTopology build_knn_graph(std::span<const Point2> locations, index_t k)
{
    const index_t n = static_cast<index_t>(locations.size());
    if (n < 2)
        throw Error("topology", "k-NN graph needs at least 2 locations");
    if (k < 1)
        throw Error("topology", "k must be positive");
    for (index_t i = 0; i < n; ++i)
        for (index_t j = i + 1; j < n; ++j)
            if (locations[static_cast<std::size_t>(i)] == locations[static_cast<std::size_t>(j)])
                throw Error("topology", "duplicate coordinates at nodes " + std::to_string(i) + " and " +
                                            std::to_string(j));

    std::set<std::pair<index_t, index_t>> pairs;
    std::vector<std::pair<double, index_t>> cand;
    for (index_t i = 0; i < n; ++i) {
        cand.clear();
        for (index_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const auto& a = locations[static_cast<std::size_t>(i)];
            const auto& b = locations[static_cast<std::size_t>(j)];
            // squared distance keeps exact ties exact
            const double dx = a.x - b.x, dy = a.y - b.y;
            cand.emplace_back(dx * dx + dy * dy, j);
        }
        const index_t take = std::min(k, n - 1);
        std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
        for (index_t r = 0; r < take; ++r)
            pairs.insert(std::minmax(i, cand[static_cast<std::size_t>(r)].second));
    }

    std::vector<Edge> edges;
    edges.reserve(pairs.size());
    for (const auto& [a, b] : pairs)
        edges.push_back({a, b});
    return GraphTopology(std::vector<Point2>(locations.begin(), locations.end()), std::move(edges));
}

/// Unit-pitch rows x cols grid with 8-neighborhood (horizontal, vertical and
/// diagonal) adjacency. Node id = row * cols + col, location (col, row).
inline GraphTopology build_grid_graph(index_t rows, index_t cols)
{
    if (rows < 1 || cols < 1 || rows * cols < 2)
        throw Error("topology", "grid needs at least 2 nodes");
    std::vector<Point2> locs;
    locs.reserve(static_cast<std::size_t>(rows * cols));
    for (index_t r = 0; r < rows; ++r)
        for (index_t c = 0; c < cols; ++c)
            locs.push_back({static_cast<double>(c), static_cast<double>(r)});
    std::set<std::pair<index_t, index_t>> pairs;
    for (index_t r = 0; r < rows; ++r)
        for (index_t c = 0; c < cols; ++c)
            for (index_t dr = -1; dr <= 1; ++dr)
                for (index_t dc = -1; dc <= 1; ++dc) {
                    const index_t rr = r + dr, cc = c + dc;
                    if ((dr == 0 && dc == 0) || rr < 0 || rr >= rows || cc < 0 || cc >= cols)
                        continue;
                    pairs.insert(std::minmax(r * cols + c, rr * cols + cc));
                }
    std::vector<Edge> edges;
    for (const auto& [a, b] : pairs)
        edges.push_back({a, b});
    return GraphTopology(std::move(locs), std::move(edges));
}

/// Discrete gradient B^T s: entry e is s[head] - s[tail].
inline Vector gradient(const GraphTopology& g, const Eigen::Ref<const Vector>& s)
{
    require_length(s.size(), g.node_count(), "gradient node signal");
    Vector out(g.edge_count());
    for (index_t e = 0; e < g.edge_count(); ++e)
        out[e] = s[g.edge(e).head] - s[g.edge(e).tail];
    return out;
}

/// Discrete divergence B f: net signed flow at each node.
inline Vector divergence(const GraphTopology& g, const Eigen::Ref<const Vector>& f)
{
    require_length(f.size(), g.edge_count(), "divergence edge signal");
    Vector out = Vector::Zero(g.node_count());
    for (index_t e = 0; e < g.edge_count(); ++e) {
        out[g.edge(e).tail] -= f[e];
        out[g.edge(e).head] += f[e];
    }
    return out;
}

/// Graph Laplacian L0 = B B^T as a dense matrix.
inline Matrix laplacian(const GraphTopology& g)
{
    Matrix l = Matrix::Zero(g.node_count(), g.node_count());
    for (const auto& e : g.edges()) {
        l(e.tail, e.tail) += 1.0;
        l(e.head, e.head) += 1.0;
        l(e.tail, e.head) -= 1.0;
        l(e.head, e.tail) -= 1.0;
    }
    return l;
}

} // namespace neuroflow
