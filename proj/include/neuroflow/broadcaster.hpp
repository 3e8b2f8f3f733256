#pragma once

#include <cmath>

#include "common.hpp"
#include "graph_topology.hpp"

namespace neuroflow {

/// A(i, j) = magnitude of physical flow from node i to node j.
using DirectedFlowGraph = Matrix;

/**
 * Directed adjacency of a gradient flow. The physical transport along
 * tail->head is phi_e = -f_e; phi_e > 0 sets A(tail, head), phi_e < 0 sets
 * A(head, tail), zero flow leaves no entry.
 */
inline DirectedFlowGraph flow_to_directed_adjacency(const GraphTopology& g, const Eigen::Ref<const Vector>& f_grad)
{
    require_length(f_grad.size(), g.edge_count(), "gradient flow");
    DirectedFlowGraph a = Matrix::Zero(g.node_count(), g.node_count());
    for (index_t e = 0; e < g.edge_count(); ++e) {
        const double phi = -f_grad[e];
        const auto& ed = g.edge(e);
        if (phi > 0.0)
            a(ed.tail, ed.head) = phi;
        else if (phi < 0.0)
            a(ed.head, ed.tail) = -phi;
    }
    return a;
}

/// exp(M) by scaling and squaring with a degree-18 Taylor core.
inline Matrix matrix_exponential(const Matrix& m)
{
    if (!m.allFinite())
        throw Error("non_finite", "matrix exponential of a non-finite matrix");
    const index_t n = m.rows();
    const double norm = m.cwiseAbs().rowwise().sum().maxCoeff(); // infinity norm
    int squarings = 0;
    if (norm > 0.5)
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Matrix scaled = m / std::ldexp(1.0, squarings);
    Matrix result = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k <= 18; ++k) {
        term = (term * scaled) / static_cast<double>(k);
        result += term;
    }
    for (int i = 0; i < squarings; ++i)
        result = result * result;
    return result;
}

/// Row sums of exp(beta A) - I for a caller-chosen beta.
inline Vector adr_with_scale(const DirectedFlowGraph& a, double beta)
{
    if (!a.allFinite() || !std::isfinite(beta))
        throw Error("non_finite", "directed flow graph has non-finite entries");
    if (a.rows() != a.cols())
        throw Error("dimension", "adjacency must be square");
    Matrix e = matrix_exponential(beta * a);
    e.diagonal().array() -= 1.0;
    return e.rowwise().sum();
}

/**
 * Aggregate downstream reachability: row sums of exp(beta A) - I with
 * beta = 1 / max A(i, j). Row n weighs every walk leaving n along the flow
 * direction, discounted by 1/length!.
 */
inline Vector adr(const DirectedFlowGraph& a)
{
    if (!a.allFinite())
        throw Error("non_finite", "directed flow graph has non-finite entries");
    const double top = a.size() ? a.maxCoeff() : 0.0;
    if (!(top > 0.0))
        return Vector::Zero(a.rows());
    return adr_with_scale(a, 1.0 / top);
}

/// ADR-weighted center of mass of the node locations.
inline Point2 broadcaster_location(const GraphTopology& g, const Eigen::Ref<const Vector>& adr_values)
{
    require_length(adr_values.size(), g.node_count(), "ADR vector");
    const double total = adr_values.sum();
    if (!(total > 0.0))
        throw Error("zero_adr", "ADR is all zero; broadcaster location undefined");
    Point2 x;
    for (index_t n = 0; n < g.node_count(); ++n) {
        x.x += g.location(n).x * adr_values[n];
        x.y += g.location(n).y * adr_values[n];
    }
    x.x /= total;
    x.y /= total;
    return x;
}

struct BroadcastDistances
{
    double broadcaster = 0.0; ///< d_b = |x_b - x_s|
    double random = 0.0;      ///< d_r = mean over nodes of |l(n) - x_s|
};

inline BroadcastDistances broadcast_distances(const GraphTopology& g, const Point2& x_b, const Point2& x_s)
{
    BroadcastDistances d;
    d.broadcaster = distance(x_b, x_s);
    for (const auto& l : g.locations())
        d.random += distance(l, x_s);
    d.random /= static_cast<double>(g.node_count());
    return d;
}

struct BroadcastReport
{
    Vector adr;
    Point2 x_b;
    Point2 x_s;
    double d_b = 0.0;
    double d_r = 0.0;
};

/// ADR, broadcaster location and distances for one gradient flow.
inline BroadcastReport localize_broadcaster(const GraphTopology& g, const Eigen::Ref<const Vector>& f_grad,
                                            const Point2& x_s)
{
    BroadcastReport r;
    r.adr = adr(flow_to_directed_adjacency(g, f_grad));
    r.x_b = broadcaster_location(g, r.adr);
    r.x_s = x_s;
    const auto d = broadcast_distances(g, r.x_b, x_s);
    r.d_b = d.broadcaster;
    r.d_r = d.random;
    return r;
}

} // namespace neuroflow
