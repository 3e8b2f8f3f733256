#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "common.hpp"
#include "graph_topology.hpp"
#include "random.hpp"

namespace neuroflow {

/// Node time series, one row per sample, one column per channel.
using Series = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * K-th order graph diffusion model
 *
 *     s[t] = sum_k (M_k - B W_k B^T) s[t-k],   k = 1..K
 *
 * with diagonal M_k = diag(m_k) and W_k = diag(w_k). Column k-1 of
 * node_memory / edge_weights holds the lag-k taps. The diagonal matrices are
 * never formed; evaluation uses element-wise products with the gradient and
 * divergence operators.
 */
class DiffusionModel
{
public:
    DiffusionModel() = default;

    DiffusionModel(Matrix node_memory, Matrix edge_weights)
        : node_memory_(std::move(node_memory)), edge_weights_(std::move(edge_weights))
    {
        if (node_memory_.cols() < 1)
            throw Error("model", "model order must be positive");
        if (edge_weights_.cols() != node_memory_.cols())
            throw Error("model", "node memory and edge weights disagree on model order");
    }

    static DiffusionModel zeros(index_t nodes, index_t edges, index_t order)
    {
        return {Matrix::Zero(nodes, order), Matrix::Zero(edges, order)};
    }

    index_t order() const { return node_memory_.cols(); }
    index_t node_count() const { return node_memory_.rows(); }
    index_t edge_count() const { return edge_weights_.rows(); }

    /// Lag k in 1..K.
    auto memory(index_t k) const { return node_memory_.col(k - 1); }
    auto weights(index_t k) const { return edge_weights_.col(k - 1); }
    auto memory(index_t k) { return node_memory_.col(k - 1); }
    auto weights(index_t k) { return edge_weights_.col(k - 1); }

    const Matrix& node_memory() const { return node_memory_; }
    const Matrix& edge_weights() const { return edge_weights_; }

    void check_against(const GraphTopology& g) const
    {
        require_length(node_count(), g.node_count(), "model node memory");
        require_length(edge_count(), g.edge_count(), "model edge weights");
    }

private:
    Matrix node_memory_;
    Matrix edge_weights_;
};

/// Lagged node signals s[t-1], ..., s[t-K], most recent first.
class HistoryWindow
{
public:
    explicit HistoryWindow(std::vector<Vector> lags) : lags_(std::move(lags)) {}

    /// Window ending just before row t of the series.
    static HistoryWindow from_series(const Series& series, index_t t, index_t order)
    {
        if (t - order < 0 || t > series.rows())
            throw Error("history", "insufficient history at index " + std::to_string(t));
        std::vector<Vector> lags;
        lags.reserve(static_cast<std::size_t>(order));
        for (index_t k = 1; k <= order; ++k)
            lags.emplace_back(series.row(t - k).transpose());
        return HistoryWindow(std::move(lags));
    }

    index_t size() const { return static_cast<index_t>(lags_.size()); }
    /// Lag k in 1..K.
    const Vector& lag(index_t k) const { return lags_[static_cast<std::size_t>(k - 1)]; }

private:
    std::vector<Vector> lags_;
};

namespace detail {

inline void check_history(const DiffusionModel& model, const GraphTopology& g, const HistoryWindow& h)
{
    model.check_against(g);
    require_length(h.size(), model.order(), "history window lags");
    for (index_t k = 1; k <= h.size(); ++k)
        require_length(h.lag(k).size(), g.node_count(), "history lag");
}

// Accumulates the lag-k contribution of s into pred and flow.
template <typename Row>
void accumulate_lag(const DiffusionModel& model, const GraphTopology& g, index_t k, const Row& s, Vector& pred,
                    Vector* flow)
{
    const auto m = model.memory(k);
    const auto w = model.weights(k);
    for (index_t n = 0; n < g.node_count(); ++n)
        pred[n] += m[n] * s[n];
    for (index_t e = 0; e < g.edge_count(); ++e) {
        const auto& ed = g.edge(e);
        const double fe = w[e] * (s[ed.head] - s[ed.tail]);
        // pred -= B (w .* B^T s)
        pred[ed.tail] += fe;
        pred[ed.head] -= fe;
        if (flow)
            (*flow)[e] += fe;
    }
}

} // namespace detail

/// One-step prediction sum_k m_k .* s[t-k] - div(w_k .* grad(s[t-k])).
inline Vector predict_one_step(const DiffusionModel& model, const GraphTopology& g, const HistoryWindow& history)
{
    detail::check_history(model, g, history);
    Vector pred = Vector::Zero(g.node_count());
    for (index_t k = 1; k <= model.order(); ++k)
        detail::accumulate_lag(model, g, k, history.lag(k), pred, nullptr);
    return pred;
}

/// Prediction of row t from rows t-1..t-K of the series (no copies).
inline Vector predict_at(const DiffusionModel& model, const GraphTopology& g, const Series& series, index_t t)
{
    model.check_against(g);
    if (t - model.order() < 0 || t >= series.rows())
        throw Error("history", "insufficient history at index " + std::to_string(t));
    Vector pred = Vector::Zero(g.node_count());
    for (index_t k = 1; k <= model.order(); ++k)
        detail::accumulate_lag(model, g, k, series.row(t - k), pred, nullptr);
    return pred;
}

/// Edge flow f[t] = sum_k w_k .* grad(s[t-k]). A positive entry moves signal
/// from head to tail; the physical tail->head transport is -f.
inline Vector compute_flow(const DiffusionModel& model, const GraphTopology& g, const HistoryWindow& history)
{
    detail::check_history(model, g, history);
    Vector pred = Vector::Zero(g.node_count());
    Vector flow = Vector::Zero(g.edge_count());
    for (index_t k = 1; k <= model.order(); ++k)
        detail::accumulate_lag(model, g, k, history.lag(k), pred, &flow);
    return flow;
}

/// A sample position: segment (trial) id and row within that segment.
struct TimeIndex
{
    index_t segment = 0;
    index_t t = 0;

    friend bool operator==(const TimeIndex&, const TimeIndex&) = default;
};

struct FlowSample
{
    TimeIndex index;
    Vector flow;
};

using EdgeFlowSeries = std::vector<FlowSample>;

/// Flow at each requested index; every index needs K in-segment predecessors.
inline EdgeFlowSeries flow_series(const DiffusionModel& model, const GraphTopology& g, std::span<const Series> segments,
                                  std::span<const TimeIndex> indices)
{
    model.check_against(g);
    EdgeFlowSeries out;
    out.reserve(indices.size());
    for (const auto& ix : indices) {
        if (ix.segment < 0 || ix.segment >= static_cast<index_t>(segments.size()))
            throw Error("history", "segment id out of range");
        const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
        if (ix.t - model.order() < 0 || ix.t > seg.rows())
            throw Error("history", "index " + std::to_string(ix.t) + " of segment " + std::to_string(ix.segment) +
                                       " lacks " + std::to_string(model.order()) + " in-segment predecessors");
        Vector pred = Vector::Zero(g.node_count());
        Vector flow = Vector::Zero(g.edge_count());
        for (index_t k = 1; k <= model.order(); ++k)
            detail::accumulate_lag(model, g, k, seg.row(ix.t - k), pred, &flow);
        out.push_back({ix, std::move(flow)});
    }
    return out;
}

/**
 * Forward simulation of the recursion with additive exogenous input and
 * Gaussian innovation noise. `initial` holds the K samples preceding the
 * first simulated step (oldest first); `inputs` is either empty or has
 * `steps` rows. Returns the `steps` simulated rows.
 */
inline Series simulate(const DiffusionModel& model, const GraphTopology& g, const Series& initial, const Series& inputs,
                       index_t steps, double noise_std, std::uint64_t seed)
{
    model.check_against(g);
    const index_t n = g.node_count();
    const index_t order = model.order();
    if (initial.rows() != order || initial.cols() != n)
        throw Error("dimension", "initial history must be K x N");
    if (inputs.size() != 0 && (inputs.rows() != steps || inputs.cols() != n))
        throw Error("dimension", "inputs must be steps x N");
    if (noise_std < 0.0)
        throw Error("config", "noise_std must be nonnegative");

    Series buf(order + steps, n);
    buf.topRows(order) = initial;
    Rng rng(seed);
    for (index_t i = 0; i < steps; ++i) {
        const index_t t = order + i;
        Vector next = predict_at(model, g, buf, t);
        if (inputs.size() != 0)
            next += inputs.row(i).transpose();
        if (noise_std > 0.0)
            for (index_t c = 0; c < n; ++c)
                next[c] += noise_std * rng.normal();
        if (!next.allFinite())
            throw Error("instability", "simulation produced non-finite values at step " + std::to_string(i) +
                                           "; the model is unstable");
        buf.row(t) = next.transpose();
    }
    return buf.bottomRows(steps);
}

/// Dense NK x NK companion matrix of the recursion.
inline Matrix companion_matrix(const DiffusionModel& model, const GraphTopology& g)
{
    model.check_against(g);
    const index_t n = g.node_count();
    const index_t order = model.order();
    Matrix c = Matrix::Zero(n * order, n * order);
    for (index_t k = 1; k <= order; ++k) {
        auto block = c.block(0, (k - 1) * n, n, n);
        block.diagonal() = model.memory(k);
        const auto w = model.weights(k);
        for (index_t e = 0; e < g.edge_count(); ++e) {
            const auto& ed = g.edge(e);
            block(ed.tail, ed.tail) -= w[e];
            block(ed.head, ed.head) -= w[e];
            block(ed.tail, ed.head) += w[e];
            block(ed.head, ed.tail) += w[e];
        }
    }
    if (order > 1)
        c.block(n, 0, n * (order - 1), n * (order - 1)).setIdentity();
    return c;
}

/// Spectral radius of the companion matrix; < 1 means asymptotically stable.
inline double stability_radius(const DiffusionModel& model, const GraphTopology& g)
{
    const Matrix c = companion_matrix(model, g);
    Eigen::EigenSolver<Matrix> solver(c, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw Error("eigen", "eigenvalue solver did not converge on the companion matrix");
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

} // namespace neuroflow
