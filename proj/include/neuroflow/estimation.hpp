#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "common.hpp"
#include "diffusion_model.hpp"
#include "graph_topology.hpp"
#include "session.hpp"

namespace neuroflow {

struct FitConfig
{
    index_t order = 1;
    double ridge = 0.0;      ///< penalty on all parameters
    double edge_ridge = 0.0; ///< extra penalty on edge weights only
    bool demean = true;
    bool min_norm_fallback = true;
    unsigned workers = 1;
};

/**
 * Normal equations of the least-squares fit.
 *
 * Parameter layout: m_{n,k} at (k-1)*N + n, then w_{e,k} at K*N + (k-1)*E + e.
 * The row for node n at target t has s_n[t-k] on m_{n,k} and
 * -B[n,e] * (B^T s[t-k])_e on w_{e,k}; its target is s_n[t].
 */
struct LsSystem
{
    index_t order = 0;
    index_t nodes = 0;
    index_t edges = 0;
    index_t equations = 0;
    Matrix gram;  ///< X^T X
    Vector rhs;   ///< X^T y
    double target_energy = 0.0; ///< y^T y

    index_t parameter_count() const { return order * (nodes + edges); }
    index_t memory_index(index_t n, index_t k) const { return (k - 1) * nodes + n; }
    index_t weight_index(index_t e, index_t k) const { return order * nodes + (k - 1) * edges + e; }
};

namespace detail {

inline void check_targets(std::span<const Series> segments, std::span<const TimeIndex> targets, index_t order,
                          index_t channels)
{
    if (targets.empty())
        throw Error("empty", "target index set is empty");
    for (const auto& ix : targets) {
        if (ix.segment < 0 || ix.segment >= static_cast<index_t>(segments.size()))
            throw Error("history", "target segment id out of range");
        const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
        if (seg.cols() != channels)
            throw Error("dimension", "segment channel count does not match topology");
        if (ix.t - order < 0 || ix.t >= seg.rows())
            throw Error("history", "target " + std::to_string(ix.t) + " of segment " + std::to_string(ix.segment) +
                                       " lacks " + std::to_string(order) + " in-segment predecessors");
    }
}

// Solves (G + D) x = b with D the ridge diagonal. Uses a Jacobi-scaled
// Cholesky factorization; falls back to the spectral pseudo-inverse (minimum
// norm solution) when the matrix is numerically singular.
inline Vector solve_normal_equations(Matrix g, const Vector& b, const Vector& ridge_diag, bool min_norm_fallback)
{
    const index_t p = g.rows();
    g.diagonal() += ridge_diag;
    Vector scale(p);
    for (index_t i = 0; i < p; ++i)
        scale[i] = g(i, i) > 0.0 ? 1.0 / std::sqrt(g(i, i)) : 1.0;
    Matrix scaled = scale.asDiagonal() * g * scale.asDiagonal();
    Eigen::LLT<Matrix> llt(scaled);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) {
        Vector y = llt.solve(scale.cwiseProduct(b));
        return scale.cwiseProduct(y);
    }
    if (!min_norm_fallback)
        throw Error("singular", "normal matrix is numerically singular; use a ridge or enable the minimum-norm fallback");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
    if (eig.info() != Eigen::Success)
        throw Error("eigen", "eigen decomposition of the normal matrix failed");
    const Vector& lam = eig.eigenvalues();
    const double top = lam.cwiseAbs().maxCoeff();
    const double tol = top * static_cast<double>(p) * std::numeric_limits<double>::epsilon();
    Vector coef = eig.eigenvectors().transpose() * b;
    for (index_t i = 0; i < p; ++i)
        coef[i] = lam[i] > tol ? coef[i] / lam[i] : 0.0;
    return eig.eigenvectors() * coef;
}

} // namespace detail

/**
 * Accumulates X^T X and X^T y node by node: each node's equations touch only
 * its own memory taps and the weights of its incident edges, so the local
 * Gram blocks are small and dense. Local blocks may be built concurrently; the
 * scatter into the global system runs in node order.
 */
inline LsSystem assemble_ls_system(const GraphTopology& g, std::span<const Series> segments,
                                   std::span<const TimeIndex> targets, index_t order, unsigned workers = 1)
{
    if (order < 1)
        throw Error("config", "model order must be positive");
    detail::check_targets(segments, targets, order, g.node_count());
    const index_t nn = g.node_count();
    const index_t ne = g.edge_count();
    const auto nt = static_cast<index_t>(targets.size());

    LsSystem sys;
    sys.order = order;
    sys.nodes = nn;
    sys.edges = ne;
    sys.equations = nt * nn;
    const index_t p = sys.parameter_count();
    sys.gram = Matrix::Zero(p, p);
    sys.rhs = Vector::Zero(p);

    struct Local
    {
        std::vector<index_t> map;
        Matrix gram;
        Vector rhs;
        double energy = 0.0;
    };
    std::vector<Local> locals(static_cast<std::size_t>(nn));

    parallel_for(static_cast<std::size_t>(nn), workers, [&](std::size_t ni) {
        const auto n = static_cast<index_t>(ni);
        const auto& inc = g.incident(n);
        const index_t deg = static_cast<index_t>(inc.size());
        const index_t width = order * (1 + deg);
        Local& loc = locals[ni];
        loc.map.resize(static_cast<std::size_t>(width));
        for (index_t k = 1; k <= order; ++k) {
            loc.map[static_cast<std::size_t>(k - 1)] = sys.memory_index(n, k);
            for (index_t j = 0; j < deg; ++j)
                loc.map[static_cast<std::size_t>(order + (k - 1) * deg + j)] =
                    sys.weight_index(inc[static_cast<std::size_t>(j)].edge, k);
        }
        Matrix x(nt, width);
        Vector y(nt);
        for (index_t r = 0; r < nt; ++r) {
            const auto& ix = targets[static_cast<std::size_t>(r)];
            const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
            y[r] = seg(ix.t, n);
            for (index_t k = 1; k <= order; ++k) {
                const auto s = seg.row(ix.t - k);
                x(r, k - 1) = s[n];
                for (index_t j = 0; j < deg; ++j) {
                    const auto& in = inc[static_cast<std::size_t>(j)];
                    const auto& ed = g.edge(in.edge);
                    x(r, order + (k - 1) * deg + j) = -in.sign * (s[ed.head] - s[ed.tail]);
                }
            }
        }
        loc.gram = Matrix::Zero(width, width);
        loc.gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
        loc.gram.triangularView<Eigen::StrictlyUpper>() = loc.gram.transpose();
        loc.rhs = x.transpose() * y;
        loc.energy = y.squaredNorm();
    });

    for (const Local& loc : locals) {
        const auto width = static_cast<index_t>(loc.map.size());
        for (index_t a = 0; a < width; ++a) {
            const index_t ga = loc.map[static_cast<std::size_t>(a)];
            sys.rhs[ga] += loc.rhs[a];
            for (index_t b = 0; b < width; ++b)
                sys.gram(ga, loc.map[static_cast<std::size_t>(b)]) += loc.gram(a, b);
        }
        sys.target_energy += loc.energy;
    }
    return sys;
}

/// Solves an assembled system. Rank-deficient systems return the minimum-norm
/// solution unless the fallback is disabled.
inline DiffusionModel solve_ls_system(const LsSystem& sys, const FitConfig& config)
{
    if (config.ridge < 0.0 || config.edge_ridge < 0.0)
        throw Error("config", "ridge must be nonnegative");
    const index_t p = sys.parameter_count();
    Vector ridge = Vector::Constant(p, config.ridge);
    ridge.tail(sys.order * sys.edges).array() += config.edge_ridge;
    const Vector theta = detail::solve_normal_equations(sys.gram, sys.rhs, ridge, config.min_norm_fallback);

    DiffusionModel model = DiffusionModel::zeros(sys.nodes, sys.edges, sys.order);
    for (index_t k = 1; k <= sys.order; ++k) {
        model.memory(k) = theta.segment(sys.memory_index(0, k), sys.nodes);
        model.weights(k) = theta.segment(sys.weight_index(0, k), sys.edges);
    }
    return model;
}

/// Least-squares fit of the full flow model over the target set.
inline DiffusionModel fit(const GraphTopology& g, std::span<const Series> segments, std::span<const TimeIndex> targets,
                          const FitConfig& config)
{
    return solve_ls_system(assemble_ls_system(g, segments, targets, config.order, config.workers), config);
}

/// Fit with all edge weights fixed at zero: N independent K-tap
/// autoregressions.
inline DiffusionModel fit_no_flow(const GraphTopology& g, std::span<const Series> segments,
                                  std::span<const TimeIndex> targets, const FitConfig& config)
{
    const index_t order = config.order;
    if (order < 1)
        throw Error("config", "model order must be positive");
    if (config.ridge < 0.0)
        throw Error("config", "ridge must be nonnegative");
    detail::check_targets(segments, targets, order, g.node_count());
    const index_t nn = g.node_count();
    DiffusionModel model = DiffusionModel::zeros(nn, g.edge_count(), order);
    std::vector<Vector> taps(static_cast<std::size_t>(nn));
    parallel_for(static_cast<std::size_t>(nn), config.workers, [&](std::size_t ni) {
        const auto n = static_cast<index_t>(ni);
        Matrix gram = Matrix::Zero(order, order);
        Vector rhs = Vector::Zero(order);
        Vector x(order);
        for (const auto& ix : targets) {
            const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
            for (index_t k = 1; k <= order; ++k)
                x[k - 1] = seg(ix.t - k, n);
            gram.noalias() += x * x.transpose();
            rhs.noalias() += seg(ix.t, n) * x;
        }
        taps[ni] = detail::solve_normal_equations(gram, rhs, Vector::Constant(order, config.ridge),
                                                  config.min_norm_fallback);
    });
    for (index_t n = 0; n < nn; ++n)
        for (index_t k = 1; k <= order; ++k)
            model.memory(k)[n] = taps[static_cast<std::size_t>(n)][k - 1];
    return model;
}

/// Sum of squared one-step prediction errors over the target set.
inline double training_error(const DiffusionModel& model, const GraphTopology& g, std::span<const Series> segments,
                             std::span<const TimeIndex> targets)
{
    double e = 0.0;
    for (const auto& ix : targets) {
        const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
        e += (predict_at(model, g, seg, ix.t) - seg.row(ix.t).transpose()).squaredNorm();
    }
    return e;
}

/// RMSE across channels of the one-step prediction at each target.
inline Vector rmse_per_step(const DiffusionModel& model, const GraphTopology& g, std::span<const Series> segments,
                            std::span<const TimeIndex> targets)
{
    detail::check_targets(segments, targets, model.order(), g.node_count());
    Vector out(static_cast<index_t>(targets.size()));
    const double n = static_cast<double>(g.node_count());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& ix = targets[i];
        const Series& seg = segments[static_cast<std::size_t>(ix.segment)];
        const Vector err = predict_at(model, g, seg, ix.t) - seg.row(ix.t).transpose();
        out[static_cast<index_t>(i)] = std::sqrt(err.squaredNorm() / n);
    }
    return out;
}

inline double median(std::vector<double> v)
{
    if (v.empty())
        throw Error("empty", "median of an empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1)
        return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

struct Improvement
{
    double percent = 0.0;
    index_t excluded_steps = 0; ///< steps with zero no-flow RMSE
};

/// 100 * median_t (rmse_no_flow - rmse_flow) / rmse_no_flow.
inline Improvement improvement(const Vector& rmse_no_flow, const Vector& rmse_flow)
{
    require_length(rmse_flow.size(), rmse_no_flow.size(), "flow RMSE series");
    std::vector<double> rel;
    rel.reserve(static_cast<std::size_t>(rmse_flow.size()));
    Improvement out;
    for (index_t i = 0; i < rmse_flow.size(); ++i) {
        if (rmse_no_flow[i] > 0.0)
            rel.push_back((rmse_no_flow[i] - rmse_flow[i]) / rmse_no_flow[i]);
        else
            ++out.excluded_steps;
    }
    if (rel.empty())
        throw Error("empty", "no step with nonzero no-flow RMSE");
    out.percent = 100.0 * median(std::move(rel));
    return out;
}

/// Flow vs. no-flow comparison of one session at one model order.
struct SessionEvaluation
{
    index_t order = 0;
    Vector rmse_flow;
    Vector rmse_no_flow;
    Improvement improvement;
    double train_error_flow = 0.0;
    double train_error_no_flow = 0.0;
};

/**
 * Fits flow and no-flow models independently per block on the first 80% of
 * its trials, predicts one step ahead on the remaining trials, and pools all
 * test steps of the session into a single improvement value.
 */
inline SessionEvaluation evaluate_session(const SessionDataset& session, const FitConfig& config,
                                          double train_fraction = 0.8)
{
    const PreparedSession prep = prepare_session(session, config.demean);
    const TrainTestSplit split = split_train_test(prep, train_fraction);
    SessionEvaluation out;
    out.order = config.order;
    std::vector<double> flow, no_flow;
    for (index_t b = 0; b < static_cast<index_t>(session.blocks.size()); ++b) {
        std::vector<index_t> train, test;
        for (index_t s : split.train)
            if (prep.info[static_cast<std::size_t>(s)].block == b)
                train.push_back(s);
        for (index_t s : split.test)
            if (prep.info[static_cast<std::size_t>(s)].block == b)
                test.push_back(s);
        if (train.empty())
            continue;
        const auto train_targets = target_indices(prep, train, config.order);
        const auto test_targets = target_indices(prep, test, config.order);
        if (test_targets.empty())
            throw Error("empty", "block " + std::to_string(b) + " has no admissible test targets");
        const DiffusionModel mf = fit(session.topology, prep.segments, train_targets, config);
        const DiffusionModel mn = fit_no_flow(session.topology, prep.segments, train_targets, config);
        out.train_error_flow += training_error(mf, session.topology, prep.segments, train_targets);
        out.train_error_no_flow += training_error(mn, session.topology, prep.segments, train_targets);
        const Vector rf = rmse_per_step(mf, session.topology, prep.segments, test_targets);
        const Vector rn = rmse_per_step(mn, session.topology, prep.segments, test_targets);
        flow.insert(flow.end(), rf.begin(), rf.end());
        no_flow.insert(no_flow.end(), rn.begin(), rn.end());
    }
    if (flow.empty())
        throw Error("empty", "session has an empty test set");
    out.rmse_flow = Eigen::Map<const Vector>(flow.data(), static_cast<index_t>(flow.size()));
    out.rmse_no_flow = Eigen::Map<const Vector>(no_flow.data(), static_cast<index_t>(no_flow.size()));
    out.improvement = improvement(out.rmse_no_flow, out.rmse_flow);
    return out;
}

} // namespace neuroflow
