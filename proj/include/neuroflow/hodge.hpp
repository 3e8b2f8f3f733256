#pragma once

#include <cmath>
#include <variant>

#include <Eigen/Eigenvalues>

#include "common.hpp"
#include "graph_topology.hpp"

namespace neuroflow {

/**
 * Gradient modes of a connected graph, ordered by increasing divergence.
 *
 * From the eigenpairs (lambda_i, v_i) of L0 = B B^T with the zero eigenvalue
 * dropped, u_i = B^T v_i / sqrt(lambda_i) are orthonormal edge signals
 * spanning range(B^T), and ||B u_i||_2 = sqrt(lambda_i). Each v_i is signed so
 * that its first nonzero component is positive.
 */
class GradientModeBasis
{
public:
    explicit GradientModeBasis(const GraphTopology& g)
    {
        const index_t n = g.node_count();
        Eigen::SelfAdjointEigenSolver<Matrix> eig(laplacian(g));
        if (eig.info() != Eigen::Success)
            throw Error("eigen", "Laplacian eigen decomposition failed");
        const Vector& lam = eig.eigenvalues();
        const double tol = 1e-9 * std::max(1.0, lam[n - 1]);
        if (n > 1 && lam[1] <= tol)
            throw Error("disconnected", "Laplacian has more than one zero eigenvalue");

        eigenvalues_ = lam.tail(n - 1);
        node_vectors_ = eig.eigenvectors().rightCols(n - 1);
        edge_modes_.resize(g.edge_count(), n - 1);
        for (index_t i = 0; i < n - 1; ++i) {
            auto v = node_vectors_.col(i);
            for (index_t j = 0; j < n; ++j) {
                if (std::abs(v[j]) > 1e-10) {
                    if (v[j] < 0.0)
                        v = -v;
                    break;
                }
            }
            edge_modes_.col(i) = gradient(g, v) / std::sqrt(eigenvalues_[i]);
        }
    }

    index_t mode_count() const { return eigenvalues_.size(); }
    /// Ascending, zero eigenvalue excluded.
    const Vector& eigenvalues() const { return eigenvalues_; }
    /// N x (N-1), orthonormal columns orthogonal to the constant vector.
    const Matrix& node_vectors() const { return node_vectors_; }
    /// E x (N-1), orthonormal columns.
    const Matrix& edge_modes() const { return edge_modes_; }

private:
    Vector eigenvalues_;
    Matrix node_vectors_;
    Matrix edge_modes_;
};

/// f = f_grad + f_rot with f_grad in range(B^T) and B f_rot = 0.
struct HodgeDecomposition
{
    Vector flow;
    Vector gradient_part;
    Vector rotational_part;
    Vector coefficients; ///< <f, u_i> per gradient mode
    Vector potential;    ///< zero-mean p with B^T p = f_grad
};

inline HodgeDecomposition hodge_decompose(const GraphTopology& g, const GradientModeBasis& basis,
                                          const Eigen::Ref<const Vector>& f)
{
    require_length(f.size(), g.edge_count(), "hodge flow");
    require_length(basis.node_vectors().rows(), g.node_count(), "mode basis");
    HodgeDecomposition d;
    d.flow = f;
    // p = L0^+ B f
    const Vector div = divergence(g, f);
    Vector proj = basis.node_vectors().transpose() * div;
    proj.array() /= basis.eigenvalues().array();
    d.potential = basis.node_vectors() * proj;
    d.potential.array() -= d.potential.mean();
    d.gradient_part = gradient(g, d.potential);
    d.rotational_part = f - d.gradient_part;
    d.coefficients = basis.edge_modes().transpose() * f;
    return d;
}

inline HodgeDecomposition hodge_decompose(const GraphTopology& g, const Eigen::Ref<const Vector>& f)
{
    return hodge_decompose(g, GradientModeBasis(g), f);
}

/// Keep modes 1..index (1-based); index 0 passes nothing, N-1 everything.
struct IdealCutoff
{
    index_t index = 14;
};

/// h(lambda) = (1 + (lambda / lambda_c)^(2 p))^(-1/2); -3 dB at lambda_c.
struct SmoothCutoff
{
    double lambda_c = 1.0;
    int order = 2;
};

using GradientFilter = std::variant<IdealCutoff, SmoothCutoff>;

inline Vector filter_response(const GradientModeBasis& basis, const GradientFilter& filter)
{
    const index_t m = basis.mode_count();
    Vector h(m);
    if (const auto* ideal = std::get_if<IdealCutoff>(&filter)) {
        if (ideal->index < 0 || ideal->index > m)
            throw Error("cutoff", "cutoff index " + std::to_string(ideal->index) + " outside 0.." + std::to_string(m));
        for (index_t i = 0; i < m; ++i)
            h[i] = i < ideal->index ? 1.0 : 0.0;
    } else {
        const auto& smooth = std::get<SmoothCutoff>(filter);
        if (!(smooth.lambda_c > 0.0) || smooth.order < 1)
            throw Error("cutoff", "smooth cutoff needs lambda_c > 0 and order >= 1");
        for (index_t i = 0; i < m; ++i)
            h[i] = 1.0 / std::sqrt(1.0 + std::pow(basis.eigenvalues()[i] / smooth.lambda_c, 2.0 * smooth.order));
    }
    return h;
}

/// Low-pass filtered gradient flow sum_i h_i c_i u_i.
inline Vector lowpass_gradient(const HodgeDecomposition& d, const GradientModeBasis& basis,
                               const GradientFilter& filter)
{
    require_length(d.coefficients.size(), basis.mode_count(), "mode coefficients");
    const Vector h = filter_response(basis, filter);
    return basis.edge_modes() * h.cwiseProduct(d.coefficients);
}

/// Node potential of the gradient part, fixed to zero mean.
inline Vector reconstruct_potential(const HodgeDecomposition& d)
{
    Vector p = d.potential;
    if (p.size() > 0)
        p.array() -= p.mean();
    return p;
}

} // namespace neuroflow
