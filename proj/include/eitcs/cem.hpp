#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "eitcs/common.hpp"
#include "eitcs/mesh.hpp"
#include "eitcs/protocol.hpp"

namespace eitcs {

struct CemOptions {
    // Lagrange order of the potential (1 or 2); conductivity is always nodal P1.
    int order = 1;
    // Contact impedance z, shared by all electrodes (Ohm m).
    double contact_impedance = 1e-2;
};

struct ForwardSolution {
    // Finite element coefficients of u: vertex values, then edge midpoints for order 2.
    Vector potential;
    // U_1..U_p with sum_j U_j |E_j| = 0.
    Vector electrode_voltages;
};

// Complete electrode model discretized on a fixed mesh.
//
// Unknowns are (u, U~) where U = B U~ eliminates the last electrode voltage
// against the grounding condition, so the system is symmetric positive
// definite and factorized once per conductivity.
class CemModel {
public:
    explicit CemModel(Mesh mesh, CemOptions options = {});

    const Mesh& mesh() const { return mesh_; }
    const CemOptions& options() const { return options_; }
    const std::string& mesh_digest() const { return digest_; }
    int vertex_count() const { return mesh_.vertex_count(); }
    int electrode_count() const { return mesh_.electrode_count(); }
    int dof_count() const { return dofs_; }
    int system_size() const { return dofs_ + electrode_count() - 1; }

    // Factorized system at one conductivity; safe to share between threads.
    struct System {
        Vector sigma;
        Eigen::SparseMatrix<double> matrix;
        std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> factor;
    };

    System factorize(const ConductivityField& sigma) const;
    ForwardSolution solve(const System& system, const Vector& currents) const;

    // Net current through each electrode, (1/z) * int_{E_l} (U_l - u).
    Vector electrode_currents(const ForwardSolution& solution) const;
    // ||A x - b|| / ||b|| of the reduced linear system.
    double relative_residual(const System& system, const ForwardSolution& solution, const Vector& currents) const;

    // Gradients of a potential at every quadrature point, laid out
    // [element][point][x, y].
    std::vector<double> quadrature_gradients(const Vector& potential) const;
    // out_i += weight * (-int_Omega phi_i grad(u_a) . grad(u_b)), phi_i the
    // P1 hat function of vertex i.
    void add_sensitivity(const std::vector<double>& grad_a, const std::vector<double>& grad_b, double weight,
        Vector& out) const;
    Vector sensitivity(const Vector& potential_a, const Vector& potential_b) const;

private:
    struct QuadraturePoint {
        double weight; // quadrature weight times element area
        std::array<double, 3> hat;
    };

    Mesh mesh_;
    CemOptions options_;
    std::string digest_;
    int dofs_ = 0;
    int local_dofs_ = 0;
    int points_per_element_ = 0;
    std::vector<int> element_dofs_;         // [element][local]
    std::vector<QuadraturePoint> points_;   // [element][point]
    std::vector<double> basis_gradients_;   // [element][point][local][x, y]
    std::vector<Eigen::Triplet<double>> boundary_terms_;
    std::vector<double> electrode_lengths_;
    // int_{E_l} phi_k for every potential dof k touching electrode l
    std::vector<std::vector<std::pair<int, double>>> electrode_loads_;
};

// Single solve convenience wrapper.
ForwardSolution assemble_and_solve(const CemModel& model, const ConductivityField& sigma, const Vector& currents);

struct JacobianMatrix {
    Matrix entries; // m x n, d Phi_r / d sigma_i
    Protocol protocol;
    Vector sigma;
};

// Discrete forward map Phi: R^n -> R^m for one measurement protocol.
class ForwardMap {
public:
    ForwardMap(std::shared_ptr<const CemModel> model, Protocol protocol);

    const CemModel& model() const { return *model_; }
    std::shared_ptr<const CemModel> model_ptr() const { return model_; }
    const Protocol& protocol() const { return protocol_; }
    int measurement_count() const { return protocol_.size(); }
    int parameter_count() const { return model_->vertex_count(); }

    struct Evaluation {
        Vector sigma;
        Vector values;
        // One solution per distinct current pattern.
        std::vector<ForwardSolution> patterns;
    };

    Evaluation evaluate(const ConductivityField& sigma) const;
    Vector apply(const ConductivityField& sigma) const { return evaluate(sigma).values; }

    // Adjoint assembly: row r is -int phi_i grad(u_drive) . grad(u_meas).
    JacobianMatrix jacobian(const Evaluation& eval) const;
    JacobianMatrix jacobian(const ConductivityField& sigma) const { return jacobian(evaluate(sigma)); }

    // J^T y without forming J: measurement potentials are combined per drive first.
    Vector adjoint(const Evaluation& eval, const Vector& y) const;

    // Transfer representation for a protocol whose injections and
    // measurements coincide: T(a, b) = reading of measurement b under drive a.
    Matrix transfer_matrix(const Vector& values) const;

private:
    struct PatternRef {
        int pattern;
        double sign;
    };

    std::shared_ptr<const CemModel> model_;
    Protocol protocol_;
    std::vector<ElectrodePair> patterns_; // first < second, current +1 at first
    std::vector<PatternRef> injection_refs_;
    std::vector<PatternRef> measurement_refs_;
};

Vector apply_phi(const ForwardMap& map, const ConductivityField& sigma);

struct RipEstimate {
    double alpha = 0.0; // min over samples of the smallest squared singular value
    double beta = 0.0;  // max over samples of the largest squared singular value
    bool degenerate = true; // alpha vanished within tolerance
    int samples = 0;
};

// Squared extreme singular values of J (optionally restricted to `columns`).
// When J has fewer rows than columns the lower bound is 0 on the full space.
RipEstimate estimate_rip_bounds(const ForwardMap& map, const std::vector<ConductivityField>& samples,
    const std::vector<int>& columns = {});

// Combine two estimates (min of alpha, max of beta).
RipEstimate merge(const RipEstimate& a, const RipEstimate& b);

// Largest squared singular value by power iteration on J^T J.
double power_iteration_sq_norm(const Matrix& jacobian, int iterations = 50);

} // namespace eitcs
