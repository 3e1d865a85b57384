#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/cem.hpp"
#include "eitcs/prox.hpp"

namespace eitcs {

enum class Variant { L1, TV, L1Mask, TVMask };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
Penalty penalty_of(Variant v);
bool uses_mask(Variant v);
inline constexpr Variant kAllVariants[] = {Variant::L1, Variant::TV, Variant::L1Mask, Variant::TVMask};

struct SolverConfig {
    Variant variant = Variant::TV;
    double lambda = 1e-4;
    double rho = 1e-12;
    // Explicit step size; empty selects it from the spectral estimate.
    std::optional<double> mu;
    int max_iters = 500;
    double tol = 1e-6;
    double safety = 0.99;
    int power_iterations = 50;
    // Reference, box, mask and inner TV settings; the penalty follows `variant`.
    RegularizerConfig regularizer;
    // Optional diagnostics for the contraction estimate.
    std::optional<double> alpha_hat;
    std::optional<double> gamma_hat;

    // Regularizer with penalty and mask made consistent with the variant.
    RegularizerConfig effective_regularizer() const;
    void validate(Eigen::Index n) const;
    // Scalar settings plus a summary of sigma0 and the mask (not their values).
    nlohmann::json to_json() const;
};

struct SolveReport {
    Variant variant = Variant::TV;
    Vector sigma;
    std::vector<double> objective; // accepted iterates, starting with the initial one
    std::vector<double> change;    // relative iterate change, 0 for the initial entry
    std::vector<double> misfit;    // ||Phi(sigma) - data||
    double lambda = 0.0;
    double rho = 0.0;
    double mu = 0.0;
    double beta_hat = 0.0;
    std::optional<double> alpha_hat;
    std::optional<double> gamma_hat;
    std::optional<double> q;
    int iterations = 0;
    int rejected_steps = 0;
    std::string termination;

    nlohmann::json to_json() const;
};

// J^T (Phi(sigma) - data) + lambda rho sigma at an existing evaluation.
Vector grad_f(const ForwardMap& map, const ForwardMap::Evaluation& eval, const Vector& data, double lambda,
    double rho);
Vector grad_f(const ForwardMap& map, const ConductivityField& sigma, const Vector& data, double lambda, double rho);

// min(1 / (2 beta), 1 / (2 lambda rho)) * safety.
double choose_step_size(double beta_hat, double lambda, double rho, double safety = 0.99);

// 1/2 ||Phi - data||^2 + lambda rho / 2 ||sigma||^2 + lambda R(sigma) + chi_K(sigma).
double objective(const ForwardMap& map, const VertexAdjacency& adj, const Vector& sigma, const Vector& data,
    const SolverConfig& config);

// Called with (iteration, iterate) for the initial point and every accepted iterate.
using IterateObserver = std::function<void(int, const Vector&)>;

SolveReport run_pgm(const ForwardMap& map, const VertexAdjacency& adj, const Vector& init, const Vector& data,
    const SolverConfig& config, const IterateObserver& observer = {});

// max over pairs of ||Phi(a) - Phi(b) - J(b)(a - b)||^2 / ||a - b||^2.
double estimate_gamma(const ForwardMap& map, const std::vector<std::pair<ConductivityField, ConductivityField>>& pairs);

// 1 - mu lambda rho - mu alpha + 2 mu gamma.
double contraction_estimate(double mu, double lambda, double rho, double alpha, double gamma);

// 4 / (alpha + lambda rho - 2 gamma) * value, or empty when the denominator
// is not positive.
std::optional<double> cluster_point_bound(double alpha, double lambda, double rho, double gamma, double value);

} // namespace eitcs
