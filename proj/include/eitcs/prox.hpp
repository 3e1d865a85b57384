#pragma once

#include <optional>
#include <span>
#include <string>

#include "eitcs/common.hpp"
#include "eitcs/mesh.hpp"
#include "eitcs/oracle.hpp"

namespace eitcs {

enum class Penalty { L1, TV };

// How the TV prox is computed. Exact splits the vertex set at level values
// by minimum cuts and is the true proximal map; Sweeps runs Gauss-Seidel
// median sweeps with cluster moves, which can stop short of the minimizer.
enum class TvMethod { Exact, Sweeps };

std::string to_string(TvMethod m);
TvMethod parse_tv_method(const std::string& s);

struct RegularizerConfig {
    Penalty penalty = Penalty::TV;
    Vector sigma0;
    Box box;
    std::optional<OracleMask> mask;
    TvMethod tv_method = TvMethod::Exact;
    // Sweep budget and tolerance; used by TvMethod::Sweeps only.
    int max_sweeps = 50;
    double tol = 1e-8;
    // Penalize TV(sigma - sigma0) instead of TV(sigma).
    bool tv_relative = false;

    void validate(Eigen::Index n) const;
};

// sigma0 + sign(v - sigma0) * max(0, |v - sigma0| - t).
Vector soft_threshold(const Vector& v, double t, const Vector& sigma0);

// argmin_x 1/2 (x - data)^2 + tau * sum_k w_k |x - nu_k| by the median
// formula; `neighbor_values` must be ascending with `weights` co-sorted.
double prox_tv_local(double data, std::span<const double> neighbor_values, std::span<const double> weights,
    double tau);

// sum over unordered edges of w_ik |x_i - x_k|.
double tv_value(const Vector& x, const VertexAdjacency& adj);

struct TvSolveOptions {
    TvMethod method = TvMethod::Exact;
    int max_sweeps = 50;
    double tol = 1e-8;
    // Per-vertex bounds; empty means unbounded. Equal bounds pin a vertex.
    Vector lower;
    Vector upper;
    // Starting point for the sweeps; empty means start from the input.
    Vector warm_start;
};

struct TvSolveInfo {
    int sweeps = 0;      // Sweeps: sweeps run
    double last_change = 0.0;
    int cuts = 0;        // Exact: minimum cuts solved
};

// Minimizes 1/2 ||x - sigma||^2 + tau TV(x) over the bound set.
//
// Exact: a set of free vertices is first fused at its best common value
// (the median formula on the contracted vertex). Two minimum cuts then
// separate the vertices whose optimum lies above, at and below that value;
// both sides are solved recursively with the cut edges turned into linear
// terms. Pinned vertices enter their neighbours' local problems as fixed
// median candidates.
//
// Sweeps: Gauss-Seidel median sweeps in ascending vertex order, alternated
// with moves of whole equal-valued clusters.
Vector prox_tv(const Vector& sigma, double tau, const VertexAdjacency& adj, const TvSolveOptions& options = {},
    TvSolveInfo* info = nullptr);

Vector project_box(const Vector& sigma, const Box& box);

// sigma0 + M_O (sigma - sigma0).
Vector project_oracle(const Vector& sigma, const OracleMask& mask, const Vector& sigma0);
ConductivityField project_oracle(const ConductivityField& sigma, const OracleMask& mask, const Vector& sigma0);

// Proximal map of tau * (R + chi_K). For l1 it is the composition
// proj_oracle(proj_box(soft_threshold)); for TV the constrained problem is
// solved directly and the projections applied afterwards leave it unchanged.
Vector prox_g(const Vector& sigma, double tau, const RegularizerConfig& config, const VertexAdjacency& adj,
    const Vector& warm_start = {});

// R(sigma) for the configured penalty (without the indicator).
double regularizer_value(const Vector& sigma, const RegularizerConfig& config, const VertexAdjacency& adj);

// Whether sigma lies in K (box, and the oracle hyperplane when masked).
bool in_feasible_set(const Vector& sigma, const RegularizerConfig& config);

} // namespace eitcs
